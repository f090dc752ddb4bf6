// Copyright 2026 The casat Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// The translation loop: per dialogue, retrieve and rerank plot context,
// look up the current scene's style profile, assemble the prompt and call
// the translation model. Also hosts the offline phase that produces the
// sessions and the context store the loop consumes.

#include <exception>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "casat/context_store.hpp"
#include "casat/corpus.hpp"
#include "casat/dam.hpp"
#include "casat/digest.hpp"
#include "casat/embedding.hpp"
#include "casat/llm_gateway.hpp"
#include "casat/prompts.hpp"
#include "casat/segmentation.hpp"

namespace casat {

enum class Mode { Base, ContextOnly, DamOnly, Casat, WindowContext };

inline std::string_view to_string(Mode m) {
    switch (m) {
    case Mode::Base: return "base";
    case Mode::ContextOnly: return "context-only";
    case Mode::DamOnly: return "dam-only";
    case Mode::Casat: return "casat";
    case Mode::WindowContext: return "window-context";
    }
    return "base";
}

inline Mode mode_from_string(std::string_view s) {
    for (Mode m : {Mode::Base, Mode::ContextOnly, Mode::DamOnly, Mode::Casat, Mode::WindowContext})
        if (s == to_string(m)) return m;
    throw ConfigError("unknown mode '" + std::string(s) + "'");
}

inline bool uses_retrieval(Mode m) { return m == Mode::ContextOnly || m == Mode::Casat; }
inline bool uses_style(Mode m) { return m == Mode::DamOnly || m == Mode::Casat; }

struct RunConfig {
    Mode mode = Mode::Casat;
    std::size_t K = 2;   // sessions per plot window, and DAM history depth
    std::size_t M = 5;   // retrieved chunks
    std::size_t N = 2;   // reranked chunks kept
    SegmentationParams segmentation; // alpha 5, beta 10, k 3
    std::size_t top_k = 10;
    ChunkParams chunks;  // 356 / 64
    std::size_t window_l = 10;
    bool window_past_only = false;
    PlotWindowing plot_windowing = PlotWindowing::Tumbling;
    ClassifierKind classifier = ClassifierKind::Knn;
    bool continue_on_error = false;

    void validate() const {
        if (K < 1) throw ConfigError("K must be >= 1");
        if (N > M) throw ConfigError("N must not exceed M");
        if (uses_retrieval(mode) && N < 1) throw ConfigError("N must be >= 1 in modes that use context");
        if (top_k < 1) throw ConfigError("top_k must be >= 1");
        if (mode == Mode::WindowContext && window_l < 1) throw ConfigError("window_l must be >= 1");
        try {
            segmentation.validate();
            chunks.validate();
        } catch (const InputError &e) {
            throw ConfigError(e.what());
        }
    }
};

// Rendered prompt = instruction, context, style, source, in that order;
// absent sections are empty strings and are skipped when joining.
struct PromptBundle {
    std::string instruction;
    std::string context_section;
    std::string style_section;
    std::string source_line;

    // Everything except the source line; sent as the system message.
    std::string system_text() const { return join_sections({instruction, context_section, style_section}); }
    std::string rendered() const { return join_sections({instruction, context_section, style_section, source_line}); }
    std::string hash() const { return sha256_hex(rendered()); }

  private:
    static std::string join_sections(std::initializer_list<std::string_view> parts) {
        std::string out;
        for (auto p : parts) {
            if (p.empty()) continue;
            if (!out.empty()) out += "\n\n";
            out += p;
        }
        return out;
    }
};

inline std::string render_context(const ContextResult &context) {
    std::string out;
    for (std::size_t i = 0; i < context.chunks.size(); ++i) {
        if (i) out += '\n';
        out += "[" + std::to_string(i + 1) + "] " + context.chunks[i].chunk.text;
    }
    return out;
}

// Source lines around dialogue i: the l/2 before and l/2 after, or the l
// before when past_only. Clipped at the corpus ends.
inline std::string render_window_context(const Corpus &corpus, std::size_t i, std::size_t l, bool past_only) {
    const std::size_t before = past_only ? l : l / 2;
    const std::size_t after = past_only ? 0 : l / 2;
    const std::size_t first = i >= before ? i - before : 0;
    const std::size_t last = std::min(corpus.size(), i + after + 1);
    std::string out;
    for (std::size_t j = first; j < last; ++j) {
        if (j == i) continue;
        if (!out.empty()) out += '\n';
        out += corpus[j].text;
    }
    return out;
}

// context_text is the already-rendered context (retrieved chunks or a
// surrounding-dialogue window); it is ignored in modes without context, as
// style is in modes without style.
inline PromptBundle build_prompt(std::string_view context_text, const dam::StyleProfile *style, const Dialogue &x,
                                 const TemplateSet &templates, Mode mode, std::string_view source_lang,
                                 std::string_view target_lang) {
    const TemplateVars langs = {{"source_lang", language_name(source_lang)}, {"target_lang", language_name(target_lang)}};
    PromptBundle b;
    b.instruction = render(templates.translation, langs, "translation");
    if (uses_retrieval(mode) || mode == Mode::WindowContext) {
        if (context_text.empty() && mode != Mode::WindowContext)
            throw InputError("mode " + std::string(to_string(mode)) + " needs retrieved context");
        if (!context_text.empty()) {
            TemplateVars v = langs;
            v["context"] = std::string(context_text);
            b.context_section = render(templates.context_section, v, "context_section");
        }
    }
    if (uses_style(mode)) {
        if (!style) throw InputError("mode " + std::string(to_string(mode)) + " needs a style profile");
        TemplateVars v = langs;
        v["style"] = dam::render_style(*style);
        b.style_section = render(templates.style_section, v, "style_section");
    }
    TemplateVars v = langs;
    v["source"] = x.text;
    b.source_line = render(templates.source_section, v, "source_section");
    return b;
}

inline PromptBundle build_prompt(const ContextResult &context, const dam::StyleProfile *style, const Dialogue &x,
                                 const TemplateSet &templates, Mode mode, std::string_view source_lang,
                                 std::string_view target_lang) {
    return build_prompt(uses_retrieval(mode) ? render_context(context) : std::string{}, style, x, templates, mode,
                        source_lang, target_lang);
}

struct PipelineResources {
    TemplateSet templates = default_templates();
    dam::StyleResources style;
};

// One dialogue through retrieval, prompt assembly and translation. store
// may be null outside the retrieval modes; style may be null outside the
// style modes.
inline TranslationRecord translate_dialogue(const Corpus &corpus, std::size_t index, std::size_t session_id,
                                            const VectorStore *store, const dam::StyleProfile *style,
                                            const RunConfig &config, llm::Gateway &gateway, Embedder &embedder,
                                            const TemplateSet &templates) {
    const Dialogue &x = corpus[index];
    TranslationRecord rec;
    rec.dialogue_index = index;
    rec.session_id = session_id;
    rec.mode = std::string(to_string(config.mode));
    rec.source = x.text;

    std::string context_text;
    if (uses_retrieval(config.mode)) {
        if (!store) throw InputError("mode " + rec.mode + " needs a context store");
        const ContextResult ctx = rerank(retrieve(*store, x.text, config.M, embedder), x.text, config.N);
        rec.context_chunk_ids = ctx.ids();
        context_text = render_context(ctx);
    } else if (config.mode == Mode::WindowContext) {
        context_text = render_window_context(corpus, index, config.window_l, config.window_past_only);
    }
    const PromptBundle prompt =
        build_prompt(context_text, style, x, templates, config.mode, corpus.source_lang, corpus.target_lang);
    rec.prompt = prompt.rendered();
    rec.prompt_hash = sha256_hex(rec.prompt);
    try {
        rec.output = text::normalize_whitespace(
            gateway.complete(llm::ChatRequest::make(llm::Tag::Translation, prompt.system_text(), prompt.source_line)));
    } catch (const TransportError &e) {
        throw TransportError("dialogue " + std::to_string(index) + ": " + e.what(), e.status());
    }
    if (rec.output.empty()) throw TransportError("dialogue " + std::to_string(index) + ": empty translation", 200);
    return rec;
}

struct OfflineArtifacts {
    std::vector<TonalCategory> labels;
    std::vector<Session> sessions;
    std::vector<Plot> plots;
    std::optional<VectorStore> store;
};

inline std::vector<Session> segment_corpus(const Corpus &corpus, const GenreExemplars &exemplars, const RunConfig &config,
                                           Embedder &embedder, std::vector<TonalCategory> *labels_out = nullptr) {
    auto labels = classify_corpus(corpus, exemplars, config.segmentation.k, embedder, config.classifier);
    auto sessions = segment(labels, config.segmentation);
    if (labels_out) *labels_out = std::move(labels);
    return sessions;
}

inline VectorStore index_corpus(const Corpus &corpus, const std::vector<Session> &sessions, const RunConfig &config,
                                llm::Gateway &gateway, Embedder &embedder, const TemplateSet &templates,
                                std::vector<Plot> *plots_out = nullptr) {
    auto plots = extract_plots(corpus, sessions, config.K, gateway, templates, config.plot_windowing);
    auto store = build_store(plots, embedder, config.chunks, corpus.name);
    if (plots_out) *plots_out = std::move(plots);
    return store;
}

// classify -> segment -> (plots -> store, in retrieval modes).
inline OfflineArtifacts prepare_offline(const Corpus &corpus, const GenreExemplars &exemplars, const RunConfig &config,
                                        llm::Gateway &gateway, Embedder &embedder, const TemplateSet &templates) {
    config.validate();
    corpus.validate();
    OfflineArtifacts art;
    art.sessions = segment_corpus(corpus, exemplars, config, embedder, &art.labels);
    if (uses_retrieval(config.mode))
        art.store = index_corpus(corpus, art.sessions, config, gateway, embedder, templates, &art.plots);
    return art;
}

// The sequential per-dialogue loop. The style profile is rebuilt on entry
// to each session from the outputs of the previous K sessions.
inline std::vector<TranslationRecord> translate_corpus(const Corpus &corpus, const std::vector<Session> &sessions,
                                                       const VectorStore *store, const RunConfig &config,
                                                       llm::Gateway &gateway, Embedder &embedder,
                                                       const PipelineResources &resources) {
    config.validate();
    corpus.validate();
    validate_partition(sessions, corpus.size());
    if (uses_retrieval(config.mode) && (!store || store->empty())) throw InputError("mode needs a non-empty context store");

    std::vector<TranslationRecord> records;
    records.reserve(corpus.size());
    std::vector<std::vector<std::string>> outputs_by_session(sessions.size());
    std::optional<dam::StyleProfile> style;
    std::exception_ptr style_error;

    for (const auto &session : sessions) {
        style.reset();
        style_error = nullptr;
        if (uses_style(config.mode)) {
            std::vector<std::string> history;
            for (std::size_t s = session.id >= config.K ? session.id - config.K : 0; s < session.id; ++s)
                history.insert(history.end(), outputs_by_session[s].begin(), outputs_by_session[s].end());
            std::vector<std::string> current;
            for (std::size_t i = session.start; i < session.end; ++i) current.push_back(corpus[i].text);
            try {
                style = dam::build_style(history, current, resources.style, config.top_k, gateway, resources.templates);
            } catch (const TransportError &e) {
                if (!config.continue_on_error)
                    throw TransportError("session " + std::to_string(session.id) + " style: " + e.what(), e.status());
                style_error = std::current_exception();
            }
        }
        for (std::size_t i = session.start; i < session.end; ++i) {
            try {
                if (style_error) std::rethrow_exception(style_error);
                auto rec = translate_dialogue(corpus, i, session.id, store, style ? &*style : nullptr, config, gateway,
                                              embedder, resources.templates);
                outputs_by_session[session.id].push_back(rec.output);
                records.push_back(std::move(rec));
            } catch (const TransportError &e) {
                if (!config.continue_on_error) throw;
                TranslationRecord failed;
                failed.dialogue_index = i;
                failed.session_id = session.id;
                failed.mode = std::string(to_string(config.mode));
                failed.source = corpus[i].text;
                failed.error = e.what();
                records.push_back(std::move(failed));
            }
        }
    }
    return records;
}

inline std::vector<TranslationRecord> run(const Corpus &corpus, const GenreExemplars &exemplars, const RunConfig &config,
                                          llm::Gateway &gateway, Embedder &embedder, const PipelineResources &resources) {
    const auto art = prepare_offline(corpus, exemplars, config, gateway, embedder, resources.templates);
    return translate_corpus(corpus, art.sessions, art.store ? &*art.store : nullptr, config, gateway, embedder, resources);
}

// Digest over the ordered prompt hashes of a run.
inline std::string run_digest(const std::vector<TranslationRecord> &records) {
    std::string all;
    for (const auto &r : records) all += r.prompt_hash + "\n";
    return sha256_hex(all);
}

} // namespace casat
