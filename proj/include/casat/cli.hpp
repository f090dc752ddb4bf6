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

// Command-line front end. run_cli() is the whole program; tools/casat.cpp
// only forwards argv. Exit codes: 0 success, 2 data error, 64 usage or
// configuration error, 70 backend failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "casat/context_store.hpp"
#include "casat/corpus.hpp"
#include "casat/dam.hpp"
#include "casat/embedding.hpp"
#include "casat/eval.hpp"
#include "casat/llm_gateway.hpp"
#include "casat/pipeline.hpp"
#include "casat/prompts.hpp"
#include "casat/segmentation.hpp"

#ifndef CASAT_RESOURCE_DIR
#define CASAT_RESOURCE_DIR "resources"
#endif

namespace casat::cli {

enum ExitCode : int { kOk = 0, kDataError = 2, kUsage = 64, kBackendFailure = 70 };

struct TaggerSpec {
    std::string endpoint; // empty: baseline lexicon tagger
    http::RetryPolicy retry;
};

struct CliConfig {
    RunConfig run;
    std::string source_lang = "en";
    std::string target_lang = "hi";
    std::string corpus_name = "corpus";
    std::string resources_dir;
    std::string exemplars;     // default <resources>/exemplars_en.jsonl
    std::string lexicons_dir;  // default <resources>/lexicons
    std::string templates_dir; // default <resources>/templates
    std::string audit_log;
    std::uint64_t seed = 0;
    EmbedderSpec embedder;
    llm::BackendSpec llm;
    std::optional<llm::BackendSpec> judge;
    TaggerSpec tagger;

    std::string resources() const {
        if (!resources_dir.empty()) return resources_dir;
        if (const char *env = std::getenv("CASAT_RESOURCES"); env && *env) return env;
        return CASAT_RESOURCE_DIR;
    }
    std::string exemplars_path() const { return exemplars.empty() ? resources() + "/exemplars_en.jsonl" : exemplars; }
    std::string lexicons_path() const { return lexicons_dir.empty() ? resources() + "/lexicons" : lexicons_dir; }
    std::string templates_path() const { return templates_dir.empty() ? resources() + "/templates" : templates_dir; }
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json &obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
    if (!obj.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
    for (const auto &[key, _] : obj.items())
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError("unknown config key '" + std::string(where) + (where.empty() ? "" : ".") + key + "'");
}

template <class T>
void read(const json &obj, const char *key, T &slot) {
    if (!obj.contains(key)) return;
    try {
        const auto &v = obj.at(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError("");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError("");
        } else if constexpr (std::is_unsigned_v<T>) {
            if (!v.is_number_unsigned()) throw ConfigError("");
        } else {
            if (!v.is_number_integer()) throw ConfigError("");
        }
        slot = v.get<T>();
    } catch (const std::exception &) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

inline void read_retry(const json &obj, http::RetryPolicy &retry) {
    if (!obj.contains("retry")) return;
    const auto &r = obj.at("retry");
    reject_unknown(r, "retry", {"attempts", "backoff_ms"});
    read(r, "attempts", retry.attempts);
    read(r, "backoff_ms", retry.backoff_ms);
}

inline llm::BackendSpec read_backend(const json &obj, std::string_view where, llm::BackendSpec spec) {
    reject_unknown(obj, where, {"kind", "endpoint", "model", "auth_env", "max_concurrency", "retry", "timeout_ms"});
    std::string kind = spec.kind == llm::BackendKind::Mock ? "mock" : "http-chat";
    read(obj, "kind", kind);
    if (kind == "mock") spec.kind = llm::BackendKind::Mock;
    else if (kind == "http-chat") spec.kind = llm::BackendKind::HttpChat;
    else throw ConfigError("unknown backend kind '" + kind + "'");
    read(obj, "endpoint", spec.endpoint);
    read(obj, "model", spec.model);
    read(obj, "auth_env", spec.auth_env);
    read(obj, "max_concurrency", spec.max_concurrency);
    read(obj, "timeout_ms", spec.timeout_ms);
    read_retry(obj, spec.retry);
    return spec;
}

} // namespace detail

// Applies a JSON config document on top of cfg. Unknown keys and wrong
// types are rejected.
inline void apply_config_json(const nlohmann::json &j, CliConfig &cfg) {
    using detail::read;
    detail::reject_unknown(j, "", {"mode", "K", "M", "N", "alpha", "beta", "k", "top_k", "chunk_size", "chunk_overlap",
                                   "window_l", "window_past_only", "plot_windowing", "classifier", "continue_on_error",
                                   "seed", "source_lang", "target_lang", "corpus_name", "resources_dir", "exemplars",
                                   "lexicons_dir", "templates_dir", "audit_log", "embedder", "llm", "judge", "tagger"});
    auto &run = cfg.run;
    if (j.contains("mode")) {
        std::string m;
        read(j, "mode", m);
        run.mode = mode_from_string(m);
    }
    read(j, "K", run.K);
    read(j, "M", run.M);
    read(j, "N", run.N);
    read(j, "alpha", run.segmentation.alpha);
    read(j, "beta", run.segmentation.beta);
    read(j, "k", run.segmentation.k);
    read(j, "top_k", run.top_k);
    read(j, "chunk_size", run.chunks.chunk_size);
    read(j, "chunk_overlap", run.chunks.overlap);
    read(j, "window_l", run.window_l);
    read(j, "window_past_only", run.window_past_only);
    read(j, "continue_on_error", run.continue_on_error);
    if (j.contains("plot_windowing")) {
        std::string w;
        read(j, "plot_windowing", w);
        if (w == "tumbling") run.plot_windowing = PlotWindowing::Tumbling;
        else if (w == "sliding") run.plot_windowing = PlotWindowing::Sliding;
        else throw ConfigError("plot_windowing must be 'tumbling' or 'sliding'");
    }
    if (j.contains("classifier")) {
        std::string c;
        read(j, "classifier", c);
        if (c == "knn") run.classifier = ClassifierKind::Knn;
        else if (c == "centroid") run.classifier = ClassifierKind::Centroid;
        else throw ConfigError("classifier must be 'knn' or 'centroid'");
    }
    read(j, "seed", cfg.seed);
    read(j, "source_lang", cfg.source_lang);
    read(j, "target_lang", cfg.target_lang);
    read(j, "corpus_name", cfg.corpus_name);
    read(j, "resources_dir", cfg.resources_dir);
    read(j, "exemplars", cfg.exemplars);
    read(j, "lexicons_dir", cfg.lexicons_dir);
    read(j, "templates_dir", cfg.templates_dir);
    read(j, "audit_log", cfg.audit_log);
    if (j.contains("embedder")) {
        const auto &e = j.at("embedder");
        detail::reject_unknown(e, "embedder",
                               {"backend", "dimension", "endpoint", "auth_env", "max_concurrency", "retry", "timeout_ms"});
        read(e, "backend", cfg.embedder.backend_id);
        read(e, "dimension", cfg.embedder.dimension);
        read(e, "endpoint", cfg.embedder.endpoint);
        read(e, "auth_env", cfg.embedder.auth_env);
        read(e, "max_concurrency", cfg.embedder.max_concurrency);
        read(e, "timeout_ms", cfg.embedder.timeout_ms);
        detail::read_retry(e, cfg.embedder.retry);
    }
    if (j.contains("llm")) cfg.llm = detail::read_backend(j.at("llm"), "llm", cfg.llm);
    if (j.contains("judge")) cfg.judge = detail::read_backend(j.at("judge"), "judge", cfg.judge.value_or(cfg.llm));
    if (j.contains("tagger")) {
        const auto &t = j.at("tagger");
        detail::reject_unknown(t, "tagger", {"endpoint", "retry"});
        read(t, "endpoint", cfg.tagger.endpoint);
        detail::read_retry(t, cfg.tagger.retry);
    }
}

inline void validate(const CliConfig &cfg) {
    cfg.run.validate();
    if (!is_valid_language_tag(cfg.source_lang)) throw ConfigError("invalid source_lang '" + cfg.source_lang + "'");
    if (!is_valid_language_tag(cfg.target_lang)) throw ConfigError("invalid target_lang '" + cfg.target_lang + "'");
    cfg.embedder.validate();
    cfg.llm.validate();
    if (cfg.judge) cfg.judge->validate();
}

// Option values captured from the command line; applied last.
struct Overrides {
    std::string config_path;
    std::string mode;
    std::size_t K = 0, M = 0, N = 0, alpha = 0, beta = 0, k = 0, top_k = 0, chunk_size = 0, chunk_overlap = 0, window_l = 0;
    bool past_only = false;
    std::uint64_t seed = 0;
    std::string source_lang, target_lang, resources;
    bool continue_on_error = false;
};

class Program {
  public:
    Program(std::ostream &out, std::ostream &err) : out_(out), err_(err) {}

    int run(std::vector<std::string> args);

  private:
    void add_common(CLI::App *cmd);
    CliConfig resolve(CLI::App *cmd) const;

    int cmd_ingest();
    int cmd_segment(const CliConfig &cfg);
    int cmd_index(const CliConfig &cfg);
    int cmd_translate(const CliConfig &cfg);
    int cmd_evaluate(const CliConfig &cfg);
    int cmd_sweep_k(const CliConfig &cfg);

    Corpus load_corpus(const CliConfig &cfg, const std::string &path) const {
        return parse_jsonl(read_file(path), {cfg.corpus_name, cfg.source_lang, cfg.target_lang});
    }
    std::vector<Session> load_or_segment(const CliConfig &cfg, const Corpus &corpus, Embedder &embedder) const;
    std::unique_ptr<llm::Gateway> make_gateway(const llm::BackendSpec &spec, const CliConfig &cfg) const {
        auto gw = std::make_unique<llm::Gateway>(llm::make_backend(spec), spec.max_concurrency);
        if (!cfg.audit_log.empty()) gw->enable_audit_log(cfg.audit_log);
        return gw;
    }
    PipelineResources load_resources(const CliConfig &cfg) const;
    void require_writable_target(const std::string &path) const {
        if (std::filesystem::exists(path) && !force_)
            throw ConfigError("'" + path + "' exists; pass --force to overwrite");
    }

    std::ostream &out_;
    std::ostream &err_;
    Overrides ov_;
    std::string input_, format_ = "jsonl", output_, corpus_, sessions_, store_, plots_out_, labels_out_;
    std::vector<std::string> records_;
    std::string baseline_, references_, report_json_, report_md_, mds_csv_, external_scorer_, out_dir_;
    std::size_t mds_limit_ = 200;
    std::vector<std::size_t> k_values_;
    bool force_ = false;
};

inline void Program::add_common(CLI::App *cmd) {
    cmd->add_option("--config", ov_.config_path, "JSON config file (CLI flags take precedence)")->check(CLI::ExistingFile);
    cmd->add_option("--mode", ov_.mode, "base | context-only | dam-only | casat | window-context (default casat)");
    cmd->add_option("--K", ov_.K, "sessions per plot window and DAM history depth (default 2)");
    cmd->add_option("--M", ov_.M, "chunks retrieved per dialogue (default 5)");
    cmd->add_option("--N", ov_.N, "chunks kept after reranking (default 2)");
    cmd->add_option("--alpha", ov_.alpha, "minimum run before a new session opens (default 5)");
    cmd->add_option("--beta", ov_.beta, "maximum session length (default 10)");
    cmd->add_option("--k", ov_.k, "neighbours for genre k-NN (default 3)");
    cmd->add_option("--top-k", ov_.top_k, "entries per style word list (default 10)");
    cmd->add_option("--chunk-size", ov_.chunk_size, "plot chunk size in tokens (default 356)");
    cmd->add_option("--chunk-overlap", ov_.chunk_overlap, "plot chunk overlap in tokens (default 64)");
    cmd->add_option("--window-l", ov_.window_l, "surrounding dialogues in window-context mode (default 10)");
    cmd->add_flag("--past-only", ov_.past_only, "window-context uses only the previous l dialogues");
    cmd->add_option("--seed", ov_.seed, "seed for randomized steps (judge presentation order)");
    cmd->add_option("--source-lang", ov_.source_lang, "source language tag (default en)");
    cmd->add_option("--target-lang", ov_.target_lang, "target language tag (default hi)");
    cmd->add_option("--resources", ov_.resources, "resource directory (exemplars, lexicons, templates)");
    cmd->add_flag("--continue-on-error", ov_.continue_on_error, "record per-dialogue failures and keep going");
}

inline CliConfig Program::resolve(CLI::App *cmd) const {
    CliConfig cfg;
    if (!ov_.config_path.empty()) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(ov_.config_path));
        } catch (const nlohmann::json::parse_error &e) {
            throw ConfigError(std::string("config file is not valid JSON: ") + e.what());
        }
        apply_config_json(j, cfg);
    }
    auto set = [&](const char *flag, auto value, auto &slot) {
        if (cmd->count(flag)) slot = value;
    };
    if (cmd->count("--mode")) cfg.run.mode = mode_from_string(ov_.mode);
    set("--K", ov_.K, cfg.run.K);
    set("--M", ov_.M, cfg.run.M);
    set("--N", ov_.N, cfg.run.N);
    set("--alpha", ov_.alpha, cfg.run.segmentation.alpha);
    set("--beta", ov_.beta, cfg.run.segmentation.beta);
    set("--k", ov_.k, cfg.run.segmentation.k);
    set("--top-k", ov_.top_k, cfg.run.top_k);
    set("--chunk-size", ov_.chunk_size, cfg.run.chunks.chunk_size);
    set("--chunk-overlap", ov_.chunk_overlap, cfg.run.chunks.overlap);
    set("--window-l", ov_.window_l, cfg.run.window_l);
    set("--past-only", ov_.past_only, cfg.run.window_past_only);
    set("--continue-on-error", ov_.continue_on_error, cfg.run.continue_on_error);
    set("--seed", ov_.seed, cfg.seed);
    set("--source-lang", ov_.source_lang, cfg.source_lang);
    set("--target-lang", ov_.target_lang, cfg.target_lang);
    set("--resources", ov_.resources, cfg.resources_dir);
    validate(cfg);
    return cfg;
}

inline PipelineResources Program::load_resources(const CliConfig &cfg) const {
    PipelineResources res;
    res.templates = load_templates(cfg.templates_path());
    const auto src = dam::load_language_resources(cfg.lexicons_path(), cfg.source_lang);
    const auto tgt = dam::load_language_resources(cfg.lexicons_path(), cfg.target_lang);
    res.style = dam::StyleResources::from(src, tgt);
    if (!cfg.tagger.endpoint.empty()) {
        auto t = std::make_shared<dam::HttpTagger>(cfg.tagger.endpoint, std::make_shared<http::HttplibTransport>(),
                                                   cfg.tagger.retry);
        res.style.source_tagger = t;
        res.style.target_tagger = t;
    }
    return res;
}

inline std::vector<Session> Program::load_or_segment(const CliConfig &cfg, const Corpus &corpus, Embedder &embedder) const {
    if (!sessions_.empty()) {
        auto sessions = parse_sessions_jsonl(read_file(sessions_));
        try {
            validate_partition(sessions, corpus.size());
        } catch (const InputError &e) {
            throw ParseError(std::string("sessions file does not match the corpus: ") + e.what());
        }
        return sessions;
    }
    const auto exemplars = embed_exemplars(parse_exemplars_jsonl(read_file(cfg.exemplars_path())), embedder);
    return segment_corpus(corpus, exemplars, cfg.run, embedder);
}

inline int Program::cmd_ingest() {
    const std::string raw = read_file(input_);
    const Corpus corpus = format_ == "srt" ? parse_srt(raw) : parse_jsonl(raw);
    write_file(output_, to_jsonl(corpus));
    out_ << "ingested " << corpus.size() << " dialogues\n";
    return kOk;
}

inline int Program::cmd_segment(const CliConfig &cfg) {
    const Corpus corpus = load_corpus(cfg, corpus_);
    auto embedder = make_embedder(cfg.embedder);
    const auto exemplars = embed_exemplars(parse_exemplars_jsonl(read_file(cfg.exemplars_path())), *embedder);
    std::vector<TonalCategory> labels;
    const auto sessions = segment_corpus(corpus, exemplars, cfg.run, *embedder, &labels);
    write_file(output_, sessions_to_jsonl(sessions));
    if (!labels_out_.empty()) {
        std::string lines;
        for (std::size_t i = 0; i < labels.size(); ++i)
            lines += nlohmann::ordered_json{{"index", i}, {"label", to_string(labels[i])}}.dump() + "\n";
        write_file(labels_out_, lines);
    }
    std::array<std::size_t, 3> hist{};
    for (const auto &s : sessions) ++hist[static_cast<std::size_t>(s.genre)];
    out_ << "segmented " << corpus.size() << " dialogues into " << sessions.size() << " sessions\n";
    for (auto c : kTonalCategories) out_ << "  " << to_string(c) << ": " << hist[static_cast<std::size_t>(c)] << "\n";
    return kOk;
}

inline int Program::cmd_index(const CliConfig &cfg) {
    if (sessions_.empty()) throw InputError("index needs a sessions file (--sessions)");
    require_writable_target(output_);
    const Corpus corpus = load_corpus(cfg, corpus_);
    auto embedder = make_embedder(cfg.embedder);
    const auto sessions = load_or_segment(cfg, corpus, *embedder);
    auto gateway = make_gateway(cfg.llm, cfg);
    const auto res = load_resources(cfg);
    std::vector<Plot> plots;
    const VectorStore store = index_corpus(corpus, sessions, cfg.run, *gateway, *embedder, res.templates, &plots);
    save_store(store, output_);
    if (!plots_out_.empty()) write_file(plots_out_, plots_to_jsonl(plots));
    out_ << "indexed " << plots.size() << " plots into " << store.size() << " chunks\n";
    return kOk;
}

inline int Program::cmd_translate(const CliConfig &cfg) {
    const Corpus corpus = load_corpus(cfg, corpus_);
    auto embedder = make_embedder(cfg.embedder);
    std::optional<VectorStore> store;
    if (uses_retrieval(cfg.run.mode)) {
        if (store_.empty()) throw ConfigError("mode " + std::string(to_string(cfg.run.mode)) + " needs --store");
        auto loaded = load_store(store_, embedder->id());
        for (const auto &w : loaded.warnings) err_ << "warning: " << w << "\n";
        store = std::move(loaded.store);
    }
    const auto sessions = load_or_segment(cfg, corpus, *embedder);
    auto gateway = make_gateway(cfg.llm, cfg);
    const auto res = load_resources(cfg);
    const auto records = translate_corpus(corpus, sessions, store ? &*store : nullptr, cfg.run, *gateway, *embedder, res);
    write_records(records, output_);
    std::size_t failed = 0;
    for (const auto &r : records) failed += r.error.has_value();
    out_ << "translated " << records.size() - failed << " of " << records.size() << " dialogues, mode "
         << to_string(cfg.run.mode) << ", prompt digest " << run_digest(records) << "\n";
    return kOk;
}

inline int Program::cmd_evaluate(const CliConfig &cfg) {
    const Corpus refs = load_corpus(cfg, references_);
    for (const auto &d : refs.dialogues)
        if (!d.reference) throw ParseError("references file has no reference for dialogue " + std::to_string(d.index));
    auto embedder = make_embedder(cfg.embedder);
    const auto res = load_resources(cfg);

    std::vector<std::pair<std::string, std::vector<TranslationRecord>>> systems;
    if (!baseline_.empty()) systems.emplace_back("baseline", read_records(baseline_));
    for (const auto &path : records_) systems.emplace_back(std::filesystem::path(path).stem().string(), read_records(path));
    if (!baseline_.empty() && systems.size() == 2 && systems[1].first == "baseline") systems[1].first = "candidate";

    std::optional<eval::ExternalScorer> scorer;
    if (!external_scorer_.empty()) scorer = eval::command_scorer(external_scorer_);

    auto ok_indices = [&](const std::vector<TranslationRecord> &recs) {
        std::map<std::size_t, const TranslationRecord *> m;
        for (const auto &r : recs) {
            if (r.dialogue_index >= refs.size()) throw ParseError("record index beyond the references file");
            if (!r.error && !r.output.empty()) m[r.dialogue_index] = &r;
        }
        return m;
    };

    eval::MetricReport report;
    std::vector<std::map<std::size_t, const TranslationRecord *>> by_index;
    for (const auto &[name, recs] : systems) {
        const auto m = ok_indices(recs);
        by_index.push_back(m);
        if (m.empty()) throw ParseError("records file for '" + name + "' has no successful translations");
        std::vector<std::string> hyp, ref, src;
        for (const auto &[i, r] : m) {
            hyp.push_back(r->output);
            ref.push_back(*refs[i].reference);
            src.push_back(refs[i].text);
        }
        eval::SystemMetrics sm;
        sm.name = name;
        sm.n = hyp.size();
        sm.bleu = eval::bleu(hyp, ref);
        sm.embedding_distance = eval::embedding_distance_report(hyp, ref, *embedder);
        if (scorer) sm.external_score = eval::mean_std((*scorer)(src, hyp, ref)).mean;
        report.systems.push_back(std::move(sm));
    }

    if (!baseline_.empty()) {
        auto judge_gw = make_gateway(cfg.judge.value_or(cfg.llm), cfg);
        for (std::size_t s = 1; s < systems.size(); ++s) {
            std::vector<std::string> src, cand, base;
            for (const auto &[i, r] : by_index[s]) {
                const auto b = by_index[0].find(i);
                if (b == by_index[0].end()) continue;
                src.push_back(refs[i].text);
                cand.push_back(r->output);
                base.push_back(b->second->output);
            }
            if (src.empty()) throw ParseError("candidate and baseline share no successful dialogues");
            eval::JudgeOptions opt;
            opt.seed = cfg.seed;
            opt.source_lang = cfg.source_lang;
            opt.target_lang = cfg.target_lang;
            const auto judgments = eval::judge_pairs(src, cand, base, *judge_gw, res.templates, opt);
            auto &sm = report.systems[s];
            sm.win_ratio = eval::win_ratio(judgments);
            for (const auto &j : judgments) {
                sm.wins += j.winner == eval::Winner::Candidate;
                sm.losses += j.winner == eval::Winner::Baseline;
                sm.ties += j.winner == eval::Winner::Tie;
            }
        }
    }

    const std::string md = eval::to_markdown(report);
    if (!report_json_.empty()) write_file(report_json_, eval::to_json(report).dump(2) + "\n");
    if (!report_md_.empty()) write_file(report_md_, md);
    if (!mds_csv_.empty()) {
        // Points: each system's outputs plus the references, over the first mds_limit dialogues.
        std::vector<std::string> labels, texts;
        std::vector<std::size_t> idx;
        for (std::size_t s = 0; s < systems.size(); ++s)
            for (const auto &[i, r] : by_index[s])
                if (i < mds_limit_) {
                    labels.push_back(systems[s].first);
                    idx.push_back(i);
                    texts.push_back(r->output);
                }
        for (std::size_t i = 0; i < std::min(mds_limit_, refs.size()); ++i) {
            labels.push_back("reference");
            idx.push_back(i);
            texts.push_back(*refs[i].reference);
        }
        const auto vecs = embedder->embed_batch(texts);
        eval::Matrix pts;
        for (const auto &v : vecs) pts.emplace_back(v.values().begin(), v.values().end());
        write_file(mds_csv_, eval::mds_to_csv(labels, idx, eval::classical_mds(eval::pairwise_euclidean(pts), 2)));
    }
    out_ << md;
    return kOk;
}

inline int Program::cmd_sweep_k(const CliConfig &cfg) {
    namespace fs = std::filesystem;
    if (k_values_.empty()) k_values_ = {1, 2, 3, 4};
    const Corpus corpus = load_corpus(cfg, corpus_);
    auto embedder = make_embedder(cfg.embedder);
    const auto sessions = load_or_segment(cfg, corpus, *embedder);
    auto gateway = make_gateway(cfg.llm, cfg);
    const auto res = load_resources(cfg);
    std::optional<eval::ExternalScorer> scorer;
    if (!external_scorer_.empty()) scorer = eval::command_scorer(external_scorer_);
    bool have_refs = true;
    for (const auto &d : corpus.dialogues) have_refs &= d.reference.has_value();

    fs::create_directories(out_dir_);
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    std::string md = std::string("| K | chunks | B. |") + (scorer ? " C. |" : "") + " prompt digest |\n|---|---|---|" +
                     (scorer ? "---|" : "") + "---|\n";
    for (std::size_t K : k_values_) {
        RunConfig run = cfg.run;
        run.K = K;
        run.validate();
        const auto dir = fs::path(out_dir_) / ("K" + std::to_string(K));
        fs::create_directories(dir);
        std::optional<VectorStore> store;
        if (uses_retrieval(run.mode)) {
            std::vector<Plot> plots;
            store = index_corpus(corpus, sessions, run, *gateway, *embedder, res.templates, &plots);
            save_store(*store, (dir / "store.bin").string());
            write_file((dir / "plots.jsonl").string(), plots_to_jsonl(plots));
        }
        const auto records = translate_corpus(corpus, sessions, store ? &*store : nullptr, run, *gateway, *embedder, res);
        write_records(records, (dir / "records.jsonl").string());

        nlohmann::ordered_json row;
        row["K"] = K;
        row["chunks"] = store ? store->size() : 0;
        std::string bleu_cell = "-", ext_cell = "-";
        if (have_refs) {
            std::vector<std::string> hyp, ref, src;
            for (const auto &r : records)
                if (!r.error) {
                    hyp.push_back(r.output);
                    ref.push_back(*corpus[r.dialogue_index].reference);
                    src.push_back(r.source);
                }
            if (!hyp.empty()) {
                const double b = eval::bleu(hyp, ref);
                row["bleu"] = b;
                bleu_cell = eval::format_fixed(b, 2);
                if (scorer) {
                    const double c = eval::mean_std((*scorer)(src, hyp, ref)).mean;
                    row["external_score"] = c;
                    ext_cell = eval::format_fixed(c, 4);
                }
            }
        }
        row["prompt_digest"] = run_digest(records);
        md += "| " + std::to_string(K) + " | " + std::to_string(store ? store->size() : 0) + " | " + bleu_cell + " |" +
              (scorer ? " " + ext_cell + " |" : "") + " " + run_digest(records).substr(0, 12) + " |\n";
        rows.push_back(std::move(row));
    }
    write_file((fs::path(out_dir_) / "sweep.json").string(), nlohmann::ordered_json{{"rows", rows}}.dump(2) + "\n");
    write_file((fs::path(out_dir_) / "sweep.md").string(), md);
    out_ << md;
    return kOk;
}

inline constexpr const char *kDefaultsFooter =
    "Defaults (reference hyper-parameter settings): K=2, M=5, N=2, chunk size 356, chunk overlap 64,\n"
    "alpha=5, beta=10, k=3; LLM temperature 0.5 for plot design, 0.2 for emotion and translation.\n"
    "Exit codes: 0 ok, 2 data error, 64 usage/config error, 70 backend failure.";

inline int Program::run(std::vector<std::string> args) {
    CLI::App app{"Context- and style-aware dialogue translation"};
    app.footer(kDefaultsFooter);
    app.require_subcommand(1);

    auto *ingest = app.add_subcommand("ingest", "parse SRT or JSONL into a normalized corpus JSONL");
    ingest->add_option("--input", input_, "input file")->required()->check(CLI::ExistingFile);
    ingest->add_option("--format", format_, "srt | jsonl")->required()->check(CLI::IsMember({"srt", "jsonl"}));
    ingest->add_option("--output", output_, "corpus JSONL to write")->required();

    auto *seg = app.add_subcommand("segment", "classify dialogues and group them into sessions");
    add_common(seg);
    seg->add_option("--corpus", corpus_, "corpus JSONL")->required();
    seg->add_option("--output", output_, "sessions JSONL to write")->required();
    seg->add_option("--labels-output", labels_out_, "optional per-dialogue label JSONL");

    auto *index = app.add_subcommand("index", "extract plots and build the context store");
    add_common(index);
    index->add_option("--corpus", corpus_, "corpus JSONL")->required();
    index->add_option("--sessions", sessions_, "sessions JSONL from `segment`");
    index->add_option("--output", output_, "store file to write")->required();
    index->add_option("--plots-output", plots_out_, "optional plot cache JSONL");
    index->add_flag("--force", force_, "overwrite an existing store");

    auto *translate = app.add_subcommand("translate", "translate a corpus in the configured mode");
    add_common(translate);
    translate->add_option("--corpus", corpus_, "corpus JSONL")->required();
    translate->add_option("--store", store_, "store file (context-only and casat modes)");
    translate->add_option("--sessions", sessions_, "sessions JSONL (segmented on the fly when absent)");
    translate->add_option("--output", output_, "records JSONL to write")->required();

    auto *evaluate = app.add_subcommand("evaluate", "BLEU, embedding distance and judged win ratio");
    add_common(evaluate);
    evaluate->add_option("--records", records_, "candidate records JSONL (repeatable)")->required();
    evaluate->add_option("--baseline", baseline_, "baseline records JSONL; enables the pairwise judge");
    evaluate->add_option("--references", references_, "corpus JSONL carrying a reference per dialogue")->required();
    evaluate->add_option("--report-json", report_json_, "write the report as JSON");
    evaluate->add_option("--report-md", report_md_, "write the report as a Markdown table");
    evaluate->add_option("--mds-csv", mds_csv_, "write 2-D MDS coordinates of outputs and references");
    evaluate->add_option("--mds-limit", mds_limit_, "dialogues included in the MDS projection (default 200)");
    evaluate->add_option("--external-scorer", external_scorer_, "command reading {src,mt,ref} JSONL on stdin, one score per line out");

    auto *sweep = app.add_subcommand("sweep-k", "rerun index + translate for several K values");
    add_common(sweep);
    sweep->add_option("--corpus", corpus_, "corpus JSONL")->required();
    sweep->add_option("--sessions", sessions_, "sessions JSONL (segmented on the fly when absent)");
    sweep->add_option("--k-values", k_values_, "K values (default 1 2 3 4)")->delimiter(',');
    sweep->add_option("--output-dir", out_dir_, "directory receiving one K<n>/ subdirectory per value")->required();
    sweep->add_option("--external-scorer", external_scorer_, "optional per-pair scorer command");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp &) {
        out_ << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp &) {
        out_ << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError &e) {
        err_ << "usage error: " << e.what() << "\n";
        for (auto *sub : app.get_subcommands())
            if (sub->parsed()) err_ << sub->help();
        return kUsage;
    }

    try {
        if (ingest->parsed()) return cmd_ingest();
        if (seg->parsed()) return cmd_segment(resolve(seg));
        if (index->parsed()) return cmd_index(resolve(index));
        if (translate->parsed()) return cmd_translate(resolve(translate));
        if (evaluate->parsed()) return cmd_evaluate(resolve(evaluate));
        if (sweep->parsed()) return cmd_sweep_k(resolve(sweep));
    } catch (const ConfigError &e) {
        err_ << "configuration error: " << e.what() << "\n";
        return kUsage;
    } catch (const TransportError &e) {
        err_ << "backend failure: " << e.what() << "\n";
        return kBackendFailure;
    } catch (const Error &e) {
        err_ << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::filesystem::filesystem_error &e) {
        err_ << "error: " << e.what() << "\n";
        return kDataError;
    }
    return kUsage;
}

// args excludes the program name.
inline int run_cli(const std::vector<std::string> &args, std::ostream &out = std::cout, std::ostream &err = std::cerr) {
    Program program(out, err);
    return program.run(args);
}

} // namespace casat::cli
