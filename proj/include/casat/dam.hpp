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

// Style extraction: part-of-speech tagging and the counting subroutines that
// fill the eight-field style profile of the current scene.

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <tuple>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "casat/corpus.hpp"
#include "casat/error.hpp"
#include "casat/http.hpp"
#include "casat/llm_gateway.hpp"
#include "casat/prompts.hpp"
#include "casat/text.hpp"

namespace casat::dam {

enum class PosTag { Noun, Verb, Adjective, Adverb, Pronoun, Preposition, Conjunction, Determiner, Particle, Other };

inline constexpr std::string_view kPosTagNames[] = {"noun",        "verb",        "adjective",  "adverb",   "pronoun",
                                                    "preposition", "conjunction", "determiner", "particle", "other"};

inline std::string_view to_string(PosTag t) { return kPosTagNames[static_cast<std::size_t>(t)]; }

inline PosTag pos_tag_from_string(std::string_view s) {
    const std::string f = text::fold_case(s);
    for (std::size_t i = 0; i < std::size(kPosTagNames); ++i)
        if (f == kPosTagNames[i]) return static_cast<PosTag>(i);
    throw InputError("unknown part-of-speech tag '" + std::string(s) + "'");
}

struct TaggedToken {
    std::string token;
    PosTag tag = PosTag::Other;
    bool operator==(const TaggedToken &) const = default;
};

struct SuffixRule {
    std::string suffix;
    PosTag tag;
    std::size_t min_stem = 2; // code points that must remain before the suffix
};

struct TaggerLexicon {
    std::map<std::string, PosTag, std::less<>> closed_class; // case-folded word -> tag
    std::vector<SuffixRule> suffix_rules;                    // tried in order
    PosTag fallback = PosTag::Noun;
};

struct StyleLexicons {
    std::set<std::string, std::less<>> modal_words;   // case-folded
    std::vector<std::vector<std::string>> idioms;      // normalized token sequences
    std::set<PosTag> content_tags{PosTag::Noun, PosTag::Verb, PosTag::Adjective, PosTag::Adverb};
    std::set<PosTag> function_tags{PosTag::Pronoun, PosTag::Preposition, PosTag::Conjunction, PosTag::Determiner,
                                   PosTag::Particle};

    void validate() const {
        for (auto t : content_tags)
            if (function_tags.count(t)) throw ConfigError("content and function tag sets overlap on '" + std::string(to_string(t)) + "'");
    }
};

// Word normalization shared by every counter: strip edge punctuation, fold ASCII case.
inline std::string normalize_word(std::string_view token) { return text::fold_case(text::strip_edge_punct(token)); }

inline std::vector<std::string> normalized_words(std::string_view sentence) {
    std::vector<std::string> out;
    for (const auto &tok : text::split_whitespace(sentence)) {
        auto w = normalize_word(tok);
        if (!w.empty()) out.push_back(std::move(w));
    }
    return out;
}

class Tagger {
  public:
    virtual ~Tagger() = default;
    virtual std::vector<TaggedToken> tag(std::string_view sentence) = 0;
};

// Closed-class lookup, then the first matching suffix rule, then the fallback tag.
// Punctuation-only and numeric tokens are tagged Other.
class BaselineTagger : public Tagger {
  public:
    explicit BaselineTagger(TaggerLexicon lexicon) : lex_(std::move(lexicon)) {}

    std::vector<TaggedToken> tag(std::string_view sentence) override {
        std::vector<TaggedToken> out;
        for (const auto &tok : text::split_whitespace(sentence)) {
            std::string surface = text::strip_edge_punct(tok);
            if (surface.empty()) {
                out.push_back({tok, PosTag::Other});
                continue;
            }
            out.push_back({surface, tag_word(text::fold_case(surface))});
        }
        return out;
    }

    PosTag tag_word(const std::string &key) const {
        if (const auto it = lex_.closed_class.find(key); it != lex_.closed_class.end()) return it->second;
        if (detail::all_digits(key)) return PosTag::Other;
        const std::size_t len = text::codepoint_count(key);
        for (const auto &rule : lex_.suffix_rules) {
            if (key.size() <= rule.suffix.size() || key.compare(key.size() - rule.suffix.size(), rule.suffix.size(), rule.suffix) != 0)
                continue;
            if (len - text::codepoint_count(rule.suffix) >= rule.min_stem) return rule.tag;
        }
        return lex_.fallback;
    }

  private:
    TaggerLexicon lex_;
};

// Remote tagger: POST {"text": ...} -> {"tokens": [{"token": ..., "tag": ...}]}.
class HttpTagger : public Tagger {
  public:
    HttpTagger(std::string endpoint, std::shared_ptr<http::Transport> transport, http::RetryPolicy retry = {},
               http::Sleeper sleep = http::real_sleeper())
        : endpoint_(std::move(endpoint)), transport_(std::move(transport)), retry_(retry), sleep_(std::move(sleep)) {
        http::split_url(endpoint_);
    }

    std::vector<TaggedToken> tag(std::string_view sentence) override {
        const nlohmann::json body = {{"text", std::string(sentence)}};
        const std::string raw = http::post_with_retry(*transport_, endpoint_, body.dump(), {}, retry_, sleep_);
        std::vector<TaggedToken> out;
        try {
            const auto reply = nlohmann::json::parse(raw);
            for (const auto &t : reply.at("tokens"))
                out.push_back({t.at("token").get<std::string>(), pos_tag_from_string(t.at("tag").get<std::string>())});
        } catch (const nlohmann::json::exception &e) {
            throw TransportError(std::string("malformed tagger response: ") + e.what(), 200);
        } catch (const InputError &e) {
            throw TransportError(std::string("malformed tagger response: ") + e.what(), 200);
        }
        return out;
    }

  private:
    std::string endpoint_;
    std::shared_ptr<http::Transport> transport_;
    http::RetryPolicy retry_;
    http::Sleeper sleep_;
};

inline std::vector<TaggedToken> pos_tag(std::string_view sentence, Tagger &tagger) {
    if (text::normalize_whitespace(sentence).empty()) throw InputError("cannot tag empty text");
    return tagger.tag(sentence);
}

// Tagger lexicon plus style lexicons for one language.
struct LanguageResources {
    std::string language;
    TaggerLexicon tagger_lexicon;
    StyleLexicons style;
};

inline LanguageResources parse_language_resources(std::string_view raw) {
    LanguageResources res;
    try {
        const auto j = nlohmann::json::parse(raw);
        res.language = j.value("language", std::string{});
        if (j.contains("closed_class"))
            for (const auto &[tag_name, words] : j.at("closed_class").items()) {
                const PosTag tag = pos_tag_from_string(tag_name);
                for (const auto &w : words) res.tagger_lexicon.closed_class[normalize_word(w.get<std::string>())] = tag;
            }
        if (j.contains("suffix_rules"))
            for (const auto &r : j.at("suffix_rules"))
                res.tagger_lexicon.suffix_rules.push_back({text::fold_case(r.at("suffix").get<std::string>()),
                                                           pos_tag_from_string(r.at("tag").get<std::string>()),
                                                           r.value("min_stem", std::size_t{2})});
        if (j.contains("fallback_tag")) res.tagger_lexicon.fallback = pos_tag_from_string(j.at("fallback_tag").get<std::string>());
        if (j.contains("modal_words"))
            for (const auto &w : j.at("modal_words")) res.style.modal_words.insert(normalize_word(w.get<std::string>()));
        if (j.contains("idioms"))
            for (const auto &p : j.at("idioms")) {
                auto toks = normalized_words(p.get<std::string>());
                if (!toks.empty()) res.style.idioms.push_back(std::move(toks));
            }
        auto tag_set = [&](const char *key, std::set<PosTag> &slot) {
            if (!j.contains(key)) return;
            slot.clear();
            for (const auto &t : j.at(key)) slot.insert(pos_tag_from_string(t.get<std::string>()));
        };
        tag_set("content_tags", res.style.content_tags);
        tag_set("function_tags", res.style.function_tags);
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(std::string("bad lexicon file: ") + e.what());
    } catch (const InputError &e) {
        throw ParseError(std::string("bad lexicon file: ") + e.what());
    }
    res.style.validate();
    return res;
}

// Loads <dir>/<primary-subtag>.json; a language without a file gets empty
// lexicons (every word falls back to Noun).
inline LanguageResources load_language_resources(const std::string &dir, std::string_view language_tag) {
    const std::string primary = text::fold_case(language_tag.substr(0, language_tag.find('-')));
    const auto path = std::filesystem::path(dir) / (primary + ".json");
    if (!std::filesystem::exists(path)) {
        LanguageResources empty;
        empty.language = primary;
        return empty;
    }
    auto res = parse_language_resources(read_file(path.string()));
    if (res.language.empty()) res.language = primary;
    return res;
}

using WordCounts = std::vector<std::pair<std::string, std::size_t>>;

// Descending count, then lexicographic; at most top_k entries.
inline WordCounts top_k_counts(const std::map<std::string, std::size_t, std::less<>> &counts, std::size_t top_k) {
    WordCounts out(counts.begin(), counts.end());
    std::stable_sort(out.begin(), out.end(), [](const auto &a, const auto &b) { return a.second > b.second; });
    if (out.size() > top_k) out.resize(top_k);
    return out;
}

// (f_c, f_f): most frequent content-tagged and function-tagged words, case-folded.
inline std::pair<WordCounts, WordCounts> content_function_words(const std::vector<TaggedToken> &tagged, std::size_t top_k,
                                                                const StyleLexicons &lex = {}) {
    std::map<std::string, std::size_t, std::less<>> content, function;
    for (const auto &t : tagged) {
        const std::string w = text::fold_case(t.token);
        if (w.empty()) continue;
        if (lex.content_tags.count(t.tag)) ++content[w];
        else if (lex.function_tags.count(t.tag)) ++function[w];
    }
    return {top_k_counts(content, top_k), top_k_counts(function, top_k)};
}

namespace detail {

inline bool is_latin_vowel(char32_t c) {
    switch (c) {
    case U'a': case U'e': case U'i': case U'o': case U'u': case U'y':
    case U'A': case U'E': case U'I': case U'O': case U'U': case U'Y':
        return true;
    default:
        break;
    }
    return (c >= 0xC0 && c <= 0xC6) || (c >= 0xC8 && c <= 0xCF) || (c >= 0xD2 && c <= 0xD6) || c == 0xD8 ||
           (c >= 0xD9 && c <= 0xDD) || (c >= 0xE0 && c <= 0xE6) || (c >= 0xE8 && c <= 0xEF) ||
           (c >= 0xF2 && c <= 0xF6) || c == 0xF8 || (c >= 0xF9 && c <= 0xFD) || c == 0xFF;
}

// Brahmic blocks from Devanagari through Malayalam share one layout.
inline bool is_indic(char32_t c) { return c >= 0x0900 && c <= 0x0D7F; }
inline unsigned indic_offset(char32_t c) { return static_cast<unsigned>(c & 0x7F); }
inline bool is_indic_independent_vowel(char32_t c) {
    const unsigned o = indic_offset(c);
    return is_indic(c) && ((o >= 0x04 && o <= 0x14) || o == 0x60 || o == 0x61);
}
inline bool is_indic_consonant(char32_t c) {
    const unsigned o = indic_offset(c);
    return is_indic(c) && ((o >= 0x15 && o <= 0x39) || (o >= 0x58 && o <= 0x5F));
}
inline bool is_indic_virama(char32_t c) { return is_indic(c) && indic_offset(c) == 0x4D; }
inline bool is_indic_nukta(char32_t c) { return is_indic(c) && indic_offset(c) == 0x3C; }

} // namespace detail

// Vowel-group heuristic. Latin: maximal runs of vowel letters. Indic: each
// independent vowel, and each consonant not silenced by a virama (its
// inherent vowel or attached matra), counts one.
inline std::size_t syllable_count(std::string_view word) {
    const std::u32string cps = text::decode(word);
    std::size_t count = 0;
    bool in_latin_vowel = false;
    for (std::size_t i = 0; i < cps.size(); ++i) {
        const char32_t c = cps[i];
        if (detail::is_indic(c)) {
            in_latin_vowel = false;
            if (detail::is_indic_independent_vowel(c)) {
                ++count;
            } else if (detail::is_indic_consonant(c)) {
                std::size_t j = i + 1;
                if (j < cps.size() && detail::is_indic_nukta(cps[j])) ++j;
                if (!(j < cps.size() && detail::is_indic_virama(cps[j]))) ++count;
            }
            continue;
        }
        const bool v = detail::is_latin_vowel(c);
        if (v && !in_latin_vowel) ++count;
        in_latin_vowel = v;
    }
    return count;
}

// (f_m, f_p): most frequent one-syllable and three-or-more-syllable words.
inline std::pair<WordCounts, WordCounts> syllabic_words(const std::vector<std::string> &texts, std::size_t top_k) {
    std::map<std::string, std::size_t, std::less<>> mono, poly;
    for (const auto &t : texts)
        for (const auto &w : normalized_words(t)) {
            const std::size_t n = syllable_count(w);
            if (n == 1) ++mono[w];
            else if (n >= 3) ++poly[w];
        }
    return {top_k_counts(mono, top_k), top_k_counts(poly, top_k)};
}

// (f_modal, f_idioms). Idioms match whole normalized tokens within one
// sentence; at each position the longest idiom wins and matches never overlap.
inline std::pair<WordCounts, WordCounts> modal_idiom_scan(const std::vector<std::string> &texts, const StyleLexicons &lex,
                                                          std::size_t top_k = 10) {
    std::map<std::string, std::size_t, std::less<>> modal, idioms;
    for (const auto &t : texts) {
        const auto words = normalized_words(t);
        for (const auto &w : words)
            if (lex.modal_words.count(w)) ++modal[w];
        for (std::size_t i = 0; i < words.size();) {
            const std::vector<std::string> *best = nullptr;
            for (const auto &idiom : lex.idioms) {
                if (idiom.size() > words.size() - i || (best && idiom.size() <= best->size())) continue;
                if (std::equal(idiom.begin(), idiom.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) best = &idiom;
            }
            if (best) {
                ++idioms[text::join(*best, " ")];
                i += best->size();
            } else {
                ++i;
            }
        }
    }
    return {top_k_counts(modal, top_k), top_k_counts(idioms, top_k)};
}

enum class Intent { Interrogative, Exclamatory, Declarative };

inline std::string_view to_string(Intent i) {
    switch (i) {
    case Intent::Interrogative: return "interrogative";
    case Intent::Exclamatory: return "exclamatory";
    case Intent::Declarative: return "declarative";
    }
    return "declarative";
}

struct PunctuationCounts {
    std::size_t question = 0;
    std::size_t exclamation = 0;
    std::size_t total = 0; // '.', '?', '!' and the danda
};

inline PunctuationCounts count_sentence_punctuation(const std::vector<std::string> &texts) {
    PunctuationCounts c;
    for (const auto &t : texts)
        for (std::size_t pos = 0; pos < t.size();) {
            const char32_t cp = text::next_codepoint(t, pos);
            if (cp == U'?') ++c.question;
            else if (cp == U'!') ++c.exclamation;
            if (cp == U'?' || cp == U'!' || cp == U'.' || cp == 0x0964) ++c.total;
        }
    return c;
}

struct IntentThresholds {
    double interrogative = 0.30;
    double exclamatory = 0.30;
};

inline Intent classify_intent(const PunctuationCounts &c, const IntentThresholds &th = {}) {
    if (c.total == 0) return Intent::Declarative;
    const double total = static_cast<double>(c.total);
    if (static_cast<double>(c.question) / total >= th.interrogative) return Intent::Interrogative;
    if (static_cast<double>(c.exclamation) / total >= th.exclamatory) return Intent::Exclamatory;
    return Intent::Declarative;
}

inline Intent intent(const std::vector<std::string> &session_texts, const IntentThresholds &th = {}) {
    return classify_intent(count_sentence_punctuation(session_texts), th);
}

// Scene emotion via the LLM; whitespace collapsed to one line, "neutral" when empty.
inline std::string emotion(const std::vector<std::string> &session_texts, llm::Gateway &gateway,
                           const TemplateSet &templates) {
    std::string dialogues;
    for (const auto &t : session_texts) {
        if (!dialogues.empty()) dialogues += '\n';
        dialogues += t;
    }
    const std::string prompt = render(templates.emotion, {{"dialogues", dialogues}}, "emotion");
    std::string reply = text::normalize_whitespace(gateway.complete(llm::ChatRequest::make(llm::Tag::Emotion, "", prompt)));
    return reply.empty() ? std::string("neutral") : reply;
}

struct StyleProfile {
    WordCounts content_words;     // f_c
    WordCounts function_words;    // f_f
    WordCounts monosyllabic;      // f_m
    WordCounts polysyllabic;      // f_p
    WordCounts modal_words;       // f_modal
    WordCounts idioms;            // f_idioms
    Intent intent = Intent::Declarative;
    std::string emotion = "neutral";
    bool operator==(const StyleProfile &) const = default;
};

// Tagger and lexicons for the two sides of the translation.
struct StyleResources {
    std::shared_ptr<Tagger> source_tagger = std::make_shared<BaselineTagger>(TaggerLexicon{});
    StyleLexicons source_lexicons;
    std::shared_ptr<Tagger> target_tagger = std::make_shared<BaselineTagger>(TaggerLexicon{});
    StyleLexicons target_lexicons;

    static StyleResources from(const LanguageResources &source, const LanguageResources &target) {
        return {std::make_shared<BaselineTagger>(source.tagger_lexicon), source.style,
                std::make_shared<BaselineTagger>(target.tagger_lexicon), target.style};
    }
};

// Word-level fields come from the previous sessions' translations (history);
// before any exist they fall back to the current session's source text.
// Intent and emotion always describe the current session.
inline StyleProfile build_style(const std::vector<std::string> &history, const std::vector<std::string> &current_session_texts,
                                const StyleResources &res, std::size_t top_k, llm::Gateway &gateway,
                                const TemplateSet &templates) {
    if (current_session_texts.empty()) throw InputError("current session has no dialogue");
    const bool cold = history.empty();
    const auto &texts = cold ? current_session_texts : history;
    Tagger &tagger = cold ? *res.source_tagger : *res.target_tagger;
    const StyleLexicons &lex = cold ? res.source_lexicons : res.target_lexicons;

    std::vector<TaggedToken> tagged;
    for (const auto &t : texts) {
        if (text::normalize_whitespace(t).empty()) continue;
        auto part = pos_tag(t, tagger);
        tagged.insert(tagged.end(), part.begin(), part.end());
    }
    StyleProfile p;
    std::tie(p.content_words, p.function_words) = content_function_words(tagged, top_k, lex);
    std::tie(p.monosyllabic, p.polysyllabic) = syllabic_words(texts, top_k);
    std::tie(p.modal_words, p.idioms) = modal_idiom_scan(texts, lex, top_k);
    p.intent = intent(current_session_texts);
    p.emotion = emotion(current_session_texts, gateway, templates);
    return p;
}

inline std::string render_counts(const WordCounts &counts) {
    if (counts.empty()) return "none";
    std::string out;
    for (std::size_t i = 0; i < counts.size(); ++i)
        out += (i ? ", " : "") + counts[i].first + " (" + std::to_string(counts[i].second) + ")";
    return out;
}

inline constexpr std::string_view kStyleFieldLabels[] = {"Content words",  "Function words", "Monosyllabic words",
                                                         "Polysyllabic words", "Modal words", "Idioms",
                                                         "Intent",         "Emotion"};

// Eight labelled lines, always in the same order.
inline std::string render_style(const StyleProfile &p) {
    const std::string values[] = {render_counts(p.content_words), render_counts(p.function_words),
                                  render_counts(p.monosyllabic),  render_counts(p.polysyllabic),
                                  render_counts(p.modal_words),   render_counts(p.idioms),
                                  std::string(to_string(p.intent)), p.emotion};
    std::string out;
    for (std::size_t i = 0; i < std::size(values); ++i) {
        if (i) out += '\n';
        out += "- " + std::string(kStyleFieldLabels[i]) + ": " + values[i];
    }
    return out;
}

} // namespace casat::dam
