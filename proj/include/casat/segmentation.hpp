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

// Tonal classification of dialogues (k-NN over genre exemplars, or nearest
// category centroid) and the run-based session segmentation.

#include <algorithm>
#include <array>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "casat/corpus.hpp"
#include "casat/embedding.hpp"
#include "casat/error.hpp"

namespace casat {

// Declaration order is the tie-break priority: Serious > Casual > Neutral.
enum class TonalCategory { Serious = 0, Casual = 1, Neutral = 2 };

inline constexpr std::array<TonalCategory, 3> kTonalCategories = {TonalCategory::Serious, TonalCategory::Casual,
                                                                  TonalCategory::Neutral};

inline std::string_view to_string(TonalCategory c) {
    switch (c) {
    case TonalCategory::Serious: return "serious";
    case TonalCategory::Casual: return "casual";
    case TonalCategory::Neutral: return "neutral";
    }
    return "neutral";
}

inline TonalCategory tonal_category_from_string(std::string_view s) {
    const std::string f = text::fold_case(s);
    if (f == "serious") return TonalCategory::Serious;
    if (f == "casual") return TonalCategory::Casual;
    if (f == "neutral") return TonalCategory::Neutral;
    throw InputError("unknown tonal category '" + std::string(s) + "'");
}

// Highest count wins; equal counts go to the higher-priority category.
inline TonalCategory plurality(const std::array<std::size_t, 3> &counts) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < 3; ++c)
        if (counts[c] > counts[best]) best = c;
    return static_cast<TonalCategory>(best);
}

struct Exemplar {
    std::string text;
    TonalCategory category;
    Vector vector;
};

struct GenreExemplars {
    std::vector<Exemplar> items; // insertion order is the similarity tie-break

    std::size_t size() const noexcept { return items.size(); }

    void validate() const {
        if (items.empty()) throw InputError("empty exemplar set");
        std::array<std::size_t, 3> per{};
        const std::size_t dim = items.front().vector.dimension();
        for (const auto &e : items) {
            ++per[static_cast<std::size_t>(e.category)];
            if (e.vector.dimension() != dim) throw InputError("exemplar vectors differ in dimension");
        }
        for (std::size_t c = 0; c < 3; ++c)
            if (per[c] == 0)
                throw InputError("no exemplars for category '" +
                                 std::string(to_string(static_cast<TonalCategory>(c))) + "'");
    }
};

struct ExemplarEntry {
    std::string text;
    TonalCategory category;
};

// Exemplar resource: one {"text": ..., "category": "serious|casual|neutral"} per line.
inline std::vector<ExemplarEntry> parse_exemplars_jsonl(std::string_view raw) {
    std::vector<ExemplarEntry> out;
    const auto lines = detail::split_lines(text::strip_bom(raw));
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (detail::is_blank(lines[i])) continue;
        try {
            const auto j = nlohmann::json::parse(lines[i]);
            out.push_back({j.at("text").get<std::string>(), tonal_category_from_string(j.at("category").get<std::string>())});
        } catch (const nlohmann::json::exception &e) {
            throw ParseError(std::string("bad exemplar: ") + e.what(), i + 1);
        } catch (const InputError &e) {
            throw ParseError(e.what(), i + 1);
        }
    }
    return out;
}

inline GenreExemplars embed_exemplars(const std::vector<ExemplarEntry> &entries, Embedder &embedder) {
    std::vector<std::string> texts;
    texts.reserve(entries.size());
    for (const auto &e : entries) texts.push_back(e.text);
    auto vectors = embedder.embed_batch(texts);
    GenreExemplars ex;
    for (std::size_t i = 0; i < entries.size(); ++i)
        ex.items.push_back({entries[i].text, entries[i].category, std::move(vectors[i])});
    ex.validate();
    return ex;
}

// Majority label among the k exemplars most similar to query. Similarity
// ties go to the earlier exemplar.
inline TonalCategory classify(const Vector &query, const GenreExemplars &exemplars, std::size_t k) {
    if (exemplars.items.empty()) throw InputError("empty exemplar set");
    if (k == 0) throw InputError("k must be >= 1");
    if (k > exemplars.size()) throw InputError("k exceeds the exemplar count");
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(exemplars.size());
    for (std::size_t i = 0; i < exemplars.size(); ++i)
        scored.emplace_back(cosine_similarity(query, exemplars.items[i].vector), i);
    const auto by_rank = [](const auto &a, const auto &b) { return a.first > b.first || (a.first == b.first && a.second < b.second); };
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), by_rank);
    std::array<std::size_t, 3> votes{};
    for (std::size_t j = 0; j < k; ++j) ++votes[static_cast<std::size_t>(exemplars.items[scored[j].second].category)];
    return plurality(votes);
}

inline TonalCategory classify(const Dialogue &dialogue, const GenreExemplars &exemplars, std::size_t k,
                              Embedder &embedder) {
    return classify(embedder.embed(dialogue.text), exemplars, k);
}

using Centroids = std::array<Vector, 3>;

// Normalized mean exemplar vector per category.
inline Centroids compute_centroids(const GenreExemplars &exemplars) {
    exemplars.validate();
    const std::size_t dim = exemplars.items.front().vector.dimension();
    std::array<std::vector<double>, 3> sums;
    for (auto &s : sums) s.assign(dim, 0.0);
    for (const auto &e : exemplars.items) {
        auto &s = sums[static_cast<std::size_t>(e.category)];
        for (std::size_t i = 0; i < dim; ++i) s[i] += e.vector[i];
    }
    return {Vector::normalized(std::move(sums[0])), Vector::normalized(std::move(sums[1])),
            Vector::normalized(std::move(sums[2]))};
}

inline TonalCategory classify_centroid(const Vector &query, const Centroids &centroids) {
    std::size_t best = 0;
    double best_sim = cosine_similarity(query, centroids[0]);
    for (std::size_t c = 1; c < 3; ++c) {
        const double s = cosine_similarity(query, centroids[c]);
        if (s > best_sim) {
            best_sim = s;
            best = c;
        }
    }
    return static_cast<TonalCategory>(best);
}

enum class ClassifierKind { Knn, Centroid };

inline std::vector<TonalCategory> classify_corpus(const Corpus &corpus, const GenreExemplars &exemplars,
                                                  std::size_t k, Embedder &embedder,
                                                  ClassifierKind kind = ClassifierKind::Knn) {
    std::vector<std::string> texts;
    texts.reserve(corpus.size());
    for (const auto &d : corpus.dialogues) texts.push_back(d.text);
    const auto vectors = embedder.embed_batch(texts);
    std::vector<TonalCategory> labels;
    labels.reserve(vectors.size());
    if (kind == ClassifierKind::Centroid) {
        const auto centroids = compute_centroids(exemplars);
        for (const auto &v : vectors) labels.push_back(classify_centroid(v, centroids));
    } else {
        for (const auto &v : vectors) labels.push_back(classify(v, exemplars, k));
    }
    return labels;
}

struct SegmentationParams {
    std::size_t alpha = 5; // same-label run needed before a new session may open
    std::size_t beta = 10; // hard cap on session length
    std::size_t k = 3;

    void validate() const {
        if (alpha < 1 || alpha > beta) throw InputError("segmentation requires 1 <= alpha <= beta");
        if (k < 1 || k % 2 == 0) throw InputError("k must be a positive odd number");
    }
};

struct Session {
    std::size_t id = 0;
    TonalCategory genre = TonalCategory::Neutral;
    std::size_t start = 0; // inclusive dialogue index
    std::size_t end = 0;   // exclusive

    std::size_t size() const noexcept { return end - start; }
    bool operator==(const Session &) const = default;
};

inline TonalCategory majority(std::span<const TonalCategory> window) {
    std::array<std::size_t, 3> counts{};
    for (auto c : window) ++counts[static_cast<std::size_t>(c)];
    return plurality(counts);
}

// Scans the label stream once. A session closes when it reaches beta, or
// when it already holds >= alpha labels, the next label differs from the
// session's opening label, and the majority of the next alpha labels
// (clipped at the end of the stream) also differs. The trailing session is
// always emitted. A session's genre is its opening label.
inline std::vector<Session> segment(std::span<const TonalCategory> labels, const SegmentationParams &params) {
    params.validate();
    if (labels.empty()) throw InputError("cannot segment an empty label stream");
    std::vector<Session> sessions;
    std::size_t start = 0;
    auto flush = [&](std::size_t end) {
        sessions.push_back({sessions.size(), labels[start], start, end});
        start = end;
    };
    for (std::size_t i = 1; i < labels.size(); ++i) {
        if (i - start == params.beta) flush(i);
        const std::size_t len = i - start;
        if (len >= params.alpha && labels[i] != labels[start]) {
            const std::size_t stop = std::min(i + params.alpha, labels.size());
            if (majority(labels.subspan(i, stop - i)) != labels[start]) flush(i);
        }
    }
    flush(labels.size());
    return sessions;
}

// Throws unless sessions tile [0, n) in order with lengths in [1, max_len].
inline void validate_partition(const std::vector<Session> &sessions, std::size_t n, std::size_t max_len = 0) {
    std::size_t expect = 0;
    for (std::size_t i = 0; i < sessions.size(); ++i) {
        const auto &s = sessions[i];
        if (s.id != i) throw InputError("session ids must be dense from 0");
        if (s.start != expect || s.end <= s.start) throw InputError("sessions do not tile the corpus");
        if (max_len && s.size() > max_len) throw InputError("session longer than beta");
        expect = s.end;
    }
    if (expect != n) throw InputError("sessions cover " + std::to_string(expect) + " of " + std::to_string(n) + " dialogues");
}

inline std::size_t session_of(const std::vector<Session> &sessions, std::size_t dialogue_index) {
    const auto it = std::upper_bound(sessions.begin(), sessions.end(), dialogue_index,
                                     [](std::size_t idx, const Session &s) { return idx < s.end; });
    if (it == sessions.end()) throw InputError("dialogue index outside all sessions");
    return it->id;
}

inline std::string sessions_to_jsonl(const std::vector<Session> &sessions) {
    std::string out;
    for (const auto &s : sessions) {
        nlohmann::ordered_json j;
        j["id"] = s.id;
        j["genre"] = to_string(s.genre);
        j["start"] = s.start;
        j["end"] = s.end;
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline std::vector<Session> parse_sessions_jsonl(std::string_view raw) {
    std::vector<Session> out;
    const auto lines = detail::split_lines(text::strip_bom(raw));
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (detail::is_blank(lines[i])) continue;
        try {
            const auto j = nlohmann::json::parse(lines[i]);
            out.push_back({j.at("id").get<std::size_t>(), tonal_category_from_string(j.at("genre").get<std::string>()),
                           j.at("start").get<std::size_t>(), j.at("end").get<std::size_t>()});
        } catch (const nlohmann::json::exception &e) {
            throw ParseError(std::string("bad session: ") + e.what(), i + 1);
        } catch (const InputError &e) {
            throw ParseError(e.what(), i + 1);
        }
    }
    return out;
}

} // namespace casat
