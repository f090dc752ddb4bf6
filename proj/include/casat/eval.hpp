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

// Evaluation: corpus BLEU, pairwise LLM judging and win ratio, embedding
// distance to references, classical MDS, and report writers.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "casat/embedding.hpp"
#include "casat/error.hpp"
#include "casat/llm_gateway.hpp"
#include "casat/prompts.hpp"
#include "casat/text.hpp"

namespace casat::eval {

// Whitespace split, then every punctuation code point becomes its own token.
inline std::vector<std::string> bleu_tokenize(std::string_view s) {
    std::vector<std::string> out;
    for (const auto &word : text::split_whitespace(s)) {
        std::string cur;
        for (std::size_t pos = 0; pos < word.size();) {
            const std::size_t start = pos;
            const char32_t c = text::next_codepoint(word, pos);
            if (text::is_punct(c)) {
                if (!cur.empty()) out.push_back(std::move(cur));
                cur.clear();
                out.emplace_back(word.substr(start, pos - start));
            } else {
                cur.append(word.substr(start, pos - start));
            }
        }
        if (!cur.empty()) out.push_back(std::move(cur));
    }
    return out;
}

inline constexpr int kMaxOrder = 4;
inline constexpr double kZeroPrecisionFloor = 1e-9;

struct BleuResult {
    double score = 0.0;
    std::array<double, kMaxOrder> precisions{};
    std::array<std::size_t, kMaxOrder> matches{};
    std::array<std::size_t, kMaxOrder> totals{};
    double brevity_penalty = 0.0;
    std::size_t hyp_length = 0;
    std::size_t ref_length = 0;
};

// Corpus BLEU-4 against one reference per hypothesis: clipped n-gram
// precisions pooled over the corpus, geometric mean, brevity penalty
// exp(1 - r/c) when c <= r. Zero precisions are floored at 1e-9.
inline BleuResult corpus_bleu(const std::vector<std::string> &hypotheses, const std::vector<std::string> &references) {
    if (hypotheses.size() != references.size()) throw InputError("hypothesis and reference counts differ");
    if (hypotheses.empty()) throw InputError("empty corpus");
    BleuResult r;
    for (std::size_t s = 0; s < hypotheses.size(); ++s) {
        const auto hyp = bleu_tokenize(hypotheses[s]);
        const auto ref = bleu_tokenize(references[s]);
        r.hyp_length += hyp.size();
        r.ref_length += ref.size();
        for (int n = 1; n <= kMaxOrder; ++n) {
            std::map<std::vector<std::string>, std::size_t> ref_counts, hyp_counts;
            for (std::size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[{ref.begin() + i, ref.begin() + i + n}];
            for (std::size_t i = 0; i + n <= hyp.size(); ++i) ++hyp_counts[{hyp.begin() + i, hyp.begin() + i + n}];
            for (const auto &[gram, c] : hyp_counts) {
                const auto it = ref_counts.find(gram);
                r.matches[n - 1] += it == ref_counts.end() ? 0 : std::min(c, it->second);
                r.totals[n - 1] += c;
            }
        }
    }
    if (r.hyp_length == 0) return r;
    double log_sum = 0.0;
    for (int n = 0; n < kMaxOrder; ++n) {
        r.precisions[n] = r.matches[n] == 0 ? kZeroPrecisionFloor
                                            : static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]);
        log_sum += std::log(r.precisions[n]);
    }
    const double c = static_cast<double>(r.hyp_length), ref_len = static_cast<double>(r.ref_length);
    r.brevity_penalty = c > ref_len ? 1.0 : std::exp(1.0 - ref_len / c);
    r.score = std::clamp(100.0 * r.brevity_penalty * std::exp(log_sum / kMaxOrder), 0.0, 100.0);
    return r;
}

inline double bleu(const std::vector<std::string> &hypotheses, const std::vector<std::string> &references) {
    return corpus_bleu(hypotheses, references).score;
}

enum class Winner { Candidate, Baseline, Tie };

inline std::string_view to_string(Winner w) {
    switch (w) {
    case Winner::Candidate: return "candidate";
    case Winner::Baseline: return "baseline";
    case Winner::Tie: return "tie";
    }
    return "tie";
}

struct Judgment {
    std::size_t index = 0;
    Winner winner = Winner::Tie;
    std::string raw_reply;
    bool candidate_first = true; // candidate shown as [A]
};

enum class Presentation { Randomized, CandidateFirst, BaselineFirst };

struct JudgeOptions {
    Presentation presentation = Presentation::Randomized;
    std::uint64_t seed = 0;
    std::string source_lang = "en";
    std::string target_lang = "hi";
};

// Reads the verdict from the reply's last token: A, B or TIE (case and
// surrounding punctuation ignored). Anything else is nullopt.
inline std::optional<char> parse_verdict(std::string_view reply) {
    const auto toks = text::split_whitespace(reply);
    if (toks.empty()) return std::nullopt;
    std::string last = text::strip_edge_punct(toks.back());
    for (char &c : last)
        if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
    if (last == "A") return 'A';
    if (last == "B") return 'B';
    if (last == "TIE") return 'T';
    return std::nullopt;
}

// Per item, shows the two translations as [A]/[B] (order from options; the
// randomized order draws one bit per item from mt19937_64(seed)) and maps
// the verdict back to candidate/baseline. Unparseable replies count as ties.
inline std::vector<Judgment> judge_pairs(const std::vector<std::string> &sources, const std::vector<std::string> &candidates,
                                         const std::vector<std::string> &baselines, llm::Gateway &gateway,
                                         const TemplateSet &templates, const JudgeOptions &options = {}) {
    if (sources.size() != candidates.size() || sources.size() != baselines.size())
        throw InputError("judge inputs are not aligned");
    std::mt19937_64 rng(options.seed);
    std::vector<Judgment> judgments(sources.size());
    std::vector<llm::ChatRequest> requests;
    for (std::size_t i = 0; i < sources.size(); ++i) {
        bool cand_first = true;
        if (options.presentation == Presentation::Randomized) cand_first = (rng() >> 63) == 0;
        else if (options.presentation == Presentation::BaselineFirst) cand_first = false;
        judgments[i].index = i;
        judgments[i].candidate_first = cand_first;
        const TemplateVars vars = {{"source", sources[i]},
                                   {"translation_a", cand_first ? candidates[i] : baselines[i]},
                                   {"translation_b", cand_first ? baselines[i] : candidates[i]},
                                   {"source_lang", language_name(options.source_lang)},
                                   {"target_lang", language_name(options.target_lang)}};
        requests.push_back(llm::ChatRequest::make(llm::Tag::Judge, "", render(templates.judge, vars, "judge")));
    }
    auto replies = gateway.complete_batch(requests);
    for (std::size_t i = 0; i < replies.size(); ++i) {
        auto &j = judgments[i];
        j.raw_reply = replies[i].value();
        const auto verdict = parse_verdict(j.raw_reply);
        if (!verdict || *verdict == 'T') j.winner = Winner::Tie;
        else if ((*verdict == 'A') == j.candidate_first) j.winner = Winner::Candidate;
        else j.winner = Winner::Baseline;
    }
    return judgments;
}

// Fraction of judgments the candidate wins; ties count only in the denominator.
inline double win_ratio(const std::vector<Judgment> &judgments) {
    if (judgments.empty()) throw InputError("no judgments");
    std::size_t wins = 0;
    for (const auto &j : judgments) wins += j.winner == Winner::Candidate;
    return static_cast<double>(wins) / static_cast<double>(judgments.size());
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0; // population
};

inline double euclidean_distance(const Vector &a, const Vector &b) {
    if (a.dimension() != b.dimension()) throw InputError("dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.dimension(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline MeanStd mean_std(const std::vector<double> &xs) {
    if (xs.empty()) throw InputError("no values");
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

inline MeanStd embedding_distance_report(const std::vector<std::string> &outputs, const std::vector<std::string> &references,
                                         Embedder &embedder) {
    if (outputs.size() != references.size()) throw InputError("output and reference counts differ");
    if (outputs.empty()) throw InputError("empty corpus");
    const auto eo = embedder.embed_batch(outputs);
    const auto er = embedder.embed_batch(references);
    std::vector<double> d;
    d.reserve(eo.size());
    for (std::size_t i = 0; i < eo.size(); ++i) d.push_back(euclidean_distance(eo[i], er[i]));
    return mean_std(d);
}

using Matrix = std::vector<std::vector<double>>;

namespace detail {

inline void center(std::vector<double> &v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double &x : v) x -= m;
}

inline double norm(const std::vector<double> &v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline std::vector<double> multiply(const Matrix &B, const std::vector<double> &v, double shift) {
    std::vector<double> w(v.size(), 0.0);
    for (std::size_t i = 0; i < B.size(); ++i) {
        double s = shift * v[i];
        for (std::size_t j = 0; j < v.size(); ++j) s += B[i][j] * v[j];
        w[i] = s;
    }
    return w;
}

// Dominant eigenvector of (B + shift*I) restricted to centered vectors.
// Returns a zero vector when B annihilates the start vector.
inline std::vector<double> power_iterate(const Matrix &B, double shift, std::uint64_t seed, double tol, int max_iter) {
    const std::size_t n = B.size();
    std::mt19937_64 rng(seed);
    std::vector<double> v(n);
    for (auto &x : v) x = static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    center(v);
    double nv = norm(v);
    if (nv == 0.0) return v;
    for (auto &x : v) x /= nv;
    for (int it = 0; it < max_iter; ++it) {
        auto w = multiply(B, v, shift);
        center(w);
        const double nw = norm(w);
        if (nw < 1e-300) return std::vector<double>(n, 0.0);
        for (auto &x : w) x /= nw;
        double diff_same = 0.0, diff_flip = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            diff_same = std::max(diff_same, std::abs(w[i] - v[i]));
            diff_flip = std::max(diff_flip, std::abs(w[i] + v[i]));
        }
        v = std::move(w);
        if (std::min(diff_same, diff_flip) < tol) break;
    }
    return v;
}

} // namespace detail

struct MdsOptions {
    double tolerance = 1e-10;
    int max_iterations = 10000;
};

// Classical (Torgerson) MDS: B = -1/2 J D^2 J, top eigenpairs by deflated
// power iteration, coordinates = eigenvector * sqrt(max(eigenvalue, 0)).
inline Matrix classical_mds(const Matrix &distances, std::size_t dims = 2, const MdsOptions &opt = {}) {
    const std::size_t n = distances.size();
    if (n == 0) throw InputError("empty distance matrix");
    double scale = 0.0;
    for (const auto &row : distances) {
        if (row.size() != n) throw InputError("distance matrix is not square");
        for (double d : row) {
            if (!std::isfinite(d) || d < 0.0) throw InputError("distance matrix has negative or non-finite entries");
            scale = std::max(scale, d);
        }
    }
    const double sym_tol = 1e-9 * std::max(1.0, scale);
    for (std::size_t i = 0; i < n; ++i) {
        if (distances[i][i] > sym_tol) throw InputError("distance matrix has a non-zero diagonal");
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(distances[i][j] - distances[j][i]) > sym_tol) throw InputError("distance matrix is not symmetric");
    }

    Matrix B(n, std::vector<double>(n));
    std::vector<double> row_mean(n, 0.0);
    double grand = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double d2 = distances[i][j] * distances[i][j];
            B[i][j] = d2;
            row_mean[i] += d2 / static_cast<double>(n);
            grand += d2 / static_cast<double>(n * n);
        }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) B[i][j] = -0.5 * (B[i][j] - row_mean[i] - row_mean[j] + grand);

    const double negligible = 1e-12 * std::max(1.0, scale * scale) * static_cast<double>(n);
    Matrix coords(n, std::vector<double>(dims, 0.0));
    for (std::size_t k = 0; k < dims && k < n; ++k) {
        const std::uint64_t seed = 0x9E3779B97F4A7C15ULL + k;
        auto v = detail::power_iterate(B, 0.0, seed, opt.tolerance, opt.max_iterations);
        auto rayleigh = [&](const std::vector<double> &x) {
            const auto bx = detail::multiply(B, x, 0.0);
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += x[i] * bx[i];
            return s;
        };
        double lambda = rayleigh(v);
        if (lambda < 0.0) {
            // A negative eigenvalue dominated; shift so the largest algebraic one does.
            v = detail::power_iterate(B, -lambda, seed, opt.tolerance, opt.max_iterations);
            lambda = rayleigh(v);
        }
        if (!(lambda > negligible)) break;
        const double s = std::sqrt(lambda);
        for (std::size_t i = 0; i < n; ++i) coords[i][k] = v[i] * s;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) B[i][j] -= lambda * v[i] * v[j];
    }
    return coords;
}

inline Matrix pairwise_euclidean(const Matrix &points) {
    const std::size_t n = points.size();
    Matrix d(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < points[i].size(); ++k) {
                const double t = points[i][k] - points[j][k];
                s += t * t;
            }
            d[i][j] = d[j][i] = std::sqrt(s);
        }
    return d;
}

// Pluggable per-pair scorer (e.g. a neural QE model run out of process).
using ExternalScorer = std::function<std::vector<double>(const std::vector<std::string> &sources,
                                                         const std::vector<std::string> &hypotheses,
                                                         const std::vector<std::string> &references)>;

// Runs `command` with a JSONL file of {"src","mt","ref"} objects on stdin and
// reads one score per output line.
inline ExternalScorer command_scorer(std::string command) {
    return [command = std::move(command)](const std::vector<std::string> &src, const std::vector<std::string> &mt,
                                          const std::vector<std::string> &ref) {
        namespace fs = std::filesystem;
        const auto path = fs::temp_directory_path() / ("casat-score-" + std::to_string(std::random_device{}()) + ".jsonl");
        {
            std::ofstream out(path);
            for (std::size_t i = 0; i < mt.size(); ++i)
                out << nlohmann::json{{"src", src[i]}, {"mt", mt[i]}, {"ref", ref[i]}}.dump() << '\n';
        }
        const std::string cmd = command + " < '" + path.string() + "'";
        FILE *pipe = ::popen(cmd.c_str(), "r");
        if (!pipe) {
            fs::remove(path);
            throw IoError("cannot run external scorer");
        }
        std::string buf;
        char chunk[4096];
        while (std::size_t got = std::fread(chunk, 1, sizeof chunk, pipe)) buf.append(chunk, got);
        const int status = ::pclose(pipe);
        fs::remove(path);
        if (status != 0) throw IoError("external scorer exited with status " + std::to_string(status));
        std::vector<double> scores;
        for (const auto &tok : text::split_whitespace(buf)) {
            try {
                scores.push_back(std::stod(tok));
            } catch (const std::exception &) {
                throw ParseError("external scorer printed a non-number: '" + tok + "'");
            }
        }
        if (scores.size() != mt.size())
            throw ParseError("external scorer returned " + std::to_string(scores.size()) + " scores for " +
                             std::to_string(mt.size()) + " pairs");
        return scores;
    };
}

struct SystemMetrics {
    std::string name;
    std::size_t n = 0;
    double bleu = 0.0;
    MeanStd embedding_distance;
    std::optional<double> external_score;
    std::optional<double> win_ratio; // against the baseline row
    std::size_t wins = 0, losses = 0, ties = 0;
};

struct MetricReport {
    std::vector<SystemMetrics> systems;
};

inline nlohmann::ordered_json to_json(const MetricReport &report) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto &s : report.systems) {
        nlohmann::ordered_json o;
        o["system"] = s.name;
        o["n"] = s.n;
        o["bleu"] = s.bleu;
        o["embedding_distance"] = {{"mean", s.embedding_distance.mean}, {"std", s.embedding_distance.std}};
        if (s.external_score) o["external_score"] = *s.external_score;
        if (s.win_ratio) {
            o["win_ratio"] = *s.win_ratio;
            o["judgments"] = {{"wins", s.wins}, {"losses", s.losses}, {"ties", s.ties}};
        }
        j.push_back(std::move(o));
    }
    return {{"systems", j}};
}

inline std::string format_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// Table with B. (BLEU), optional C. (external scorer) and Δ (win ratio) columns.
inline std::string to_markdown(const MetricReport &report) {
    bool any_external = false;
    for (const auto &s : report.systems) any_external |= s.external_score.has_value();
    std::string out = "| System | n | B. |";
    out += any_external ? " C. |" : "";
    out += " Δ | Emb. dist. (mean ± std) |\n|---|---|---|";
    out += any_external ? "---|" : "";
    out += "---|---|\n";
    for (const auto &s : report.systems) {
        out += "| " + s.name + " | " + std::to_string(s.n) + " | " + format_fixed(s.bleu, 2) + " |";
        if (any_external) out += " " + (s.external_score ? format_fixed(*s.external_score, 4) : "-") + " |";
        out += " " + (s.win_ratio ? format_fixed(*s.win_ratio, 2) : "-") + " |";
        out += " " + format_fixed(s.embedding_distance.mean, 4) + " ± " + format_fixed(s.embedding_distance.std, 4) + " |\n";
    }
    return out;
}

inline std::string mds_to_csv(const std::vector<std::string> &labels, const std::vector<std::size_t> &indices,
                              const Matrix &coords) {
    std::string out = "system,index,x,y\n";
    for (std::size_t i = 0; i < coords.size(); ++i) {
        char buf[128];
        std::snprintf(buf, sizeof buf, ",%zu,%.17g,%.17g\n", indices[i], coords[i][0], coords[i].size() > 1 ? coords[i][1] : 0.0);
        out += labels[i] + buf;
    }
    return out;
}

} // namespace casat::eval
