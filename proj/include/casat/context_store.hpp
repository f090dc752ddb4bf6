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

// Scene-plot context store: plot extraction over session windows, token
// chunking, an exact cosine index, and retrieve-then-rerank queries.
//
// Store file layout (all integers little-endian):
//
//   magic        8 bytes  "CASATVS\0"
//   header_len   u32
//   header       header_len bytes of UTF-8 JSON:
//                {"format","version","corpus","embedder_id","dimension",
//                 "chunk_size","chunk_overlap","chunk_count"}
//   chunk_count records, each:
//     record_len u32      byte length of the fields below
//     id         u64
//     seq        u32      position of the chunk within its plot
//     n_window   u32
//     window     n_window x u32 session ids
//     text_len   u32
//     text       text_len bytes UTF-8
//     vector     dimension x f64 (IEEE-754 bit patterns)
//
// Nothing may follow the last record.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "casat/corpus.hpp"
#include "casat/embedding.hpp"
#include "casat/llm_gateway.hpp"
#include "casat/prompts.hpp"
#include "casat/segmentation.hpp"

namespace casat {

struct Plot {
    std::vector<std::size_t> window; // contiguous session ids
    std::string text;
    bool operator==(const Plot &) const = default;
};

enum class PlotWindowing { Tumbling, Sliding };

// Session-id windows of width K: stride K (tumbling, last may be short) or stride 1 (sliding).
inline std::vector<std::vector<std::size_t>> plot_windows(std::size_t n_sessions, std::size_t K,
                                                          PlotWindowing mode = PlotWindowing::Tumbling) {
    if (K < 1) throw InputError("K must be >= 1");
    std::vector<std::vector<std::size_t>> out;
    if (n_sessions == 0) return out;
    const std::size_t stride = mode == PlotWindowing::Tumbling ? K : 1;
    for (std::size_t first = 0; first < n_sessions; first += stride) {
        const std::size_t last = std::min(first + K, n_sessions);
        std::vector<std::size_t> w(last - first);
        std::iota(w.begin(), w.end(), first);
        out.push_back(std::move(w));
        if (last == n_sessions) break;
    }
    return out;
}

inline std::string render_dialogue_lines(const Corpus &corpus, std::size_t begin, std::size_t end) {
    std::string out;
    for (std::size_t i = begin; i < end; ++i) {
        const auto &d = corpus[i];
        if (!out.empty()) out += '\n';
        out += d.speaker ? *d.speaker + ": " + d.text : d.text;
    }
    return out;
}

inline std::string join_ids(const std::vector<std::size_t> &ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? ", " : "") + std::to_string(ids[i]);
    return out;
}

// One LLM summary per session window, in window order.
inline std::vector<Plot> extract_plots(const Corpus &corpus, const std::vector<Session> &sessions, std::size_t K,
                                       llm::Gateway &gateway, const TemplateSet &templates,
                                       PlotWindowing mode = PlotWindowing::Tumbling) {
    validate_partition(sessions, corpus.size());
    const auto windows = plot_windows(sessions.size(), K, mode);
    std::vector<llm::ChatRequest> requests;
    for (const auto &w : windows) {
        const TemplateVars vars = {
            {"dialogues", render_dialogue_lines(corpus, sessions[w.front()].start, sessions[w.back()].end)},
            {"session_ids", join_ids(w)},
            {"session_count", std::to_string(w.size())},
            {"source_lang", language_name(corpus.source_lang)},
            {"target_lang", language_name(corpus.target_lang)}};
        requests.push_back(llm::ChatRequest::make(llm::Tag::Plot, "", render(templates.plot, vars, "plot")));
    }
    auto results = gateway.complete_batch(requests);
    std::vector<Plot> plots;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const std::string where = "plot extraction for sessions [" + join_ids(windows[i]) + "]";
        if (!results[i].ok()) {
            try {
                std::rethrow_exception(results[i].error);
            } catch (const TransportError &e) {
                throw TransportError(where + " failed: " + e.what(), e.status());
            }
        }
        std::string body = text::normalize_whitespace(results[i].text);
        if (body.empty()) throw TransportError(where + " returned an empty plot", 200);
        plots.push_back({windows[i], std::move(body)});
    }
    return plots;
}

inline std::string plots_to_jsonl(const std::vector<Plot> &plots) {
    std::string out;
    for (const auto &p : plots) {
        nlohmann::ordered_json j;
        j["window"] = p.window;
        j["text"] = p.text;
        out += j.dump() + "\n";
    }
    return out;
}

inline std::vector<Plot> parse_plots_jsonl(std::string_view raw) {
    std::vector<Plot> out;
    const auto lines = detail::split_lines(text::strip_bom(raw));
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (detail::is_blank(lines[i])) continue;
        try {
            const auto j = nlohmann::json::parse(lines[i]);
            out.push_back({j.at("window").get<std::vector<std::size_t>>(), j.at("text").get<std::string>()});
        } catch (const nlohmann::json::exception &e) {
            throw ParseError(std::string("bad plot: ") + e.what(), i + 1);
        }
    }
    return out;
}

struct ChunkParams {
    std::size_t chunk_size = 356; // whitespace tokens
    std::size_t overlap = 64;

    void validate() const {
        if (chunk_size == 0) throw InputError("chunk size must be positive");
        if (overlap >= chunk_size) throw InputError("chunk overlap must be smaller than chunk size");
    }
};

// Token windows [i*stride, i*stride + size) with stride = size - overlap,
// stopping at the first window that reaches the end of the text.
inline std::vector<std::string> chunk_text(std::string_view body, const ChunkParams &params) {
    params.validate();
    const auto tokens = text::split_whitespace(body);
    std::vector<std::string> out;
    const std::size_t stride = params.chunk_size - params.overlap;
    for (std::size_t first = 0; first < tokens.size(); first += stride) {
        const std::size_t last = std::min(first + params.chunk_size, tokens.size());
        std::string chunk;
        for (std::size_t i = first; i < last; ++i) {
            if (i > first) chunk += ' ';
            chunk += tokens[i];
        }
        out.push_back(std::move(chunk));
        if (last == tokens.size()) break;
    }
    return out;
}

inline std::vector<std::string> chunk_text(std::string_view body, std::size_t chunk_size, std::size_t overlap) {
    return chunk_text(body, ChunkParams{chunk_size, overlap});
}

struct Chunk {
    std::uint64_t id = 0;
    std::string text;
    Vector vector;
    std::vector<std::size_t> plot_window;
    std::uint32_t seq = 0;
    bool operator==(const Chunk &) const = default;
};

struct StoreMetadata {
    std::string corpus;
    std::string embedder_id;
    ChunkParams chunk_params;
    bool operator==(const StoreMetadata &o) const {
        return corpus == o.corpus && embedder_id == o.embedder_id && chunk_params.chunk_size == o.chunk_params.chunk_size &&
               chunk_params.overlap == o.chunk_params.overlap;
    }
};

// Read-only after construction.
class VectorStore {
  public:
    VectorStore(std::vector<Chunk> chunks, std::size_t dimension, StoreMetadata metadata)
        : chunks_(std::move(chunks)), dimension_(dimension), metadata_(std::move(metadata)) {
        std::unordered_map<std::uint64_t, bool> seen;
        for (const auto &c : chunks_) {
            if (c.vector.dimension() != dimension_) throw InputError("chunk vector dimension differs from the store's");
            if (!seen.emplace(c.id, true).second) throw InputError("duplicate chunk id " + std::to_string(c.id));
        }
    }

    const std::vector<Chunk> &chunks() const noexcept { return chunks_; }
    std::size_t size() const noexcept { return chunks_.size(); }
    bool empty() const noexcept { return chunks_.empty(); }
    std::size_t dimension() const noexcept { return dimension_; }
    const StoreMetadata &metadata() const noexcept { return metadata_; }
    bool operator==(const VectorStore &) const = default;

  private:
    std::vector<Chunk> chunks_;
    std::size_t dimension_;
    StoreMetadata metadata_;
};

inline VectorStore build_store(const std::vector<Plot> &plots, Embedder &embedder, const ChunkParams &params,
                               const std::string &corpus_name = "corpus") {
    if (plots.empty()) throw InputError("no plots to index");
    params.validate();
    std::vector<Chunk> chunks;
    std::vector<std::string> texts;
    for (const auto &p : plots) {
        const auto pieces = chunk_text(p.text, params);
        for (std::size_t s = 0; s < pieces.size(); ++s) {
            Chunk c;
            c.id = chunks.size();
            c.text = pieces[s];
            c.plot_window = p.window;
            c.seq = static_cast<std::uint32_t>(s);
            chunks.push_back(std::move(c));
            texts.push_back(pieces[s]);
        }
    }
    auto vectors = embedder.embed_batch(texts);
    for (std::size_t i = 0; i < chunks.size(); ++i) chunks[i].vector = std::move(vectors[i]);
    return VectorStore(std::move(chunks), embedder.dimension(), {corpus_name, embedder.id(), params});
}

struct Candidate {
    Chunk chunk;
    double score = 0.0;
};

// Exact top-M by cosine similarity, descending; equal scores go to the lower chunk id.
inline std::vector<Candidate> retrieve(const VectorStore &store, const Vector &query, std::size_t M) {
    if (store.empty()) throw InputError("cannot retrieve from an empty store");
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i)
        scored.emplace_back(cosine_similarity(query, store.chunks()[i].vector), i);
    const auto &chunks = store.chunks();
    const auto before = [&](const auto &a, const auto &b) {
        return a.first > b.first || (a.first == b.first && chunks[a.second].id < chunks[b.second].id);
    };
    const std::size_t take = std::min(M, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), before);
    std::vector<Candidate> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back({chunks[scored[i].second], scored[i].first});
    return out;
}

inline std::vector<Candidate> retrieve(const VectorStore &store, const std::string &query, std::size_t M,
                                       Embedder &embedder) {
    if (store.empty()) throw InputError("cannot retrieve from an empty store");
    return retrieve(store, embedder.embed(query), M);
}

// SQuAD-style F1 over ASCII-case-folded whitespace tokens (multiset overlap).
inline double token_f1(std::string_view a, std::string_view b) {
    const auto ta = text::split_whitespace(text::fold_case(a));
    const auto tb = text::split_whitespace(text::fold_case(b));
    if (ta.empty() || tb.empty()) return 0.0;
    std::map<std::string, std::size_t> counts;
    for (const auto &t : tb) ++counts[t];
    std::size_t common = 0;
    for (const auto &t : ta) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    }
    if (common == 0) return 0.0;
    const double precision = static_cast<double>(common) / static_cast<double>(tb.size());
    const double recall = static_cast<double>(common) / static_cast<double>(ta.size());
    return 2.0 * precision * recall / (precision + recall);
}

using RerankScorer = std::function<double(std::string_view query, const Chunk &chunk, double retrieval_score)>;

inline double blend_score(std::string_view query, const Chunk &chunk, double retrieval_score) {
    return 0.5 * retrieval_score + 0.5 * token_f1(query, chunk.text);
}

struct RankedChunk {
    Chunk chunk;
    double retrieval_score = 0.0;
    double rerank_score = 0.0;
};

struct ContextResult {
    std::vector<RankedChunk> chunks;

    std::vector<std::uint64_t> ids() const {
        std::vector<std::uint64_t> out;
        for (const auto &c : chunks) out.push_back(c.chunk.id);
        return out;
    }
};

// Rescores candidates (given in retrieval order) and keeps the best N;
// equal rerank scores keep retrieval order.
inline ContextResult rerank(const std::vector<Candidate> &candidates, std::string_view query, std::size_t N,
                            const RerankScorer &scorer = blend_score) {
    std::vector<RankedChunk> ranked;
    ranked.reserve(candidates.size());
    for (const auto &c : candidates) ranked.push_back({c.chunk, c.score, scorer(query, c.chunk, c.score)});
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const RankedChunk &a, const RankedChunk &b) { return a.rerank_score > b.rerank_score; });
    if (ranked.size() > N) ranked.resize(N);
    return {std::move(ranked)};
}

namespace detail {

inline constexpr std::string_view kStoreMagic{"CASATVS\0", 8};
inline constexpr int kStoreVersion = 1;

class ByteWriter {
  public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(std::string_view s) { buf_.append(s); }
    std::string &str() noexcept { return buf_; }

  private:
    std::string buf_;
};

class ByteReader {
  public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    std::uint64_t uint(int width) {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(width);
        return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
    std::uint64_t u64() { return uint(8); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string_view bytes(std::size_t n) {
        need(n);
        auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    std::size_t pos() const noexcept { return pos_; }
    bool at_end() const noexcept { return pos_ == data_.size(); }

  private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw CorruptFileError("vector store file is truncated");
    }
    std::string_view data_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::string serialize_store(const VectorStore &store) {
    detail::ByteWriter w;
    w.bytes(detail::kStoreMagic);
    nlohmann::ordered_json header;
    header["format"] = "casat-vector-store";
    header["version"] = detail::kStoreVersion;
    header["corpus"] = store.metadata().corpus;
    header["embedder_id"] = store.metadata().embedder_id;
    header["dimension"] = store.dimension();
    header["chunk_size"] = store.metadata().chunk_params.chunk_size;
    header["chunk_overlap"] = store.metadata().chunk_params.overlap;
    header["chunk_count"] = store.size();
    const std::string h = header.dump();
    w.u32(static_cast<std::uint32_t>(h.size()));
    w.bytes(h);
    for (const auto &c : store.chunks()) {
        detail::ByteWriter rec;
        rec.u64(c.id);
        rec.u32(c.seq);
        rec.u32(static_cast<std::uint32_t>(c.plot_window.size()));
        for (auto s : c.plot_window) rec.u32(static_cast<std::uint32_t>(s));
        rec.u32(static_cast<std::uint32_t>(c.text.size()));
        rec.bytes(c.text);
        for (double x : c.vector.values()) rec.f64(x);
        w.u32(static_cast<std::uint32_t>(rec.str().size()));
        w.bytes(rec.str());
    }
    return std::move(w.str());
}

struct StoreLoad {
    VectorStore store;
    std::vector<std::string> warnings;
};

// Parses a store image. A non-empty expected_embedder_id that differs from
// the recorded one yields a warning rather than an error.
inline StoreLoad deserialize_store(std::string_view data, std::string_view expected_embedder_id = {}) {
    detail::ByteReader r(data);
    if (data.size() < detail::kStoreMagic.size() || r.bytes(detail::kStoreMagic.size()) != detail::kStoreMagic)
        throw CorruptFileError("not a vector store file (bad magic)");
    const auto header_len = r.u32();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.bytes(header_len));
    } catch (const nlohmann::json::parse_error &) {
        throw CorruptFileError("vector store header is not valid JSON");
    }
    std::size_t dim = 0, count = 0;
    StoreMetadata meta;
    try {
        if (header.at("format").get<std::string>() != "casat-vector-store")
            throw CorruptFileError("unexpected store format tag");
        const int version = header.at("version").get<int>();
        if (version != detail::kStoreVersion)
            throw VersionMismatchError("vector store version " + std::to_string(version) + " is not supported (expected " +
                                       std::to_string(detail::kStoreVersion) + ")");
        dim = header.at("dimension").get<std::size_t>();
        count = header.at("chunk_count").get<std::size_t>();
        meta.corpus = header.at("corpus").get<std::string>();
        meta.embedder_id = header.at("embedder_id").get<std::string>();
        meta.chunk_params.chunk_size = header.at("chunk_size").get<std::size_t>();
        meta.chunk_params.overlap = header.at("chunk_overlap").get<std::size_t>();
    } catch (const nlohmann::json::exception &e) {
        throw CorruptFileError(std::string("vector store header: ") + e.what());
    }
    std::vector<Chunk> chunks;
    chunks.reserve(std::min<std::size_t>(count, data.size()));
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t rec_len = r.u32();
        const std::size_t rec_start = r.pos();
        Chunk c;
        c.id = r.u64();
        c.seq = r.u32();
        const std::uint32_t n_window = r.u32();
        if (n_window > data.size()) throw CorruptFileError("vector store record is malformed");
        for (std::uint32_t k = 0; k < n_window; ++k) c.plot_window.push_back(r.u32());
        c.text = std::string(r.bytes(r.u32()));
        std::vector<double> values(dim);
        for (auto &x : values) x = r.f64();
        if (r.pos() - rec_start != rec_len) throw CorruptFileError("vector store record length mismatch");
        try {
            c.vector = Vector::from_unit(std::move(values));
        } catch (const InputError &e) {
            throw CorruptFileError(std::string("vector store chunk ") + std::to_string(c.id) + ": " + e.what());
        }
        chunks.push_back(std::move(c));
    }
    if (!r.at_end()) throw CorruptFileError("trailing bytes after the last vector store record");
    std::vector<std::string> warnings;
    if (!expected_embedder_id.empty() && expected_embedder_id != meta.embedder_id)
        warnings.push_back("store was built with embedder '" + meta.embedder_id + "' but '" +
                           std::string(expected_embedder_id) + "' is configured");
    try {
        return {VectorStore(std::move(chunks), dim, std::move(meta)), std::move(warnings)};
    } catch (const InputError &e) {
        throw CorruptFileError(std::string("vector store: ") + e.what());
    }
}

inline void save_store(const VectorStore &store, const std::string &path) { write_file(path, serialize_store(store)); }

inline StoreLoad load_store(const std::string &path, std::string_view expected_embedder_id = {}) {
    return deserialize_store(read_file(path), expected_embedder_id);
}

} // namespace casat
