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

// Sentence-embedding contract: unit vectors, cosine similarity, a
// deterministic hashed-trigram mock, and a JSON-over-HTTP remote backend.

#include <atomic>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "casat/digest.hpp"
#include "casat/error.hpp"
#include "casat/http.hpp"
#include "casat/text.hpp"

namespace casat {

inline constexpr double kUnitNormTolerance = 1e-9;

// Immutable unit-norm vector.
class Vector {
  public:
    Vector() = default;

    // Scales raw to unit length. Rejects zero, empty and non-finite input.
    static Vector normalized(std::vector<double> raw) {
        if (raw.empty()) throw InputError("empty vector");
        double sq = 0.0;
        for (double x : raw) {
            if (!std::isfinite(x)) throw InputError("non-finite vector component");
            sq += x * x;
        }
        if (!(sq > 0.0) || !std::isfinite(sq)) throw InputError("cannot normalize a zero vector");
        const double inv = 1.0 / std::sqrt(sq);
        for (double &x : raw) x *= inv;
        return Vector(std::move(raw));
    }

    // Takes values that are already unit length, bit for bit (used when loading stores).
    static Vector from_unit(std::vector<double> values) {
        if (values.empty()) throw InputError("empty vector");
        double sq = 0.0;
        for (double x : values) {
            if (!std::isfinite(x)) throw InputError("non-finite vector component");
            sq += x * x;
        }
        if (std::abs(std::sqrt(sq) - 1.0) > kUnitNormTolerance) throw InputError("vector is not unit-normalized");
        return Vector(std::move(values));
    }

    std::span<const double> values() const noexcept { return v_; }
    std::size_t dimension() const noexcept { return v_.size(); }
    double operator[](std::size_t i) const { return v_[i]; }
    bool operator==(const Vector &) const = default;

  private:
    explicit Vector(std::vector<double> v) : v_(std::move(v)) {}
    std::vector<double> v_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double cosine_similarity(const Vector &u, const Vector &v) {
    if (u.dimension() != v.dimension())
        throw InputError("dimension mismatch: " + std::to_string(u.dimension()) + " vs " +
                         std::to_string(v.dimension()));
    return dot(u.values(), v.values());
}

struct EmbedderSpec {
    std::string backend_id = "mock-trigram";
    std::size_t dimension = 64;
    std::string endpoint;
    std::string auth_env;
    http::RetryPolicy retry;
    int max_concurrency = 4;
    int timeout_ms = 60000;

    void validate() const {
        if (dimension < 8) throw ConfigError("embedding dimension must be >= 8");
        if (backend_id.empty()) throw ConfigError("embedder backend id is empty");
    }
};

class Embedder {
  public:
    virtual ~Embedder() = default;
    virtual const EmbedderSpec &spec() const noexcept = 0;
    virtual std::vector<Vector> embed_batch(const std::vector<std::string> &texts) = 0;

    Vector embed(const std::string &text) { return std::move(embed_batch({text}).front()); }
    std::size_t dimension() const noexcept { return spec().dimension; }
    const std::string &id() const noexcept { return spec().backend_id; }
};

namespace detail {
inline std::string require_text(const std::string &t) {
    std::string norm = text::normalize_whitespace(t);
    if (norm.empty()) throw InputError("cannot embed empty text");
    return norm;
}
} // namespace detail

// Character-trigram feature hashing into D buckets, then L2 normalization.
// Input is whitespace-normalized and ASCII case-folded; boundary markers
// guarantee at least one trigram per non-empty string.
class MockEmbedder : public Embedder {
  public:
    explicit MockEmbedder(std::size_t dimension = 64) {
        spec_.backend_id = "mock-trigram";
        spec_.dimension = dimension;
        spec_.validate();
    }

    const EmbedderSpec &spec() const noexcept override { return spec_; }

    std::vector<Vector> embed_batch(const std::vector<std::string> &texts) override {
        std::vector<Vector> out;
        out.reserve(texts.size());
        for (const auto &t : texts) out.push_back(embed_one(t));
        return out;
    }

    Vector embed_one(const std::string &t) const {
        const std::u32string cps = U"\x02" + text::decode(text::fold_case(detail::require_text(t))) + U"\x03";
        std::vector<double> buckets(spec_.dimension, 0.0);
        for (std::size_t i = 0; i + 3 <= cps.size(); ++i) {
            const std::string gram = text::encode(std::u32string_view(cps).substr(i, 3));
            buckets[fnv1a64(gram) % spec_.dimension] += 1.0;
        }
        return Vector::normalized(std::move(buckets));
    }

  private:
    EmbedderSpec spec_;
};

// Remote embedder: POST {"texts": [...]} -> {"vectors": [[...], ...]}.
class HttpEmbedder : public Embedder {
  public:
    static constexpr std::size_t kBatch = 64;

    HttpEmbedder(EmbedderSpec spec, std::shared_ptr<http::Transport> transport,
                 http::Sleeper sleep = http::real_sleeper())
        : spec_(std::move(spec)), transport_(std::move(transport)), sleep_(std::move(sleep)) {
        spec_.validate();
        if (spec_.endpoint.empty()) throw ConfigError("remote embedder needs an endpoint");
        http::split_url(spec_.endpoint);
        if (!spec_.auth_env.empty()) api_key_ = http::require_env(spec_.auth_env);
    }

    explicit HttpEmbedder(EmbedderSpec spec)
        : HttpEmbedder(spec, std::make_shared<http::HttplibTransport>(std::chrono::milliseconds(spec.timeout_ms))) {}

    const EmbedderSpec &spec() const noexcept override { return spec_; }

    std::vector<Vector> embed_batch(const std::vector<std::string> &texts) override {
        std::vector<std::string> norm;
        norm.reserve(texts.size());
        for (const auto &t : texts) norm.push_back(detail::require_text(t));

        const std::size_t n_batches = (norm.size() + kBatch - 1) / kBatch;
        std::vector<std::vector<Vector>> parts(n_batches);
        std::vector<std::exception_ptr> errors(n_batches);
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t b = next++; b < n_batches; b = next++) {
                try {
                    const auto first = norm.begin() + static_cast<std::ptrdiff_t>(b * kBatch);
                    const auto last = norm.begin() + static_cast<std::ptrdiff_t>(std::min(norm.size(), (b + 1) * kBatch));
                    parts[b] = request({first, last});
                } catch (...) {
                    errors[b] = std::current_exception();
                }
            }
        };
        {
            std::vector<std::jthread> pool;
            const auto n_workers = std::min<std::size_t>(n_batches, static_cast<std::size_t>(std::max(1, spec_.max_concurrency)));
            for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
            worker();
        }
        std::vector<Vector> out;
        out.reserve(norm.size());
        for (std::size_t b = 0; b < n_batches; ++b) {
            if (errors[b]) std::rethrow_exception(errors[b]);
            for (auto &v : parts[b]) out.push_back(std::move(v));
        }
        return out;
    }

  private:
    std::vector<Vector> request(const std::vector<std::string> &texts) {
        http::Headers headers;
        if (!api_key_.empty()) headers.emplace_back("Authorization", "Bearer " + api_key_);
        const nlohmann::json body = {{"texts", texts}};
        const std::string raw = http::post_with_retry(*transport_, spec_.endpoint, body.dump(), headers, spec_.retry, sleep_);
        std::vector<std::vector<double>> rows;
        try {
            rows = nlohmann::json::parse(raw).at("vectors").get<std::vector<std::vector<double>>>();
        } catch (const nlohmann::json::exception &e) {
            throw TransportError(std::string("malformed embedding response: ") + e.what(), 200);
        }
        if (rows.size() != texts.size()) throw TransportError("embedding response has wrong vector count", 200);
        std::vector<Vector> out;
        for (auto &r : rows) {
            if (r.size() != spec_.dimension)
                throw TransportError("embedding response has dimension " + std::to_string(r.size()) + ", expected " +
                                         std::to_string(spec_.dimension),
                                     200);
            out.push_back(Vector::normalized(std::move(r)));
        }
        return out;
    }

    EmbedderSpec spec_;
    std::shared_ptr<http::Transport> transport_;
    http::Sleeper sleep_;
    std::string api_key_;
};

inline std::unique_ptr<Embedder> make_embedder(const EmbedderSpec &spec) {
    spec.validate();
    if (spec.backend_id == "mock-trigram" || spec.backend_id == "mock") return std::make_unique<MockEmbedder>(spec.dimension);
    return std::make_unique<HttpEmbedder>(spec);
}

} // namespace casat
