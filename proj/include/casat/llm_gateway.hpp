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

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "casat/digest.hpp"
#include "casat/error.hpp"
#include "casat/http.hpp"
#include "casat/text.hpp"

namespace casat::llm {

enum class Tag { Plot, Emotion, Translation, Judge };

inline std::string_view to_string(Tag t) {
    switch (t) {
    case Tag::Plot: return "plot";
    case Tag::Emotion: return "emotion";
    case Tag::Translation: return "translation";
    case Tag::Judge: return "judge";
    }
    return "unknown";
}

// Sampling temperatures: plot 0.5 and emotion/translation 0.2 are the
// published settings; judge runs greedy for reproducible evaluation.
inline double default_temperature(Tag t) {
    switch (t) {
    case Tag::Plot: return 0.5;
    case Tag::Emotion: return 0.2;
    case Tag::Translation: return 0.2;
    case Tag::Judge: return 0.0;
    }
    return 0.0;
}

inline int default_max_tokens(Tag t) { return t == Tag::Plot ? 1024 : 512; }

struct ChatRequest {
    std::string system;
    std::string user;
    double temperature = 0.2;
    int max_tokens = 512;
    Tag tag = Tag::Translation;

    static ChatRequest make(Tag tag, std::string system, std::string user) {
        return {std::move(system), std::move(user), default_temperature(tag), default_max_tokens(tag), tag};
    }

    void validate() const {
        if (user.empty()) throw InputError("chat request has an empty user message");
        if (!(temperature >= 0.0 && temperature <= 2.0)) throw InputError("temperature must lie in [0, 2]");
        if (max_tokens < 1) throw InputError("max_tokens must be positive");
    }
};

class Backend {
  public:
    virtual ~Backend() = default;
    virtual std::string complete(const ChatRequest &request) = 0;
};

// Deterministic offline backend; output is a pure function of (tag, user).
class MockBackend : public Backend {
  public:
    std::string complete(const ChatRequest &request) override { return reply(request.tag, request.user); }

    static std::string reply(Tag tag, std::string_view user) {
        switch (tag) {
        case Tag::Translation: return "[MT] " + std::string(user);
        case Tag::Plot: return "[PLOT] " + std::string(user);
        case Tag::Emotion: {
            static constexpr std::string_view kLabels[] = {"tense", "cheerful", "calm",
                                                           "melancholic", "angry", "playful"};
            return std::string(kLabels[fnv1a64(user) % std::size(kLabels)]);
        }
        case Tag::Judge: return judge_reply(user);
        }
        return {};
    }

  private:
    // Prefers the longer of the two translations delimited by [A] / [B] / [END];
    // symmetric in presentation order.
    static std::string judge_reply(std::string_view user) {
        const auto a = user.find("[A]");
        const auto b = user.find("[B]", a == std::string_view::npos ? 0 : a);
        const auto end = user.find("[END]", b == std::string_view::npos ? 0 : b);
        if (a == std::string_view::npos || b == std::string_view::npos || end == std::string_view::npos)
            return "Verdict: TIE";
        const auto len_a = text::codepoint_count(text::normalize_whitespace(user.substr(a + 3, b - a - 3)));
        const auto len_b = text::codepoint_count(text::normalize_whitespace(user.substr(b + 3, end - b - 3)));
        if (len_a == len_b) return "Verdict: TIE";
        return len_a > len_b ? "Verdict: A" : "Verdict: B";
    }
};

enum class BackendKind { HttpChat, Mock };

struct BackendSpec {
    BackendKind kind = BackendKind::Mock;
    std::string endpoint;
    std::string model;
    std::string auth_env;
    int max_concurrency = 4;
    http::RetryPolicy retry;
    int timeout_ms = 60000;

    void validate() const {
        if (max_concurrency < 1) throw ConfigError("max_concurrency must be >= 1");
        if (retry.attempts < 1) throw ConfigError("retry attempts must be >= 1");
        if (retry.backoff_ms < 0) throw ConfigError("retry backoff must be >= 0");
        if (kind == BackendKind::HttpChat) {
            if (endpoint.empty()) throw ConfigError("http-chat backend needs an endpoint");
            if (model.empty()) throw ConfigError("http-chat backend needs a model");
        }
    }
};

// OpenAI-compatible chat-completions client. endpoint is the full URL of the
// completions route, e.g. https://host/v1/chat/completions.
class HttpChatBackend : public Backend {
  public:
    HttpChatBackend(BackendSpec spec, std::shared_ptr<http::Transport> transport,
                    http::Sleeper sleep = http::real_sleeper())
        : spec_(std::move(spec)), transport_(std::move(transport)), sleep_(std::move(sleep)) {
        spec_.validate();
        api_key_ = http::require_env(spec_.auth_env);
        http::split_url(spec_.endpoint);
    }

    explicit HttpChatBackend(BackendSpec spec)
        : HttpChatBackend(spec, std::make_shared<http::HttplibTransport>(std::chrono::milliseconds(spec.timeout_ms))) {}

    std::string complete(const ChatRequest &request) override {
        nlohmann::json body = {{"model", spec_.model},
                               {"temperature", request.temperature},
                               {"max_tokens", request.max_tokens},
                               {"messages", nlohmann::json::array()}};
        if (!request.system.empty()) body["messages"].push_back({{"role", "system"}, {"content", request.system}});
        body["messages"].push_back({{"role", "user"}, {"content", request.user}});
        const http::Headers headers = {{"Authorization", "Bearer " + api_key_}};
        const std::string raw =
            http::post_with_retry(*transport_, spec_.endpoint, body.dump(), headers, spec_.retry, sleep_);
        try {
            const auto j = nlohmann::json::parse(raw);
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception &e) {
            throw TransportError(std::string("malformed chat-completions response: ") + e.what(), 200);
        }
    }

  private:
    BackendSpec spec_;
    std::shared_ptr<http::Transport> transport_;
    http::Sleeper sleep_;
    std::string api_key_;
};

inline std::shared_ptr<Backend> make_backend(const BackendSpec &spec) {
    spec.validate();
    if (spec.kind == BackendKind::Mock) return std::make_shared<MockBackend>();
    return std::make_shared<HttpChatBackend>(spec);
}

// Result slot of a batch call: either text or the exception that item raised.
struct Completion {
    std::string text;
    std::exception_ptr error;

    bool ok() const noexcept { return !error; }
    const std::string &value() const {
        if (error) std::rethrow_exception(error);
        return text;
    }
};

// Thread-safe front for one backend. At most max_concurrency requests are in
// flight across all callers.
class Gateway {
  public:
    explicit Gateway(std::shared_ptr<Backend> backend, int max_concurrency = 4)
        : backend_(std::move(backend)), max_concurrency_(max_concurrency < 1 ? 1 : max_concurrency),
          slots_(std::min<std::ptrdiff_t>(max_concurrency_, kMaxSlots)) {}

    int max_concurrency() const noexcept { return max_concurrency_; }

    void enable_audit_log(const std::string &path) {
        std::lock_guard lock(audit_mutex_);
        audit_.open(path, std::ios::app);
        if (!audit_) throw IoError("cannot open audit log '" + path + "'");
    }

    std::string complete(const ChatRequest &request) {
        request.validate();
        slots_.acquire();
        struct Release {
            std::counting_semaphore<kMaxSlots> &s;
            ~Release() { s.release(); }
        } release{slots_};
        const auto t0 = std::chrono::steady_clock::now();
        std::string out = backend_->complete(request);
        if (audit_.is_open()) audit(request, out, std::chrono::steady_clock::now() - t0);
        return out;
    }

    std::vector<Completion> complete_batch(const std::vector<ChatRequest> &requests) {
        std::vector<Completion> results(requests.size());
        if (requests.empty()) return results;
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i = next++; i < requests.size(); i = next++) {
                try {
                    results[i].text = complete(requests[i]);
                } catch (...) {
                    results[i].error = std::current_exception();
                }
            }
        };
        const std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(max_concurrency_), requests.size());
        {
            std::vector<std::jthread> workers;
            for (std::size_t w = 1; w < n_workers; ++w) workers.emplace_back(worker);
            worker();
        }
        return results;
    }

  private:
    static constexpr std::ptrdiff_t kMaxSlots = 1024;

    void audit(const ChatRequest &req, const std::string &out, std::chrono::steady_clock::duration latency) {
        nlohmann::ordered_json j;
        j["prompt_hash"] = sha256_hex(req.system + "\n" + req.user);
        j["tag"] = to_string(req.tag);
        j["latency_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(latency).count();
        j["prompt_tokens"] = text::split_whitespace(req.system).size() + text::split_whitespace(req.user).size();
        j["completion_tokens"] = text::split_whitespace(out).size();
        std::lock_guard lock(audit_mutex_);
        audit_ << j.dump() << '\n';
        audit_.flush();
    }

    std::shared_ptr<Backend> backend_;
    int max_concurrency_;
    std::counting_semaphore<kMaxSlots> slots_;
    std::mutex audit_mutex_;
    std::ofstream audit_;
};

} // namespace casat::llm
