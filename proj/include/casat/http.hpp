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

// Shared HTTP plumbing for the remote backends: a minimal POST transport
// interface, a cpp-httplib implementation, and the retry loop.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>

#include "casat/error.hpp"

namespace casat::http {

struct Response {
    int status = 0;
    std::string body;
};

using Headers = std::vector<std::pair<std::string, std::string>>;

// Issues a JSON POST. Implementations throw TimeoutError on timeouts and
// TransportError(status 0) on connection failures; HTTP error statuses are
// returned, not thrown.
class Transport {
  public:
    virtual ~Transport() = default;
    virtual Response post_json(const std::string &url, const std::string &body, const Headers &headers) = 0;
};

struct Url {
    std::string origin; // scheme://host[:port]
    std::string path;
};

inline Url split_url(const std::string &url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint '" + url + "' is not an absolute URL");
    const auto scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw ConfigError("unsupported URL scheme '" + scheme + "'");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

class HttplibTransport : public Transport {
  public:
    explicit HttplibTransport(std::chrono::milliseconds timeout = std::chrono::seconds(60)) : timeout_(timeout) {}

    Response post_json(const std::string &url, const std::string &body, const Headers &headers) override {
        const Url u = split_url(url);
        httplib::Client client(u.origin);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());
        httplib::Headers h;
        for (const auto &[k, v] : headers) h.emplace(k, v);
        auto res = client.Post(u.path, h, body, "application/json");
        if (!res) {
            const auto err = res.error();
            if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                err == httplib::Error::Write)
                throw TimeoutError("request to " + url + " timed out (" + httplib::to_string(err) + ")");
            throw TransportError("request to " + url + " failed: " + httplib::to_string(err), 0);
        }
        return {res->status, res->body};
    }

  private:
    std::chrono::milliseconds timeout_;
};

struct RetryPolicy {
    int attempts = 3;
    int backoff_ms = 500;
};

inline bool is_retryable_status(int status) { return status == 429 || (status >= 500 && status <= 599); }

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline Sleeper real_sleeper() {
    return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

// Runs call() up to policy.attempts times. Retries on 429, 5xx and
// timeouts with exponential backoff (backoff_ms * 2^(attempt-1)); any other
// non-2xx status fails immediately. Returns the 2xx response body.
inline std::string post_with_retry(Transport &transport, const std::string &url, const std::string &body,
                                   const Headers &headers, const RetryPolicy &policy, const Sleeper &sleep) {
    if (policy.attempts < 1) throw ConfigError("retry attempts must be >= 1");
    for (int attempt = 1;; ++attempt) {
        const bool last = attempt >= policy.attempts;
        try {
            Response res = transport.post_json(url, body, headers);
            if (res.status >= 200 && res.status < 300) return std::move(res.body);
            if (!is_retryable_status(res.status) || last)
                throw TransportError("HTTP " + std::to_string(res.status) + " from " + url +
                                         (attempt > 1 ? " after " + std::to_string(attempt) + " attempts" : ""),
                                     res.status);
        } catch (const TimeoutError &) {
            if (last) throw;
        }
        sleep(std::chrono::milliseconds(static_cast<long long>(policy.backoff_ms) << std::min(attempt - 1, 20)));
    }
}

// Reads a secret from the environment; an empty value counts as missing.
inline std::string require_env(const std::string &name) {
    if (name.empty()) throw ConfigError("no auth environment variable configured");
    const char *v = std::getenv(name.c_str());
    if (!v || !*v) throw ConfigError("environment variable " + name + " is not set");
    return v;
}

} // namespace casat::http
