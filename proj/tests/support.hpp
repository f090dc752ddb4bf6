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

#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "casat/cli.hpp"

#ifndef CASAT_TEST_DATA_DIR
#error "CASAT_TEST_DATA_DIR must be defined"
#endif
#ifndef CASAT_GOLDEN_DIR
#error "CASAT_GOLDEN_DIR must be defined"
#endif

namespace testsupport {

namespace fs = std::filesystem;

inline std::string data(const std::string &name) { return std::string(CASAT_TEST_DATA_DIR) + "/" + name; }
inline std::string golden(const std::string &name) { return std::string(CASAT_GOLDEN_DIR) + "/" + name; }

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    TempDir() {
        std::random_device rd;
        path_ = fs::temp_directory_path() / ("casat-test-" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir &) = delete;
    TempDir &operator=(const TempDir &) = delete;

    std::string operator/(const std::string &name) const { return (path_ / name).string(); }
    const fs::path &path() const { return path_; }

  private:
    fs::path path_;
};

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

inline CliResult cli(const std::vector<std::string> &args) {
    std::ostringstream out, err;
    const int code = casat::cli::run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

inline std::vector<std::string> random_words(std::mt19937_64 &rng, std::size_t n, std::size_t vocab = 40) {
    static const char *kSyll[] = {"ka", "ri", "mo", "te", "lu", "sa", "ne", "po", "di", "gha", "yo", "bre"};
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t id = rng() % vocab;
        std::string w;
        do {
            w += kSyll[id % 12];
            id /= 12;
        } while (id);
        out.push_back(w);
    }
    return out;
}

inline std::string join_words(const std::vector<std::string> &w) {
    std::string s;
    for (std::size_t i = 0; i < w.size(); ++i) s += (i ? " " : "") + w[i];
    return s;
}

} // namespace testsupport
