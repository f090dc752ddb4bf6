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

// Corpus ingestion: SubRip and JSONL readers producing the ordered dialogue
// sequence, plus the translation-record JSONL writer/reader.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "casat/error.hpp"
#include "casat/text.hpp"

namespace casat {

using ordered_json = nlohmann::ordered_json;

struct Timestamp {
    std::int64_t start_ms = 0;
    std::int64_t end_ms = 0;
    bool operator==(const Timestamp &) const = default;
};

struct Dialogue {
    std::size_t index = 0;
    std::string text;
    std::optional<std::string> speaker;
    std::optional<Timestamp> timestamp;
    std::optional<std::string> reference;
    bool operator==(const Dialogue &) const = default;
};

struct CorpusInfo {
    std::string name = "corpus";
    std::string source_lang = "en";
    std::string target_lang = "hi";
};

// BCP-47 shape check only (primary subtag plus alphanumeric subtags); no registry lookup.
inline bool is_valid_language_tag(std::string_view tag) {
    static const std::regex re("^[A-Za-z]{2,8}(-[A-Za-z0-9]{1,8})*$");
    return std::regex_match(tag.begin(), tag.end(), re);
}

struct Corpus {
    std::vector<Dialogue> dialogues;
    std::string source_lang = "en";
    std::string target_lang = "hi";
    std::string name = "corpus";

    std::size_t size() const noexcept { return dialogues.size(); }
    const Dialogue &operator[](std::size_t i) const { return dialogues[i]; }
    bool operator==(const Corpus &) const = default;

    void validate() const {
        if (dialogues.empty()) throw EmptyCorpusError();
        if (!is_valid_language_tag(source_lang)) throw InputError("invalid source language tag '" + source_lang + "'");
        if (!is_valid_language_tag(target_lang)) throw InputError("invalid target language tag '" + target_lang + "'");
        for (std::size_t i = 0; i < dialogues.size(); ++i) {
            if (dialogues[i].index != i) throw InputError("dialogue indices must be dense from 0");
            if (text::normalize_whitespace(dialogues[i].text).empty())
                throw InputError("empty dialogue text at index " + std::to_string(i));
        }
    }
};

namespace detail {

inline std::vector<std::string> split_lines(std::string_view raw) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= raw.size()) {
        std::size_t nl = raw.find('\n', start);
        if (nl == std::string_view::npos) nl = raw.size();
        std::string line(raw.substr(start, nl - start));
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
        start = nl + 1;
    }
    return lines;
}

inline bool is_blank(std::string_view s) { return text::normalize_whitespace(s).empty(); }

inline bool all_digits(std::string_view s) {
    if (s.empty()) return false;
    for (char c : s)
        if (c < '0' || c > '9') return false;
    return true;
}

// Drops <tag ...> markup and {\override} blocks.
inline std::string strip_markup(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '<' && i + 1 < s.size() &&
            (s[i + 1] == '/' || std::isalpha(static_cast<unsigned char>(s[i + 1])))) {
            const auto close = s.find('>', i);
            if (close != std::string_view::npos) {
                i = close;
                continue;
            }
        }
        if (s[i] == '{' && i + 1 < s.size() && s[i + 1] == '\\') {
            const auto close = s.find('}', i);
            if (close != std::string_view::npos) {
                i = close;
                continue;
            }
        }
        out.push_back(s[i]);
    }
    return out;
}

inline std::optional<std::int64_t> parse_srt_time(std::string_view s) {
    static const std::regex re(R"(^\s*(\d{1,3}):(\d{2}):(\d{2})[,.](\d{3})\s*$)");
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_match(s.begin(), s.end(), m, re)) return std::nullopt;
    const std::int64_t h = std::stoll(m[1].str()), mi = std::stoll(m[2].str()), sec = std::stoll(m[3].str()),
                       ms = std::stoll(m[4].str());
    if (mi >= 60 || sec >= 60) return std::nullopt;
    return ((h * 60 + mi) * 60 + sec) * 1000 + ms;
}

inline Timestamp parse_srt_timing(std::string_view line, std::size_t lineno) {
    const auto arrow = line.find("-->");
    if (arrow == std::string_view::npos) throw ParseError("missing '-->' timestamp separator", lineno);
    auto rhs = line.substr(arrow + 3);
    // Some encoders append positioning (X1:... Y2:...) after the end time.
    while (!rhs.empty() && rhs.front() == ' ') rhs.remove_prefix(1);
    if (const auto sp = rhs.find(' '); sp != std::string_view::npos) rhs = rhs.substr(0, sp);
    const auto start = parse_srt_time(line.substr(0, arrow));
    const auto end = parse_srt_time(rhs);
    if (!start || !end) throw ParseError("malformed timestamp", lineno);
    if (*end < *start) throw ParseError("cue ends before it starts", lineno);
    return {*start, *end};
}

} // namespace detail

inline Corpus parse_srt(std::string_view raw, const CorpusInfo &info = {}) {
    raw = text::strip_bom(raw);
    const auto lines = detail::split_lines(raw);
    Corpus corpus{{}, info.source_lang, info.target_lang, info.name};
    std::size_t i = 0;
    bool saw_cue = false;
    while (i < lines.size()) {
        if (detail::is_blank(lines[i])) {
            ++i;
            continue;
        }
        const std::size_t index_line = i + 1;
        const std::string idx = text::normalize_whitespace(lines[i]);
        if (!detail::all_digits(idx)) {
            if (lines[i].find("-->") != std::string::npos) throw ParseError("missing cue index", index_line);
            throw ParseError("expected numeric cue index", index_line);
        }
        ++i;
        if (i >= lines.size() || detail::is_blank(lines[i])) throw ParseError("missing timestamp line", i + 1);
        const Timestamp ts = detail::parse_srt_timing(lines[i], i + 1);
        ++i;
        std::vector<std::string> text_lines;
        while (i < lines.size() && !detail::is_blank(lines[i])) {
            if (detail::all_digits(text::normalize_whitespace(lines[i])) && i + 1 < lines.size() &&
                lines[i + 1].find("-->") != std::string::npos)
                throw ParseError("missing blank-line separator before cue", i + 1);
            text_lines.push_back(lines[i]);
            ++i;
        }
        saw_cue = true;
        std::string body = text::normalize_whitespace(detail::strip_markup(text::join(text_lines, " ")));
        if (body.empty()) continue;
        Dialogue d;
        d.index = corpus.dialogues.size();
        d.text = std::move(body);
        d.timestamp = ts;
        corpus.dialogues.push_back(std::move(d));
    }
    if (!saw_cue || corpus.dialogues.empty()) throw EmptyCorpusError();
    return corpus;
}

inline Corpus parse_jsonl(std::string_view raw, const CorpusInfo &info = {}) {
    raw = text::strip_bom(raw);
    const auto lines = detail::split_lines(raw);
    Corpus corpus{{}, info.source_lang, info.target_lang, info.name};
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::size_t lineno = i + 1;
        if (detail::is_blank(lines[i])) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(lines[i]);
        } catch (const nlohmann::json::parse_error &) {
            throw ParseError("invalid JSON object", lineno);
        }
        if (!obj.is_object()) throw ParseError("expected a JSON object", lineno);
        if (!obj.contains("text")) throw ParseError("missing text", lineno);
        if (!obj["text"].is_string()) throw ParseError("text must be a string", lineno);
        Dialogue d;
        d.index = corpus.dialogues.size();
        d.text = text::normalize_whitespace(obj["text"].get<std::string>());
        if (d.text.empty()) throw ParseError("empty text", lineno);
        auto opt_string = [&](const char *key) -> std::optional<std::string> {
            if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
            if (!obj[key].is_string()) throw ParseError(std::string(key) + " must be a string", lineno);
            return obj[key].get<std::string>();
        };
        d.reference = opt_string("reference");
        d.speaker = opt_string("speaker");
        if (obj.contains("start_ms") && obj.contains("end_ms")) {
            if (!obj["start_ms"].is_number_integer() || !obj["end_ms"].is_number_integer())
                throw ParseError("timestamps must be integers", lineno);
            d.timestamp = Timestamp{obj["start_ms"].get<std::int64_t>(), obj["end_ms"].get<std::int64_t>()};
        }
        corpus.dialogues.push_back(std::move(d));
    }
    if (corpus.dialogues.empty()) throw EmptyCorpusError();
    return corpus;
}

inline std::string to_jsonl(const Corpus &corpus) {
    std::string out;
    for (const auto &d : corpus.dialogues) {
        ordered_json j;
        j["text"] = d.text;
        if (d.speaker) j["speaker"] = *d.speaker;
        if (d.reference) j["reference"] = *d.reference;
        if (d.timestamp) {
            j["start_ms"] = d.timestamp->start_ms;
            j["end_ms"] = d.timestamp->end_ms;
        }
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline std::string read_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string &path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write to '" + path + "' failed");
}

// One translated dialogue. prompt_hash is sha256 of prompt.
struct TranslationRecord {
    std::size_t dialogue_index = 0;
    std::size_t session_id = 0;
    std::string mode;
    std::string source;
    std::string output;
    std::string prompt;
    std::string prompt_hash;
    std::vector<std::uint64_t> context_chunk_ids;
    std::optional<std::string> error;
    bool operator==(const TranslationRecord &) const = default;
};

inline ordered_json to_json(const TranslationRecord &r) {
    ordered_json j;
    j["dialogue_index"] = r.dialogue_index;
    j["session_id"] = r.session_id;
    j["mode"] = r.mode;
    j["source"] = r.source;
    j["output"] = r.output;
    j["prompt_hash"] = r.prompt_hash;
    j["context_chunk_ids"] = r.context_chunk_ids;
    j["prompt"] = r.prompt;
    if (r.error) j["error"] = *r.error;
    return j;
}

inline TranslationRecord record_from_json(const nlohmann::json &j) {
    TranslationRecord r;
    r.dialogue_index = j.at("dialogue_index").get<std::size_t>();
    r.session_id = j.at("session_id").get<std::size_t>();
    r.mode = j.at("mode").get<std::string>();
    r.source = j.at("source").get<std::string>();
    r.output = j.at("output").get<std::string>();
    r.prompt_hash = j.at("prompt_hash").get<std::string>();
    r.context_chunk_ids = j.at("context_chunk_ids").get<std::vector<std::uint64_t>>();
    r.prompt = j.value("prompt", std::string{});
    if (j.contains("error")) r.error = j["error"].get<std::string>();
    return r;
}

inline std::string records_to_jsonl(const std::vector<TranslationRecord> &records) {
    std::string out;
    for (const auto &r : records) {
        out += to_json(r).dump();
        out += '\n';
    }
    return out;
}

inline void write_records(const std::vector<TranslationRecord> &records, const std::string &path) {
    if (records.empty()) throw InputError("no records to write");
    write_file(path, records_to_jsonl(records));
}

inline std::vector<TranslationRecord> parse_records(std::string_view raw) {
    std::vector<TranslationRecord> out;
    const auto lines = detail::split_lines(text::strip_bom(raw));
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (detail::is_blank(lines[i])) continue;
        try {
            out.push_back(record_from_json(nlohmann::json::parse(lines[i])));
        } catch (const nlohmann::json::exception &e) {
            throw ParseError(std::string("bad record: ") + e.what(), i + 1);
        }
    }
    return out;
}

inline std::vector<TranslationRecord> read_records(const std::string &path) { return parse_records(read_file(path)); }

} // namespace casat
