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

// Prompt templates: plain text with named {placeholders}. Every template has
// a built-in default; a directory of *.txt files overrides them by name.

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "casat/corpus.hpp"
#include "casat/error.hpp"

namespace casat {

struct TemplateSet {
    std::string plot;
    std::string emotion;
    std::string translation;
    std::string context_section;
    std::string style_section;
    std::string source_section;
    std::string judge;
};

using TemplateVars = std::map<std::string, std::string, std::less<>>;

namespace detail {

inline bool is_placeholder_char(char c) { return (c >= 'a' && c <= 'z') || c == '_' || (c >= '0' && c <= '9'); }

// Names of all {identifier} occurrences, in order.
inline std::vector<std::string> placeholders(std::string_view tmpl) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
        if (tmpl[i] != '{') continue;
        std::size_t j = i + 1;
        while (j < tmpl.size() && is_placeholder_char(tmpl[j])) ++j;
        if (j > i + 1 && j < tmpl.size() && tmpl[j] == '}') {
            out.emplace_back(tmpl.substr(i + 1, j - i - 1));
            i = j;
        }
    }
    return out;
}

} // namespace detail

// Substitutes every {name}. A placeholder with no value is an error.
inline std::string render(std::string_view tmpl, const TemplateVars &vars, std::string_view template_name = "template") {
    std::string out;
    out.reserve(tmpl.size());
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
        if (tmpl[i] == '{') {
            std::size_t j = i + 1;
            while (j < tmpl.size() && detail::is_placeholder_char(tmpl[j])) ++j;
            if (j > i + 1 && j < tmpl.size() && tmpl[j] == '}') {
                const std::string_view name = tmpl.substr(i + 1, j - i - 1);
                const auto it = vars.find(name);
                if (it == vars.end())
                    throw TemplateError(std::string(template_name) + ": no value for placeholder {" + std::string(name) + "}",
                                        std::string(name));
                out += it->second;
                i = j;
                continue;
            }
        }
        out.push_back(tmpl[i]);
    }
    return out;
}

inline void require_placeholders(std::string_view tmpl, std::string_view template_name,
                                 std::initializer_list<std::string_view> required) {
    const auto present = detail::placeholders(tmpl);
    for (auto name : required)
        if (std::find(present.begin(), present.end(), name) == present.end())
            throw TemplateError(std::string(template_name) + " template is missing placeholder {" + std::string(name) + "}",
                                std::string(name));
}

inline void validate(const TemplateSet &t) {
    require_placeholders(t.plot, "plot", {"dialogues"});
    require_placeholders(t.emotion, "emotion", {"dialogues"});
    require_placeholders(t.translation, "translation", {"target_lang"});
    require_placeholders(t.context_section, "context_section", {"context"});
    require_placeholders(t.style_section, "style_section", {"style"});
    require_placeholders(t.source_section, "source_section", {"source"});
    require_placeholders(t.judge, "judge", {"source", "translation_a", "translation_b"});
}

inline TemplateSet default_templates() {
    TemplateSet t;
    t.plot =
        "You are the plot designer for a film translation team. The dialogues below come from "
        "consecutive scenes (sessions {session_ids}) of the same {source_lang} film. Summarise the plot "
        "of these scenes in plain prose: who is speaking to whom, what is happening, how the characters "
        "relate to each other, and the mood of each scene. Do not translate anything.\n"
        "\n"
        "Dialogues:\n"
        "{dialogues}\n";
    t.emotion =
        "Read the following scene from a film and describe the dominant emotion of the scene in a few "
        "words (for example: tense, playful, grieving, hopeful). Reply with the description only.\n"
        "\n"
        "Scene:\n"
        "{dialogues}\n";
    t.translation =
        "You are an expert translator of film and television dialogue from {source_lang} to {target_lang}. "
        "Translate the dialogue given at the end so that it sounds natural to a native {target_lang} "
        "audience. Keep the meaning, tone and register of the speaker, adapt idioms and cultural references "
        "instead of translating them word for word, and follow the plot context and style guide when they "
        "are provided. Reply with the {target_lang} translation only.";
    t.context_section = "Plot context (most relevant first):\n{context}";
    t.style_section = "Style guide for the current scene:\n{style}";
    t.source_section = "{source}";
    t.judge =
        "You are judging two {target_lang} translations of a line of {source_lang} film dialogue. Prefer the "
        "translation that keeps the meaning, reads naturally to a native audience, and carries the tone, "
        "humour and cultural nuance of the original.\n"
        "\n"
        "Source:\n"
        "{source}\n"
        "\n"
        "[A]\n"
        "{translation_a}\n"
        "[B]\n"
        "{translation_b}\n"
        "[END]\n"
        "\n"
        "Explain your choice in one sentence, then end your reply with exactly one of: A, B, TIE.\n";
    return t;
}

// Reads <dir>/<name>.txt for each template present; missing files keep the default.
inline TemplateSet load_templates(const std::string &dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("template directory '" + dir + "' does not exist");
    TemplateSet t = default_templates();
    auto load = [&](const char *name, std::string &slot) {
        const auto p = fs::path(dir) / (std::string(name) + ".txt");
        if (fs::exists(p)) slot = read_file(p.string());
    };
    load("plot", t.plot);
    load("emotion", t.emotion);
    load("translation", t.translation);
    load("context_section", t.context_section);
    load("style_section", t.style_section);
    load("source_section", t.source_section);
    load("judge", t.judge);
    validate(t);
    return t;
}

// Display name for the handful of tags the shipped resources cover.
inline std::string language_name(std::string_view tag) {
    static const std::map<std::string, std::string, std::less<>> names = {
        {"en", "English"}, {"hi", "Hindi"}, {"bn", "Bengali"}, {"te", "Telugu"},
        {"ta", "Tamil"},   {"mr", "Marathi"}, {"fr", "French"}, {"de", "German"}, {"es", "Spanish"}};
    const auto primary = text::fold_case(tag.substr(0, tag.find('-')));
    const auto it = names.find(primary);
    return it == names.end() ? std::string(tag) : it->second;
}

} // namespace casat
