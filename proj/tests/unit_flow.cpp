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

#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <random>
#include <thread>

#include <httplib.h>

#include "casat/cli.hpp"
#include "casat/dam.hpp"
#include "casat/eval.hpp"
#include "casat/http.hpp"
#include "casat/llm_gateway.hpp"
#include "casat/pipeline.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace casat;
using testsupport::TempDir;

namespace {

const std::string kRes = CASAT_RESOURCE_DIR;

dam::LanguageResources english() { return dam::load_language_resources(kRes + "/lexicons", "en"); }
dam::LanguageResources hindi() { return dam::load_language_resources(kRes + "/lexicons", "hi"); }

// Replies with a fixed string for every request.
class FixedBackend : public llm::Backend {
  public:
    explicit FixedBackend(std::string reply) : reply_(std::move(reply)) {}
    std::string complete(const llm::ChatRequest &r) override {
        std::lock_guard lock(m_);
        seen.push_back(r);
        return reply_;
    }
    std::vector<llm::ChatRequest> seen;

  private:
    std::string reply_;
    std::mutex m_;
};

// Scripted transport: pops one outcome per call. status 0 means "time out".
class ScriptedTransport : public http::Transport {
  public:
    explicit ScriptedTransport(std::vector<int> statuses, std::string body = "{}")
        : statuses_(std::move(statuses)), body_(std::move(body)) {}
    http::Response post_json(const std::string &, const std::string &body, const http::Headers &headers) override {
        ++calls;
        last_body = body;
        last_headers = headers;
        const int s = calls <= static_cast<int>(statuses_.size()) ? statuses_[calls - 1] : 200;
        if (s == 0) throw TimeoutError("scripted timeout");
        return {s, s == 200 ? body_ : "error"};
    }
    int calls = 0;
    std::string last_body;
    http::Headers last_headers;

  private:
    std::vector<int> statuses_;
    std::string body_;
};

struct RecordingSleeper {
    std::vector<long long> waits;
    http::Sleeper fn() {
        return [this](std::chrono::milliseconds d) { waits.push_back(d.count()); };
    }
};

// Sets an environment variable for the lifetime of the object.
class ScopedEnv {
  public:
    ScopedEnv(const char *name, const char *value) : name_(name) {
        if (value) ::setenv(name, value, 1);
        else ::unsetenv(name);
    }
    ~ScopedEnv() { ::unsetenv(name_.c_str()); }

  private:
    std::string name_;
};

// Local HTTP server on an ephemeral port.
class LocalServer {
  public:
    LocalServer() = default;
    void start() {
        port_ = server.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~LocalServer() {
        server.stop();
        if (thread_.joinable()) thread_.join();
    }
    std::string url(const std::string &path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }
    httplib::Server server;

  private:
    int port_ = 0;
    std::thread thread_;
};

} // namespace

// ---------------------------------------------------------------- DAM

TEST(PosTag, BaselineEnglishTheCatRuns) {
    dam::BaselineTagger tagger(english().tagger_lexicon);
    const auto got = dam::pos_tag("the cat runs", tagger);
    const std::vector<dam::TaggedToken> want = {
        {"the", dam::PosTag::Determiner}, {"cat", dam::PosTag::Noun}, {"runs", dam::PosTag::Verb}};
    EXPECT_EQ(got, want);
}

TEST(PosTag, EmptyAndUnknown) {
    dam::BaselineTagger tagger(english().tagger_lexicon);
    EXPECT_THROW(dam::pos_tag("   ", tagger), InputError);
    EXPECT_EQ(dam::pos_tag("zzzz", tagger)[0].tag, dam::PosTag::Noun);
    EXPECT_EQ(dam::pos_tag("glass", tagger)[0].tag, dam::PosTag::Noun);
    EXPECT_EQ(dam::pos_tag("quickly", tagger)[0].tag, dam::PosTag::Adverb);
    EXPECT_EQ(dam::pos_tag("42 ...", tagger)[1].tag, dam::PosTag::Other);
}

TEST(PosTag, HindiLexicon) {
    dam::BaselineTagger tagger(hindi().tagger_lexicon);
    const auto got = dam::pos_tag("मैं घर जाना चाहता हूँ।", tagger);
    ASSERT_EQ(got.size(), 5u);
    EXPECT_EQ(got[0].tag, dam::PosTag::Pronoun);
    EXPECT_EQ(got[2].tag, dam::PosTag::Verb);
    EXPECT_EQ(got[4].token, "हूँ");
}

TEST(PosTag, HttpTaggerProtocol) {
    LocalServer srv;
    srv.server.Post("/tag", [](const httplib::Request &req, httplib::Response &res) {
        const std::string sentence = nlohmann::json::parse(req.body).at("text");
        nlohmann::json out = {{"tokens", nlohmann::json::array()}};
        for (const auto &w : text::split_whitespace(sentence))
            out["tokens"].push_back(nlohmann::json{{"token", std::string(w)}, {"tag", "verb"}});
        res.set_content(out.dump(), "application/json");
    });
    srv.start();
    dam::HttpTagger tagger(srv.url("/tag"), std::make_shared<http::HttplibTransport>());
    const auto got = dam::pos_tag("go run", tagger);
    ASSERT_EQ(got.size(), 2u);
    EXPECT_EQ(got[1], (dam::TaggedToken{"run", dam::PosTag::Verb}));
}

TEST(ContentFunction, RajaMahal) {
    std::vector<dam::TaggedToken> t;
    for (int i = 0; i < 7; ++i) t.push_back({"raja", dam::PosTag::Noun});
    for (int i = 0; i < 3; ++i) t.push_back({"mahal", dam::PosTag::Noun});
    t.push_back({"ka", dam::PosTag::Preposition});
    const auto [fc, ff] = dam::content_function_words(t, 10);
    EXPECT_EQ(fc, (dam::WordCounts{{"raja", 7}, {"mahal", 3}}));
    EXPECT_EQ(ff, (dam::WordCounts{{"ka", 1}}));
}

TEST(ContentFunction, AllFunctionTagged) {
    const std::vector<dam::TaggedToken> t = {{"the", dam::PosTag::Determiner}, {"of", dam::PosTag::Preposition}};
    EXPECT_TRUE(dam::content_function_words(t, 10).first.empty());
}

TEST(ContentFunction, MatchesRecount) {
    std::mt19937_64 rng(31);
    const dam::StyleLexicons lex;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<dam::TaggedToken> t;
        std::map<std::string, std::size_t> c, f;
        const auto words = testsupport::random_words(rng, rng() % 300, 30);
        for (const auto &w : words) {
            const auto tag = static_cast<dam::PosTag>(rng() % 10);
            t.push_back({w, tag});
            const int ti = static_cast<int>(tag);
            if (ti <= 3) c[w]++;
            else if (ti <= 8) f[w]++;
        }
        const std::size_t k = 1 + rng() % 12;
        const auto [fc, ff] = dam::content_function_words(t, k, lex);
        EXPECT_EQ(fc, oracle::rank(c, k));
        EXPECT_EQ(ff, oracle::rank(f, k));
    }
}

TEST(Syllables, Examples) {
    EXPECT_EQ(dam::syllable_count("i"), 1u);
    EXPECT_EQ(dam::syllable_count("banana"), 3u);
    EXPECT_EQ(dam::syllable_count("rhythm"), 1u); // y is a vowel letter
    EXPECT_EQ(dam::syllable_count("नमस्ते"), 3u);  // न, म, स्ते
    EXPECT_EQ(dam::syllable_count("आप"), 2u);      // independent आ, then प
    const auto [mono, poly] = dam::syllabic_words({"I like banana"}, 10);
    EXPECT_EQ(mono, (dam::WordCounts{{"i", 1}})); // l-i-k-e has two vowel groups
    EXPECT_EQ(poly, (dam::WordCounts{{"banana", 1}}));
}

TEST(Syllables, EmptyInput) {
    const auto [m, p] = dam::syllabic_words({}, 10);
    EXPECT_TRUE(m.empty());
    EXPECT_TRUE(p.empty());
}

TEST(ModalIdiom, Examples) {
    dam::StyleLexicons lex;
    lex.modal_words = {"should"};
    lex.idioms = {{"the", "ice"}, {"break", "the", "ice"}};
    auto [modal, idioms] = dam::modal_idiom_scan({"You should break the ice."}, lex);
    EXPECT_EQ(modal, (dam::WordCounts{{"should", 1}}));
    EXPECT_EQ(idioms, (dam::WordCounts{{"break the ice", 1}}));
    std::tie(modal, idioms) = dam::modal_idiom_scan({"nothing here"}, lex);
    EXPECT_TRUE(modal.empty());
    EXPECT_TRUE(idioms.empty());
}

TEST(Intent, Examples) {
    EXPECT_EQ(dam::intent({"a?", "b?", "c?", "d?", "e."}), dam::Intent::Interrogative);
    EXPECT_EQ(dam::intent({"no punctuation", "at all"}), dam::Intent::Declarative);
    // q/total = 2/10, e/total = 5/10.
    EXPECT_EQ(dam::classify_intent({2, 5, 10}), dam::Intent::Exclamatory);
    EXPECT_EQ(dam::intent({"क्या तुम आओगे?", "हाँ।"}), dam::Intent::Interrogative);
    EXPECT_EQ(dam::intent({"Stop!", "Now.", "Please.", "Go."}), dam::Intent::Declarative); // 1/4 < 0.30
}

TEST(Emotion, TrimFallbackAndPrompt) {
    auto fixed = std::make_shared<FixedBackend>(" tense \n");
    llm::Gateway gw(fixed);
    EXPECT_EQ(dam::emotion({"One.", "Two."}, gw, default_templates()), "tense");
    ASSERT_EQ(fixed->seen.size(), 1u);
    EXPECT_NE(fixed->seen[0].user.find("One."), std::string::npos);
    EXPECT_NE(fixed->seen[0].user.find("Two."), std::string::npos);
    EXPECT_EQ(fixed->seen[0].tag, llm::Tag::Emotion);
    EXPECT_DOUBLE_EQ(fixed->seen[0].temperature, 0.2);
    llm::Gateway empty(std::make_shared<FixedBackend>(""));
    EXPECT_EQ(dam::emotion({"x"}, empty, default_templates()), "neutral");
}

namespace {

// Tags every token as a noun and remembers the sentences it saw.
class RecordingTagger : public dam::Tagger {
  public:
    std::vector<dam::TaggedToken> tag(std::string_view s) override {
        seen.emplace_back(s);
        std::vector<dam::TaggedToken> out;
        for (const auto &w : text::split_whitespace(s)) out.push_back({w, dam::PosTag::Noun});
        return out;
    }
    std::vector<std::string> seen;
};

} // namespace

TEST(BuildStyle, ColdStartUsesSourceSide) {
    auto src = std::make_shared<RecordingTagger>(), tgt = std::make_shared<RecordingTagger>();
    dam::StyleResources res{src, {}, tgt, {}};
    llm::Gateway gw(std::make_shared<llm::MockBackend>());
    const auto p = dam::build_style({}, {"alpha beta", "alpha?"}, res, 10, gw, default_templates());
    EXPECT_EQ(src->seen, (std::vector<std::string>{"alpha beta", "alpha?"}));
    EXPECT_TRUE(tgt->seen.empty());
    EXPECT_EQ(p.content_words, (dam::WordCounts{{"alpha", 1}, {"alpha?", 1}, {"beta", 1}}));
    EXPECT_EQ(p.intent, dam::Intent::Interrogative);
}

TEST(BuildStyle, HistoryCountsMatchRecount) {
    const auto en = english();
    const auto res = dam::StyleResources::from(en, en);
    llm::Gateway gw(std::make_shared<llm::MockBackend>());
    const std::vector<std::string> history = {"The king walks to the palace", "the king smiles", "A palace guard runs"};
    const auto p = dam::build_style(history, {"current line"}, res, 10, gw, default_templates());
    // Hand-tagged with the shipped lexicon: the/a determiners, to preposition;
    // walks/smiles/runs suffix "s" verbs; king/palace/guard nouns.
    EXPECT_EQ(p.function_words, (dam::WordCounts{{"the", 3}, {"a", 1}, {"to", 1}}));
    EXPECT_EQ(p.content_words, (dam::WordCounts{{"king", 2}, {"palace", 2}, {"guard", 1}, {"runs", 1}, {"smiles", 1}, {"walks", 1}}));
}

TEST(RenderStyle, EightFieldsInOrder) {
    dam::StyleProfile p;
    p.content_words = {{"raja", 2}};
    p.emotion = "calm";
    const std::string s = dam::render_style(p);
    std::size_t pos = 0;
    for (auto label : dam::kStyleFieldLabels) {
        const auto at = s.find("- " + std::string(label) + ": ", pos);
        ASSERT_NE(at, std::string::npos) << label;
        pos = at + 1;
    }
    EXPECT_NE(s.find("- Content words: raja (2)"), std::string::npos);
    EXPECT_NE(s.find("- Idioms: none"), std::string::npos);
    EXPECT_NE(s.find("- Emotion: calm"), std::string::npos);
}

// ---------------------------------------------------------------- LLM gateway and HTTP

TEST(Gateway, MockContract) {
    llm::Gateway gw(std::make_shared<llm::MockBackend>());
    const auto req = llm::ChatRequest::make(llm::Tag::Translation, "", "Hello");
    EXPECT_EQ(gw.complete(req), "[MT] Hello");
    EXPECT_EQ(gw.complete(req), gw.complete(req));
    EXPECT_DOUBLE_EQ(llm::ChatRequest::make(llm::Tag::Plot, "", "x").temperature, 0.5);
    EXPECT_DOUBLE_EQ(llm::ChatRequest::make(llm::Tag::Judge, "", "x").temperature, 0.0);
    EXPECT_THROW(gw.complete(llm::ChatRequest::make(llm::Tag::Plot, "", "")), InputError);
}

TEST(Gateway, HttpBackendMissingAuthFailsBeforeIo) {
    ScopedEnv env("CASAT_TEST_MISSING_KEY", nullptr);
    auto transport = std::make_shared<ScriptedTransport>(std::vector<int>{});
    llm::BackendSpec spec;
    spec.kind = llm::BackendKind::HttpChat;
    spec.endpoint = "http://127.0.0.1:9/v1/chat/completions";
    spec.model = "m";
    spec.auth_env = "CASAT_TEST_MISSING_KEY";
    EXPECT_THROW(llm::HttpChatBackend(spec, transport), ConfigError);
    EXPECT_EQ(transport->calls, 0);
}

TEST(Gateway, BatchAlignmentEmptyAndIsolation) {
    llm::Gateway gw(std::make_shared<llm::MockBackend>(), 3);
    std::vector<llm::ChatRequest> reqs;
    for (const char *s : {"a", "b", "c"}) reqs.push_back(llm::ChatRequest::make(llm::Tag::Translation, "", s));
    const auto out = gw.complete_batch(reqs);
    ASSERT_EQ(out.size(), 3u);
    EXPECT_EQ(out[0].value(), "[MT] a");
    EXPECT_EQ(out[2].value(), "[MT] c");
    EXPECT_TRUE(gw.complete_batch({}).empty());

    struct FailOnB : llm::Backend {
        std::string complete(const llm::ChatRequest &r) override {
            if (r.user == "b") throw TransportError("HTTP 400", 400);
            return r.user;
        }
    };
    llm::Gateway faulty(std::make_shared<FailOnB>(), 2);
    const auto res = faulty.complete_batch(reqs);
    EXPECT_TRUE(res[0].ok());
    EXPECT_FALSE(res[1].ok());
    EXPECT_TRUE(res[2].ok());
    EXPECT_THROW(res[1].value(), TransportError);
}

TEST(Gateway, ConcurrencyBound) {
    struct Counting : llm::Backend {
        std::atomic<int> live{0}, peak{0};
        std::string complete(const llm::ChatRequest &r) override {
            const int now = ++live;
            int p = peak.load();
            while (now > p && !peak.compare_exchange_weak(p, now)) {
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(2));
            --live;
            return r.user;
        }
    };
    auto backend = std::make_shared<Counting>();
    llm::Gateway gw(backend, 2);
    std::vector<llm::ChatRequest> reqs(20, llm::ChatRequest::make(llm::Tag::Translation, "", "x"));
    std::thread other([&] { gw.complete_batch(reqs); });
    gw.complete_batch(reqs);
    other.join();
    EXPECT_LE(backend->peak.load(), 2);
}

TEST(Gateway, AuditLog) {
    TempDir dir;
    llm::Gateway gw(std::make_shared<llm::MockBackend>());
    gw.enable_audit_log(dir / "audit.jsonl");
    gw.complete(llm::ChatRequest::make(llm::Tag::Translation, "sys", "one two"));
    const auto j = nlohmann::json::parse(read_file(dir / "audit.jsonl"));
    EXPECT_EQ(j.at("tag"), "translation");
    EXPECT_EQ(j.at("prompt_tokens"), 3);
    EXPECT_EQ(j.at("completion_tokens"), 3);
    EXPECT_EQ(j.at("prompt_hash").get<std::string>().size(), 64u);
}

TEST(Retry, AttemptsOn429ThenFails) {
    ScriptedTransport t({429, 429, 429, 429});
    RecordingSleeper sl;
    try {
        http::post_with_retry(t, "http://x/y", "{}", {}, {3, 500}, sl.fn());
        FAIL();
    } catch (const TransportError &e) {
        EXPECT_EQ(e.status(), 429);
    }
    EXPECT_EQ(t.calls, 3);
    EXPECT_EQ(sl.waits, (std::vector<long long>{500, 1000}));
}

TEST(Retry, TimeoutRetriedThenSucceeds) {
    ScriptedTransport t({0, 503, 200}, "ok");
    RecordingSleeper sl;
    EXPECT_EQ(http::post_with_retry(t, "http://x/y", "{}", {}, {5, 10}, sl.fn()), "ok");
    EXPECT_EQ(t.calls, 3);
    EXPECT_EQ(sl.waits, (std::vector<long long>{10, 20}));
}

TEST(Retry, TimeoutExhausted) {
    ScriptedTransport t({0, 0});
    RecordingSleeper sl;
    EXPECT_THROW(http::post_with_retry(t, "http://x/y", "{}", {}, {2, 1}, sl.fn()), TimeoutError);
    EXPECT_EQ(t.calls, 2);
}

TEST(Retry, NoRetryOn400) {
    ScriptedTransport t({400});
    RecordingSleeper sl;
    EXPECT_THROW(http::post_with_retry(t, "http://x/y", "{}", {}, {3, 500}, sl.fn()), TransportError);
    EXPECT_EQ(t.calls, 1);
    EXPECT_TRUE(sl.waits.empty());
}

TEST(HttpChat, OpenAiCompatibleRoundTripWithRetry) {
    ScopedEnv env("CASAT_TEST_KEY", "secret-token");
    LocalServer srv;
    std::atomic<int> hits{0};
    std::string seen_auth, seen_body;
    std::mutex m;
    srv.server.Post("/v1/chat/completions", [&](const httplib::Request &req, httplib::Response &res) {
        if (hits++ == 0) {
            res.status = 429;
            return;
        }
        {
            std::lock_guard lock(m);
            seen_auth = req.get_header_value("Authorization");
            seen_body = req.body;
        }
        const auto j = nlohmann::json::parse(req.body);
        const std::string user = j["messages"].back()["content"];
        res.set_content(nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", "echo:" + user}}}}}}}.dump(),
                        "application/json");
    });
    srv.start();
    llm::BackendSpec spec;
    spec.kind = llm::BackendKind::HttpChat;
    spec.endpoint = srv.url("/v1/chat/completions");
    spec.model = "test-model";
    spec.auth_env = "CASAT_TEST_KEY";
    spec.retry = {3, 0};
    llm::Gateway gw(std::make_shared<llm::HttpChatBackend>(spec));
    EXPECT_EQ(gw.complete(llm::ChatRequest::make(llm::Tag::Translation, "be brief", "Hello")), "echo:Hello");
    EXPECT_EQ(hits.load(), 2);
    EXPECT_EQ(seen_auth, "Bearer secret-token");
    const auto body = nlohmann::json::parse(seen_body);
    EXPECT_EQ(body["model"], "test-model");
    EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 0.2);
    EXPECT_EQ(body["messages"][0]["role"], "system");
    EXPECT_EQ(body["messages"][0]["content"], "be brief");
}

TEST(HttpChat, ServerErrorSurfacesStatus) {
    ScopedEnv env("CASAT_TEST_KEY2", "k");
    LocalServer srv;
    srv.server.Post("/c", [](const httplib::Request &, httplib::Response &res) { res.status = 401; });
    srv.start();
    llm::BackendSpec spec;
    spec.kind = llm::BackendKind::HttpChat;
    spec.endpoint = srv.url("/c");
    spec.model = "m";
    spec.auth_env = "CASAT_TEST_KEY2";
    llm::HttpChatBackend backend(spec);
    try {
        backend.complete(llm::ChatRequest::make(llm::Tag::Translation, "", "x"));
        FAIL();
    } catch (const TransportError &e) {
        EXPECT_EQ(e.status(), 401);
    }
}

TEST(HttpEmbedder, ProtocolAndNormalization) {
    LocalServer srv;
    srv.server.Post("/embed", [](const httplib::Request &req, httplib::Response &res) {
        const auto texts = nlohmann::json::parse(req.body).at("texts");
        nlohmann::json vecs = nlohmann::json::array();
        for (const auto &t : texts) {
            std::vector<double> v(8, 0.0);
            v[t.get<std::string>().size() % 8] = 3.0;
            v[0] += 4.0;
            vecs.push_back(v);
        }
        res.set_content(nlohmann::json{{"vectors", vecs}}.dump(), "application/json");
    });
    srv.start();
    EmbedderSpec spec;
    spec.backend_id = "remote-test";
    spec.dimension = 8;
    spec.endpoint = srv.url("/embed");
    auto e = make_embedder(spec);
    std::vector<std::string> texts;
    for (int i = 0; i < 150; ++i) texts.push_back(std::string(static_cast<std::size_t>(1 + i % 9), 'x'));
    const auto vecs = e->embed_batch(texts);
    ASSERT_EQ(vecs.size(), 150u);
    EXPECT_EQ(vecs[3], vecs[12]); // same length text -> same vector, order preserved across batches
    EXPECT_DOUBLE_EQ(vecs[0][0], 4.0 / 5.0);
    EXPECT_DOUBLE_EQ(vecs[0][1], 3.0 / 5.0);
}

TEST(HttpEmbedder, UnreachableIsTransportError) {
    EmbedderSpec spec;
    spec.backend_id = "remote-test";
    spec.endpoint = "http://127.0.0.1:1/embed";
    spec.retry = {1, 0};
    spec.timeout_ms = 2000;
    auto e = make_embedder(spec);
    EXPECT_THROW(e->embed("hello"), TransportError);
}

// ---------------------------------------------------------------- pipeline

namespace {

Corpus corpus50() {
    return parse_jsonl(read_file(testsupport::data("corpus50.jsonl")));
}

VectorStore tiny_store(Embedder &e) {
    return build_store({{{0}, "the inspector hunts a killer in the city"}, {{1}, "two friends joke over chai"},
                        {{2}, "a train journey to delhi"}},
                       e, {4, 1});
}

dam::StyleProfile full_profile() {
    dam::StyleProfile p;
    p.content_words = {{"raja", 2}};
    p.function_words = {{"ka", 3}};
    p.monosyllabic = {{"hai", 1}};
    p.polysyllabic = {{"kahaani", 1}};
    p.modal_words = {{"sakta", 1}};
    p.idioms = {{"naak mein dum", 1}};
    p.intent = dam::Intent::Exclamatory;
    p.emotion = "tense";
    return p;
}

} // namespace

TEST(BuildPrompt, BaseIsInstructionPlusSource) {
    Dialogue x;
    x.text = "Where are you going?";
    const auto t = default_templates();
    const auto b = build_prompt(std::string_view{}, nullptr, x, t, Mode::Base, "en", "hi");
    EXPECT_EQ(b.rendered(), render(t.translation, {{"source_lang", "English"}, {"target_lang", "Hindi"}}) + "\n\n" + x.text);
    EXPECT_TRUE(b.context_section.empty());
    EXPECT_TRUE(b.style_section.empty());
}

TEST(BuildPrompt, CasatHasBothChunksAndAllStyleFields) {
    MockEmbedder e;
    const auto store = tiny_store(e);
    const auto ctx = rerank(retrieve(store, "the killer", 5, e), "the killer", 2);
    ASSERT_EQ(ctx.chunks.size(), 2u);
    Dialogue x;
    x.text = "Find the killer!";
    const auto profile = full_profile();
    const auto b = build_prompt(ctx, &profile, x, default_templates(), Mode::Casat, "en", "hi");
    const std::string s = b.rendered();
    const auto c1 = s.find(ctx.chunks[0].chunk.text), c2 = s.find(ctx.chunks[1].chunk.text);
    EXPECT_NE(c1, std::string::npos);
    EXPECT_NE(c2, std::string::npos);
    std::size_t pos = c2;
    for (auto label : dam::kStyleFieldLabels) {
        const auto at = s.find(std::string(label) + ":", pos);
        ASSERT_NE(at, std::string::npos) << label;
        pos = at;
    }
    EXPECT_GT(s.rfind(x.text), pos);
    EXPECT_EQ(b.hash(), build_prompt(ctx, &profile, x, default_templates(), Mode::Casat, "en", "hi").hash());
}

TEST(BuildPrompt, TemplateMissingPlaceholderNamed) {
    TemplateSet t = default_templates();
    t.source_section = "{source} {speaker}";
    Dialogue x;
    x.text = "hi";
    try {
        build_prompt(std::string_view{}, nullptr, x, t, Mode::Base, "en", "hi");
        FAIL();
    } catch (const TemplateError &e) {
        EXPECT_EQ(e.placeholder(), "speaker");
    }
}

TEST(TranslateDialogue, MockEchoesSourceLine) {
    const Corpus c = corpus50();
    MockEmbedder e;
    llm::Gateway gw(std::make_shared<llm::MockBackend>());
    RunConfig cfg;
    cfg.mode = Mode::Base;
    const auto r = translate_dialogue(c, 4, 0, nullptr, nullptr, cfg, gw, e, default_templates());
    EXPECT_EQ(r.output, "[MT] " + c[4].text);
    EXPECT_EQ(r.prompt_hash, sha256_hex(r.prompt));
}

TEST(TranslateDialogue, ContextOnlyHasIdsAndNoStyle) {
    const Corpus c = corpus50();
    MockEmbedder e;
    const auto store = tiny_store(e);
    llm::Gateway gw(std::make_shared<llm::MockBackend>());
    RunConfig cfg;
    cfg.mode = Mode::ContextOnly;
    const auto r = translate_dialogue(c, 12, 1, &store, nullptr, cfg, gw, e, default_templates());
    EXPECT_EQ(r.context_chunk_ids.size(), 2u);
    EXPECT_EQ(r.prompt.find("Style guide"), std::string::npos);
    EXPECT_NE(r.prompt.find("Plot context"), std::string::npos);
}

TEST(TranslateDialogue, WindowContextPastFiveNextFive) {
    const Corpus c = corpus50();
    MockEmbedder e;
    llm::Gateway gw(std::make_shared<llm::MockBackend>());
    RunConfig cfg;
    cfg.mode = Mode::WindowContext;
    const auto r = translate_dialogue(c, 20, 0, nullptr, nullptr, cfg, gw, e, default_templates());
    std::string want;
    for (std::size_t j = 15; j <= 25; ++j)
        if (j != 20) want += (want.empty() ? "" : "\n") + c[j].text;
    EXPECT_NE(r.prompt.find(want), std::string::npos);
    EXPECT_EQ(render_window_context(c, 0, 10, false).find(c[0].text), std::string::npos);
    EXPECT_EQ(text::split_whitespace(render_window_context(c, 0, 10, false)).empty(), false);
    // Clipped at the start: only the next five exist.
    std::string head;
    for (std::size_t j = 1; j <= 5; ++j) head += (head.empty() ? "" : "\n") + c[j].text;
    EXPECT_EQ(render_window_context(c, 0, 10, false), head);
    std::string past;
    for (std::size_t j = 39; j <= 48; ++j) past += (past.empty() ? "" : "\n") + c[j].text;
    EXPECT_EQ(render_window_context(c, 49, 10, true), past);
}

TEST(TranslateDialogue, TransportErrorCarriesIndex) {
    const Corpus c = corpus50();
    MockEmbedder e;
    struct Down : llm::Backend {
        std::string complete(const llm::ChatRequest &) override { throw TransportError("HTTP 500", 500); }
    };
    llm::Gateway gw(std::make_shared<Down>());
    RunConfig cfg;
    cfg.mode = Mode::Base;
    try {
        translate_dialogue(c, 7, 0, nullptr, nullptr, cfg, gw, e, default_templates());
        FAIL();
    } catch (const TransportError &err) {
        EXPECT_EQ(std::string(err.what()).rfind("dialogue 7:", 0), 0u);
        EXPECT_EQ(err.status(), 500);
    }
}

namespace {

class CountingEmbedder : public Embedder {
  public:
    const EmbedderSpec &spec() const noexcept override { return inner_.spec(); }
    std::vector<Vector> embed_batch(const std::vector<std::string> &texts) override {
        calls += texts.size();
        return inner_.embed_batch(texts);
    }
    std::size_t calls = 0;

  private:
    MockEmbedder inner_;
};

} // namespace

TEST(Run, FiftyDialoguesAllModes) {
    const Corpus c = corpus50();
    MockEmbedder e;
    const auto ex = embed_exemplars(parse_exemplars_jsonl(read_file(kRes + "/exemplars_en.jsonl")), e);
    llm::Gateway gw(std::make_shared<llm::MockBackend>());
    PipelineResources res;
    res.style = dam::StyleResources::from(english(), hindi());
    for (Mode m : {Mode::Base, Mode::ContextOnly, Mode::DamOnly, Mode::Casat, Mode::WindowContext}) {
        RunConfig cfg;
        cfg.mode = m;
        const auto recs = run(c, ex, cfg, gw, e, res);
        ASSERT_EQ(recs.size(), 50u);
        for (std::size_t i = 0; i < recs.size(); ++i) {
            EXPECT_EQ(recs[i].dialogue_index, i);
            EXPECT_EQ(recs[i].output, "[MT] " + c[i].text);
            EXPECT_EQ(recs[i].mode, to_string(m));
        }
    }
}

TEST(Run, BaseModeMakesNoRetrievalEmbeddings) {
    const Corpus c = corpus50();
    CountingEmbedder e;
    llm::Gateway gw(std::make_shared<llm::MockBackend>());
    RunConfig cfg;
    cfg.mode = Mode::Base;
    std::vector<Session> sessions = {{0, TonalCategory::Neutral, 0, 10}, {1, TonalCategory::Neutral, 10, 50}};
    sessions[1].end = 20;
    for (std::size_t s = 20; s < 50; s += 10) sessions.push_back({sessions.size(), TonalCategory::Neutral, s, s + 10});
    translate_corpus(c, sessions, nullptr, cfg, gw, e, {});
    EXPECT_EQ(e.calls, 0u);
}

TEST(Run, StyleHistoryRollsOverAfterKSessions) {
    const Corpus c = corpus50();
    MockEmbedder e;
    llm::Gateway gw(std::make_shared<llm::MockBackend>());
    auto src = std::make_shared<RecordingTagger>(), tgt = std::make_shared<RecordingTagger>();
    PipelineResources res;
    res.style = {src, {}, tgt, {}};
    RunConfig cfg;
    cfg.mode = Mode::DamOnly;
    cfg.K = 2;
    std::vector<Session> sessions;
    for (std::size_t s = 0; s < 50; s += 10) sessions.push_back({sessions.size(), TonalCategory::Neutral, s, s + 10});
    translate_corpus(c, sessions, nullptr, cfg, gw, e, res);
    // Session 0 is cold (source side); sessions 1..4 tag the outputs of the previous <= 2 sessions.
    EXPECT_EQ(src->seen.size(), 10u);
    std::vector<std::string> want;
    for (std::size_t s = 1; s < 5; ++s)
        for (std::size_t i = (s >= 2 ? s - 2 : 0) * 10; i < s * 10; ++i) want.push_back("[MT] " + c[i].text);
    EXPECT_EQ(tgt->seen, want);
}

TEST(Run, ContinueOnErrorRecordsFailures) {
    const Corpus c = corpus50();
    MockEmbedder e;
    struct FailSome : llm::Backend {
        std::string complete(const llm::ChatRequest &r) override {
            if (r.user.find("chai") != std::string::npos) throw TransportError("HTTP 503", 503);
            return "ok";
        }
    };
    llm::Gateway gw(std::make_shared<FailSome>());
    RunConfig cfg;
    cfg.mode = Mode::Base;
    const std::vector<Session> one = {{0, TonalCategory::Neutral, 0, 10}, {1, TonalCategory::Neutral, 10, 20},
                                      {2, TonalCategory::Neutral, 20, 30}, {3, TonalCategory::Neutral, 30, 40},
                                      {4, TonalCategory::Neutral, 40, 50}};
    EXPECT_THROW(translate_corpus(c, one, nullptr, cfg, gw, e, {}), TransportError);
    cfg.continue_on_error = true;
    const auto recs = translate_corpus(c, one, nullptr, cfg, gw, e, {});
    ASSERT_EQ(recs.size(), 50u);
    EXPECT_TRUE(recs[2].error.has_value());
    EXPECT_NE(recs[2].error->find("dialogue 2"), std::string::npos);
    EXPECT_FALSE(recs[3].error.has_value());
}

TEST(RunConfig, Validation) {
    RunConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.N = 6;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.K = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.chunks = {64, 64};
    EXPECT_THROW(cfg.validate(), ConfigError);
    EXPECT_THROW(mode_from_string("full"), ConfigError);
}

// ---------------------------------------------------------------- eval

TEST(Bleu, IdentityAndDisjoint) {
    const std::vector<std::string> refs = {"the cat sat on the mat", "a quick brown fox jumps"};
    EXPECT_NEAR(eval::bleu(refs, refs), 100.0, 1e-9);
    EXPECT_LT(eval::bleu({"x y z w v", "p q r s t"}, refs), 1e-3);
}

TEST(Bleu, HandComputedClippedPrecisions) {
    const auto r = eval::corpus_bleu({"the the the cat"}, {"the cat sat"});
    EXPECT_EQ(r.matches[0], 2u);
    EXPECT_EQ(r.totals[0], 4u);
    EXPECT_DOUBLE_EQ(r.precisions[0], 2.0 / 4.0);
    EXPECT_DOUBLE_EQ(r.precisions[1], 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.brevity_penalty, 1.0);
    EXPECT_NEAR(r.score, 100.0 * std::pow(0.5 * (1.0 / 3.0) * 1e-9 * 1e-9, 0.25), 1e-12);
    // No floored orders: p = 5/6, 3/5, 2/4, 1/3 and c = r.
    EXPECT_NEAR(eval::bleu({"the cat sat on the mat"}, {"the cat sat on a mat"}), 53.7285, 5e-5);
    // Short hypothesis: BP = exp(1 - 7/6).
    EXPECT_NEAR(eval::bleu({"the cat sat on the mat"}, {"the cat sat on a mat today"}),
                100.0 * std::exp(1.0 - 7.0 / 6.0) * std::pow(5.0 / 6 * 3.0 / 5 * 2.0 / 4 * 1.0 / 3, 0.25), 1e-9);
}

TEST(Bleu, TokenizesPunctuationAndDevanagari) {
    EXPECT_EQ(eval::bleu_tokenize("नमस्ते, दोस्त।"), (std::vector<std::string>{"नमस्ते", ",", "दोस्त", "।"}));
    EXPECT_NEAR(eval::bleu({"हाँ, चलो।"}, {"हाँ , चलो ।"}), 100.0, 1e-9);
}

TEST(Bleu, Errors) {
    EXPECT_THROW(eval::bleu({"a"}, {}), InputError);
    EXPECT_THROW(eval::bleu({}, {}), InputError);
}

TEST(Judge, AlwaysAWithCandidateFirst) {
    llm::Gateway gw(std::make_shared<FixedBackend>("I prefer A"));
    eval::JudgeOptions opt;
    opt.presentation = eval::Presentation::CandidateFirst;
    const auto j = eval::judge_pairs({"s1", "s2"}, {"c1", "c2"}, {"b1", "b2"}, gw, default_templates(), opt);
    for (const auto &x : j) EXPECT_EQ(x.winner, eval::Winner::Candidate);
    EXPECT_DOUBLE_EQ(eval::win_ratio(j), 1.0);
}

TEST(Judge, GarbageIsTieWithRawReply) {
    llm::Gateway gw(std::make_shared<FixedBackend>("garbage"));
    const auto j = eval::judge_pairs({"s"}, {"c"}, {"b"}, gw, default_templates());
    EXPECT_EQ(j[0].winner, eval::Winner::Tie);
    EXPECT_EQ(j[0].raw_reply, "garbage");
}

TEST(Judge, RandomizedOrderIsSeededAndMapped) {
    auto fixed = std::make_shared<FixedBackend>("Verdict: B");
    llm::Gateway gw(fixed);
    std::vector<std::string> s(64, "src"), c(64, "cand"), b(64, "base");
    eval::JudgeOptions opt;
    opt.seed = 42;
    const auto j1 = eval::judge_pairs(s, c, b, gw, default_templates(), opt);
    const auto j2 = eval::judge_pairs(s, c, b, gw, default_templates(), opt);
    std::size_t first = 0;
    for (std::size_t i = 0; i < j1.size(); ++i) {
        EXPECT_EQ(j1[i].candidate_first, j2[i].candidate_first);
        EXPECT_EQ(j1[i].winner, j1[i].candidate_first ? eval::Winner::Baseline : eval::Winner::Candidate);
        first += j1[i].candidate_first;
    }
    EXPECT_GT(first, 10u);
    EXPECT_LT(first, 54u);
    // The mock judge prefers the longer translation wherever it is shown.
    llm::Gateway mock(std::make_shared<llm::MockBackend>());
    const auto j3 = eval::judge_pairs(s, std::vector<std::string>(64, "a much longer candidate"), b, mock, default_templates(), opt);
    for (const auto &x : j3) EXPECT_EQ(x.winner, eval::Winner::Candidate);
}

TEST(Judge, ParseVerdict) {
    EXPECT_EQ(eval::parse_verdict("Reasoning... A."), 'A');
    EXPECT_EQ(eval::parse_verdict("b"), 'B');
    EXPECT_EQ(eval::parse_verdict("It is a TIE"), 'T');
    EXPECT_EQ(eval::parse_verdict("A is better"), std::nullopt);
    EXPECT_EQ(eval::parse_verdict(""), std::nullopt);
}

TEST(WinRatio, Fixtures) {
    auto make = [](std::size_t wins, std::size_t total) {
        std::vector<eval::Judgment> j(total);
        for (std::size_t i = 0; i < total; ++i) j[i].winner = i < wins ? eval::Winner::Candidate : eval::Winner::Baseline;
        return j;
    };
    EXPECT_EQ(eval::win_ratio(make(800, 800)), 1.0);
    EXPECT_EQ(eval::win_ratio(make(584, 800)), 0.73);
    EXPECT_EQ(eval::win_ratio(make(0, 800)), 0.0);
    EXPECT_THROW(eval::win_ratio({}), InputError);
}

TEST(EmbeddingDistance, Cases) {
    MockEmbedder e;
    const auto same = eval::embedding_distance_report({"a b", "c d"}, {"a b", "c d"}, e);
    EXPECT_EQ(same.mean, 0.0);
    EXPECT_EQ(same.std, 0.0);
    const auto twin = eval::embedding_distance_report({"a b", "a b"}, {"x y", "x y"}, e);
    EXPECT_NEAR(twin.mean, eval::euclidean_distance(e.embed("a b"), e.embed("x y")), 1e-15);
    EXPECT_NEAR(twin.std, 0.0, 1e-15);
    std::mt19937_64 rng(8);
    std::vector<std::string> outs, refs;
    for (int i = 0; i < 40; ++i) {
        outs.push_back(testsupport::join_words(testsupport::random_words(rng, 6)));
        refs.push_back(testsupport::join_words(testsupport::random_words(rng, 6)));
    }
    std::vector<double> d;
    for (int i = 0; i < 40; ++i) {
        const auto a = e.embed(outs[i]), b = e.embed(refs[i]);
        d.push_back(oracle::distance({a.values().begin(), a.values().end()}, {b.values().begin(), b.values().end()}));
    }
    double mean = 0;
    for (double x : d) mean += x / 40.0;
    double var = 0;
    for (double x : d) var += (x - mean) * (x - mean) / 40.0;
    const auto got = eval::embedding_distance_report(outs, refs, e);
    EXPECT_NEAR(got.mean, mean, 1e-12);
    EXPECT_NEAR(got.std, std::sqrt(var), 1e-12);
    EXPECT_THROW(eval::embedding_distance_report({"a"}, {}, e), InputError);
}

namespace {

double coord_distance(const eval::Matrix &x, std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t k = 0; k < x[i].size(); ++k) s += (x[i][k] - x[j][k]) * (x[i][k] - x[j][k]);
    return std::sqrt(s);
}

} // namespace

TEST(Mds, TwoPoints) {
    const auto x = eval::classical_mds({{0, 3.5}, {3.5, 0}});
    EXPECT_NEAR(coord_distance(x, 0, 1), 3.5, 1e-9);
}

TEST(Mds, FourPlanarPointsRecovered) {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-5, 5);
    for (int trial = 0; trial < 20; ++trial) {
        eval::Matrix pts(4, std::vector<double>(2));
        for (auto &p : pts)
            for (auto &c : p) c = u(rng);
        const auto D = eval::pairwise_euclidean(pts);
        const auto x = eval::classical_mds(D);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(coord_distance(x, i, j), D[i][j], 1e-6);
    }
}

TEST(Mds, ZeroMatrixAndErrors) {
    const auto x = eval::classical_mds(eval::Matrix(3, std::vector<double>(3, 0.0)));
    for (const auto &row : x)
        for (double c : row) EXPECT_EQ(c, 0.0);
    EXPECT_THROW(eval::classical_mds({{0, 1}, {2, 0}}), InputError);
    EXPECT_THROW(eval::classical_mds({{0, -1}, {-1, 0}}), InputError);
    EXPECT_THROW(eval::classical_mds({}), InputError);
}

TEST(Report, MarkdownAndCsv) {
    eval::MetricReport r;
    eval::SystemMetrics s;
    s.name = "casat";
    s.n = 2;
    s.bleu = 12.345;
    s.embedding_distance = {0.5, 0.25};
    s.win_ratio = 0.73;
    r.systems.push_back(s);
    const std::string md = eval::to_markdown(r);
    EXPECT_NE(md.find("| casat | 2 | 12.35 | 0.73 | 0.5000 ± 0.2500 |"), std::string::npos) << md;
    EXPECT_EQ(eval::mds_to_csv({"a"}, {3}, {{1.5, -2}}), "system,index,x,y\na,3,1.5,-2\n");
}

TEST(ExternalScorer, CommandProtocol) {
    const auto scorer = eval::command_scorer("awk '{print NR / 10}'");
    const auto got = scorer({"s1", "s2"}, {"m1", "m2"}, {"r1", "r2"});
    EXPECT_EQ(got, (std::vector<double>{0.1, 0.2}));
    EXPECT_THROW(eval::command_scorer("echo 1")({"a", "b"}, {"a", "b"}, {"a", "b"}), ParseError);
    EXPECT_THROW(eval::command_scorer("exit 3")({"a"}, {"a"}, {"a"}), IoError);
}

// ---------------------------------------------------------------- CLI

namespace {

void write_homogeneous(const std::string &path, std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += "{\"text\":\"The train leaves at half past seven.\"}\n";
    write_file(path, s);
}

} // namespace

TEST(Cli, IngestSrt) {
    TempDir dir;
    auto r = testsupport::cli({"ingest", "--input", testsupport::data("sample.srt"), "--format", "srt", "--output", dir / "c.jsonl"});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("3"), std::string::npos);
    EXPECT_EQ(parse_jsonl(read_file(dir / "c.jsonl"))[1].text, "Where are you going?");

    r = testsupport::cli({"ingest", "--input", testsupport::data("malformed.srt"), "--format", "srt", "--output", dir / "d.jsonl"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("line 6"), std::string::npos) << r.err;

    r = testsupport::cli({"ingest", "--input", testsupport::data("sample.srt"), "--format", "vtt", "--output", dir / "e.jsonl"});
    EXPECT_EQ(r.code, 64);
}

TEST(Cli, SegmentHomogeneousAndEmpty) {
    TempDir dir;
    write_homogeneous(dir / "c.jsonl", 12);
    auto r = testsupport::cli({"segment", "--corpus", dir / "c.jsonl", "--output", dir / "s.jsonl"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("into 2 sessions"), std::string::npos) << r.out;
    EXPECT_EQ(parse_sessions_jsonl(read_file(dir / "s.jsonl")).size(), 2u);

    write_file(dir / "empty.jsonl", "");
    EXPECT_EQ(testsupport::cli({"segment", "--corpus", dir / "empty.jsonl", "--output", dir / "x.jsonl"}).code, 2);
    EXPECT_EQ(testsupport::cli({"segment", "--corpus", dir / "c.jsonl", "--output", dir / "x.jsonl", "--resources", dir / "nowhere"}).code, 2);
}

TEST(Cli, IndexForceAndMissingSessions) {
    TempDir dir;
    const std::string corpus = testsupport::data("corpus50.jsonl");
    ASSERT_EQ(testsupport::cli({"segment", "--corpus", corpus, "--output", dir / "s.jsonl"}).code, 0);
    auto r = testsupport::cli({"index", "--corpus", corpus, "--sessions", dir / "s.jsonl", "--output", dir / "store.bin"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto store = load_store(dir / "store.bin").store;
    EXPECT_NE(r.out.find(std::to_string(store.size()) + " chunks"), std::string::npos);
    EXPECT_EQ(testsupport::cli({"index", "--corpus", corpus, "--sessions", dir / "s.jsonl", "--output", dir / "store.bin"}).code, 64);
    EXPECT_EQ(testsupport::cli({"index", "--corpus", corpus, "--sessions", dir / "s.jsonl", "--output", dir / "store.bin", "--force"}).code, 0);
    EXPECT_EQ(testsupport::cli({"index", "--corpus", corpus, "--sessions", dir / "missing.jsonl", "--output", dir / "s2.bin"}).code, 2);
    EXPECT_EQ(testsupport::cli({"index", "--corpus", corpus, "--output", dir / "s3.bin"}).code, 2);
}

TEST(Cli, TranslateModes) {
    TempDir dir;
    const std::string corpus = testsupport::data("corpus50.jsonl");
    auto r = testsupport::cli({"translate", "--corpus", corpus, "--mode", "base", "--output", dir / "b.jsonl"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("translated 50 of 50"), std::string::npos);
    EXPECT_EQ(testsupport::cli({"translate", "--corpus", corpus, "--mode", "casat", "--output", dir / "c.jsonl"}).code, 64);
    r = testsupport::cli({"translate", "--corpus", corpus, "--mode", "window-context", "--output", dir / "w.jsonl"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto recs = read_records(dir / "w.jsonl");
    EXPECT_EQ(recs.front().output, "[MT] " + recs.front().source);
}

TEST(Cli, EvaluateIdentityJudgeAndMissingReference) {
    TempDir dir;
    const std::string corpus = testsupport::data("corpus50.jsonl");
    const Corpus c = parse_jsonl(read_file(corpus));
    std::vector<TranslationRecord> perfect;
    for (const auto &d : c.dialogues) {
        TranslationRecord rec;
        rec.dialogue_index = d.index;
        rec.mode = "oracle";
        rec.source = d.text;
        rec.output = *d.reference;
        perfect.push_back(rec);
    }
    write_records(perfect, dir / "perfect.jsonl");
    auto r = testsupport::cli({"evaluate", "--records", dir / "perfect.jsonl", "--references", corpus, "--report-json", dir / "r.json"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(read_file(dir / "r.json"));
    EXPECT_NEAR(j["systems"][0]["bleu"].get<double>(), 100.0, 1e-9);

    ASSERT_EQ(testsupport::cli({"translate", "--corpus", corpus, "--mode", "base", "--output", dir / "base.jsonl"}).code, 0);
    r = testsupport::cli({"evaluate", "--records", dir / "perfect.jsonl", "--baseline", dir / "base.jsonl", "--references", corpus});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("Δ"), std::string::npos);
    EXPECT_NE(r.out.find("| perfect | 50 | 100.00 |"), std::string::npos) << r.out;

    write_homogeneous(dir / "noref.jsonl", 50);
    EXPECT_EQ(testsupport::cli({"evaluate", "--records", dir / "perfect.jsonl", "--references", dir / "noref.jsonl"}).code, 2);
}

TEST(Cli, SweepKWritesPerKDirectories) {
    TempDir dir;
    const std::string corpus = testsupport::data("corpus50.jsonl");
    auto r = testsupport::cli({"sweep-k", "--corpus", corpus, "--k-values", "1,3", "--output-dir", dir / "sweep"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(std::filesystem::exists(dir / "sweep/K1/records.jsonl"));
    EXPECT_TRUE(std::filesystem::exists(dir / "sweep/K3/records.jsonl"));
    EXPECT_NE(read_records(dir / "sweep/K1/records.jsonl"), read_records(dir / "sweep/K3/records.jsonl"));

    // A single K reproduces segment + index + translate.
    ASSERT_EQ(testsupport::cli({"sweep-k", "--corpus", corpus, "--k-values", "2", "--output-dir", dir / "one"}).code, 0);
    ASSERT_EQ(testsupport::cli({"segment", "--corpus", corpus, "--output", dir / "s.jsonl"}).code, 0);
    ASSERT_EQ(testsupport::cli({"index", "--corpus", corpus, "--sessions", dir / "s.jsonl", "--output", dir / "st.bin"}).code, 0);
    ASSERT_EQ(testsupport::cli({"translate", "--corpus", corpus, "--store", dir / "st.bin", "--sessions", dir / "s.jsonl", "--output",
                   dir / "t.jsonl"})
                  .code,
              0);
    EXPECT_EQ(read_file(dir / "one/K2/records.jsonl"), read_file(dir / "t.jsonl"));
}

TEST(Cli, ConfigPrecedenceAndUnknownKeys) {
    TempDir dir;
    write_homogeneous(dir / "c.jsonl", 12);
    write_file(dir / "cfg.json", "{\"alpha\": 2, \"beta\": 4}");
    auto r = testsupport::cli({"segment", "--config", dir / "cfg.json", "--corpus", dir / "c.jsonl", "--output", dir / "s.jsonl"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(parse_sessions_jsonl(read_file(dir / "s.jsonl")).size(), 3u); // ceil(12 / 4)
    r = testsupport::cli({"segment", "--config", dir / "cfg.json", "--beta", "6", "--corpus", dir / "c.jsonl", "--output",
             dir / "s.jsonl"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(parse_sessions_jsonl(read_file(dir / "s.jsonl")).size(), 2u); // flag wins

    write_file(dir / "bad.json", "{\"betta\": 4}");
    r = testsupport::cli({"segment", "--config", dir / "bad.json", "--corpus", dir / "c.jsonl", "--output", dir / "s.jsonl"});
    EXPECT_EQ(r.code, 64);
    EXPECT_NE(r.err.find("betta"), std::string::npos);
    write_file(dir / "bad2.json", "{\"llm\": {\"kind\": \"mock\", \"temperature\": 1}}");
    EXPECT_EQ(testsupport::cli({"segment", "--config", dir / "bad2.json", "--corpus", dir / "c.jsonl", "--output", dir / "s.jsonl"}).code, 64);
    write_file(dir / "bad3.json", "{\"K\": \"two\"}");
    EXPECT_EQ(testsupport::cli({"segment", "--config", dir / "bad3.json", "--corpus", dir / "c.jsonl", "--output", dir / "s.jsonl"}).code, 64);
}

TEST(Cli, BackendFailuresAndAuth) {
    TempDir dir;
    const std::string corpus = testsupport::data("corpus50.jsonl");
    write_file(dir / "noauth.json",
               "{\"llm\": {\"kind\": \"http-chat\", \"endpoint\": \"http://127.0.0.1:1/v1/chat/completions\", \"model\": \"m\","
               " \"auth_env\": \"CASAT_TEST_ABSENT_KEY\"}}");
    ScopedEnv absent("CASAT_TEST_ABSENT_KEY", nullptr);
    EXPECT_EQ(testsupport::cli({"translate", "--config", dir / "noauth.json", "--corpus", corpus, "--mode", "base", "--output", dir / "o.jsonl"}).code,
              64);
    ScopedEnv key("CASAT_TEST_PRESENT_KEY", "k");
    write_file(dir / "down.json",
               "{\"llm\": {\"kind\": \"http-chat\", \"endpoint\": \"http://127.0.0.1:1/v1/chat/completions\", \"model\": \"m\","
               " \"auth_env\": \"CASAT_TEST_PRESENT_KEY\", \"retry\": {\"attempts\": 1, \"backoff_ms\": 0}, \"timeout_ms\": 2000}}");
    const auto r = testsupport::cli({"translate", "--config", dir / "down.json", "--corpus", corpus, "--mode", "base", "--output", dir / "o.jsonl"});
    EXPECT_EQ(r.code, 70);
    EXPECT_NE(r.err.find("dialogue 0"), std::string::npos) << r.err;
    const auto r2 = testsupport::cli({"translate", "--config", dir / "down.json", "--corpus", corpus, "--mode", "base", "--output",
                         dir / "o.jsonl", "--continue-on-error"});
    EXPECT_EQ(r2.code, 0) << r2.err;
    EXPECT_NE(r2.out.find("translated 0 of 50"), std::string::npos);
}

TEST(Cli, HelpListsDefaults) {
    const auto r = testsupport::cli({"--help"});
    EXPECT_EQ(r.code, 0);
    for (const char *s : {"K=2", "M=5", "N=2", "356", "64", "alpha=5", "beta=10", "k=3", "0.5", "0.2"})
        EXPECT_NE(r.out.find(s), std::string::npos) << s;
    EXPECT_EQ(testsupport::cli({}).code, 64);
    EXPECT_EQ(testsupport::cli({"translate", "--bogus"}).code, 64);
}
