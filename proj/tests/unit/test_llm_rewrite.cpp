#include "mrrag/config.hpp"
#include "mrrag/llm/http_backend.hpp"
#include "mrrag/llm/scripted.hpp"
#include "mrrag/llm/structured.hpp"
#include "mrrag/rewrite.hpp"

#include "support/fixtures.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <thread>

using namespace mrrag;
using namespace mrrag::testing;
using Catch::Matchers::ContainsSubstring;

namespace {

llm::ScriptedBackend scripted(const nlohmann::json& j) { return llm::ScriptedBackend(llm::BackendScript::from_json(j)); }

class FlakyTransport : public llm::HttpTransport {
public:
    FlakyTransport(int failures, llm::HttpResponse ok) : failures_(failures), ok_(std::move(ok)) {}
    llm::HttpResponse post_json(const std::string& body) override {
        bodies.push_back(body);
        if (calls_++ < failures_) throw BackendError("connection refused", true);
        return ok_;
    }
    std::vector<std::string> bodies;

private:
    int failures_;
    int calls_ = 0;
    llm::HttpResponse ok_;
};

class StatusTransport : public llm::HttpTransport {
public:
    explicit StatusTransport(std::vector<llm::HttpResponse> replies) : replies_(std::move(replies)) {}
    llm::HttpResponse post_json(const std::string&) override { return replies_.at(std::min(calls++, replies_.size() - 1)); }
    std::size_t calls = 0;

private:
    std::vector<llm::HttpResponse> replies_;
};

std::string completion(const std::string& content) {
    return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

llm::RetryPolicy fast_retry(int attempts = 3) { return {attempts, std::chrono::milliseconds(0), 2.0}; }

} // namespace

TEST_CASE("scripted backend rules", "[llm]") {
    auto mock = scripted({{"default", "fallback"},
                          {"rules",
                           {{{"match", "extract the release"}, {"response", "Release 17.20"}},
                            {{"tag", "generate"}, {"contains", "alpha"}, {"response", "tagged"}},
                            {{"match", "number (\\d+)"}, {"response", "got $1"}},
                            {{"section", {{"q", "inside"}}}, {"response", "section hit"}},
                            {{"contains", "boom"}, {"error", "scripted failure"}, {"retryable", true}}}}});
    CHECK(mock.chat(llm::make_request("Please extract the release from this", "release_extract")) == "Release 17.20");
    CHECK(mock.chat(llm::make_request("nothing matches", "x")) == "fallback");
    CHECK(mock.chat(llm::make_request("alpha", "generate")) == "tagged");
    CHECK(mock.chat(llm::make_request("alpha", "reduce")) == "fallback");
    CHECK(mock.chat(llm::make_request("the number 42", "x")) == "got 42");
    CHECK(mock.chat(llm::make_request("<q>inside</q> text", "x")) == "section hit");
    CHECK(mock.chat(llm::make_request("inside <q>outside</q>", "x")) == "fallback");
    try {
        mock.chat(llm::make_request("boom", "x"));
        FAIL("expected an error");
    } catch (const BackendError& e) {
        CHECK(e.retryable());
    }
    CHECK(mock.tag_log() == std::vector<std::string>{"release_extract", "x", "generate", "reduce", "x", "x", "x", "x"});
}

TEST_CASE("scripted backend rejects empty completions and bad requests", "[llm]") {
    auto mock = scripted({{"default", ""}, {"rules", nlohmann::json::array()}});
    CHECK_THROWS_WITH(mock.chat(llm::make_request("hi", "x")), ContainsSubstring("empty completion"));
    llm::ChatRequest empty;
    CHECK_THROWS_AS(mock.chat(empty), ValidationError);
    auto bad = llm::make_request("hi", "x");
    bad.temperature = -1;
    CHECK_THROWS_AS(mock.chat(bad), ValidationError);
    CHECK_THROWS_AS(scripted({{"rules", {{{"match", "("}}}}}), ConfigError);
}

TEST_CASE("scripted backend is deterministic across instances", "[llm]") {
    const auto script = read_json(fixture("mock_script.json"));
    auto a = scripted(script);
    auto b = scripted(script);
    for (const char* q : {"<question>How many shelves in Release 12?</question>", "<question>hello</question>"}) {
        CHECK(a.chat(llm::make_request(q, "release_extract")) == b.chat(llm::make_request(q, "release_extract")));
        CHECK(a.chat(llm::make_request(q, "rewrite_base")) == b.chat(llm::make_request(q, "rewrite_base")));
    }
}

TEST_CASE("http chat client retries transient failures", "[llm]") {
    SECTION("two failures then success with three attempts") {
        auto transport = std::make_unique<FlakyTransport>(2, llm::HttpResponse{200, completion("hello")});
        auto* raw = transport.get();
        llm::HttpChatBackend backend({"http://x/v1", "m", fast_retry(3), 2}, std::move(transport));
        CHECK(backend.chat(llm::make_request("hi", "generate")) == "hello");
        CHECK(raw->bodies.size() == 3);
        const auto body = nlohmann::json::parse(raw->bodies[0]);
        CHECK(body["model"] == "m");
        CHECK(body["messages"][0]["role"] == "user");
        CHECK(body["messages"][0]["content"] == "hi");
        CHECK(body["temperature"] == 0.01);
        CHECK(body["max_tokens"] == 512);
    }
    SECTION("three failures exhaust three attempts") {
        llm::HttpChatBackend backend({"http://x/v1", "m", fast_retry(3), 2},
                                     std::make_unique<FlakyTransport>(3, llm::HttpResponse{200, completion("hello")}));
        CHECK_THROWS_WITH(backend.chat(llm::make_request("hi", "generate")),
                          ContainsSubstring("[generate]") && ContainsSubstring("3 attempts"));
    }
    SECTION("5xx retried, 4xx not") {
        auto t5 = std::make_unique<StatusTransport>(
            std::vector<llm::HttpResponse>{{503, "busy"}, {200, completion("fine")}});
        llm::HttpChatBackend b5({"http://x/v1", "m", fast_retry(3), 1}, std::move(t5));
        CHECK(b5.chat(llm::make_request("hi", "t")) == "fine");

        auto t4 = std::make_unique<StatusTransport>(std::vector<llm::HttpResponse>{{400, "bad"}, {200, completion("x")}});
        auto* raw4 = t4.get();
        llm::HttpChatBackend b4({"http://x/v1", "m", fast_retry(3), 1}, std::move(t4));
        CHECK_THROWS_WITH(b4.chat(llm::make_request("hi", "t")), ContainsSubstring("HTTP 400"));
        CHECK(raw4->calls == 1);
    }
    SECTION("empty completion and malformed payloads") {
        llm::HttpChatBackend empty({"http://x/v1", "m", fast_retry(1), 1},
                                   std::make_unique<StatusTransport>(std::vector<llm::HttpResponse>{{200, completion("  ")}}));
        CHECK_THROWS_WITH(empty.chat(llm::make_request("hi", "t")), ContainsSubstring("empty completion"));
        llm::HttpChatBackend junk({"http://x/v1", "m", fast_retry(1), 1},
                                  std::make_unique<StatusTransport>(std::vector<llm::HttpResponse>{{200, "{}"}}));
        CHECK_THROWS_WITH(junk.chat(llm::make_request("hi", "t")), ContainsSubstring("malformed completion"));
    }
}

TEST_CASE("http clients against a local server", "[llm][http]") {
    httplib::Server server;
    std::atomic<int> chat_calls{0};
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        ++chat_calls;
        const auto body = nlohmann::json::parse(req.body);
        res.set_content(completion("echo: " + body["messages"][0]["content"].get<std::string>()), "application/json");
    });
    server.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        nlohmann::json data = nlohmann::json::array();
        int i = 0;
        for (const auto& t : body["input"]) {
            data.push_back({{"index", i++}, {"embedding", {static_cast<double>(t.get<std::string>().size()), 1.0, 0.0}}});
        }
        res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    const std::string base = "http://127.0.0.1:" + std::to_string(port);
    llm::HttpChatBackend chat({base + "/v1/chat/completions", "m", fast_retry(2), 2},
                              std::make_unique<llm::HttplibTransport>(base + "/v1/chat/completions", "key", std::chrono::seconds(5)));
    CHECK(chat.chat(llm::make_request("ping", "generate")) == "echo: ping");

    llm::HttpEmbeddingBackend emb({base + "/v1/embeddings", "e", fast_retry(2), 2},
                                  std::make_unique<llm::HttplibTransport>(base + "/v1/embeddings", "", std::chrono::seconds(5)));
    const std::vector<std::string> texts{"a", "abc"};
    const auto vecs = emb.embed(texts);
    REQUIRE(vecs.size() == 2);
    CHECK(vecs[1] == llm::Embedding{3.0F, 1.0F, 0.0F});
    CHECK(emb.model_id() == "e");

    server.stop();
    th.join();

    // nothing listens any more
    llm::HttplibTransport dead(base + "/v1/chat/completions", "", std::chrono::seconds(1));
    try {
        dead.post_json("{}");
        FAIL("expected a transport failure");
    } catch (const BackendError& e) {
        CHECK(e.retryable());
    }
}

TEST_CASE("urls and transports are validated", "[llm]") {
    CHECK(llm::ParsedUrl::parse("http://host:81/a/b").port == 81);
    CHECK(llm::ParsedUrl::parse("http://host/a").path == "/a");
    CHECK(llm::ParsedUrl::parse("https://host").port == 443);
    CHECK_THROWS_AS(llm::ParsedUrl::parse("host:80"), ConfigError);
    CHECK_THROWS_AS(llm::HttplibTransport("https://host/x", "", std::chrono::seconds(1)), ConfigError);
}

TEST_CASE("structured replies get one reprompt", "[llm]") {
    int calls = 0;
    FnBackend backend([&](const llm::ChatRequest& r) {
        ++calls;
        return text::contains_icase(r.rendered(), "Format reminder") ? "ANSWER: 7" : "no idea";
    });
    auto parse = [](const std::string& s) -> std::optional<int> {
        if (s.rfind("ANSWER: ", 0) == 0) return std::stoi(s.substr(8));
        return std::nullopt;
    };
    CHECK(llm::ask_structured(backend, llm::make_request("q", "t"), parse, "use ANSWER:") == 7);
    CHECK(calls == 2);

    FnBackend never([](const llm::ChatRequest&) { return "still wrong"; });
    CHECK_THROWS_AS(llm::ask_structured(never, llm::make_request("q", "t"), parse, "use ANSWER:"), MalformedOutputError);
    CHECK(never.tags().size() == 2);
}

TEST_CASE("configuration layering", "[config]") {
    const auto none = [](const std::string&) -> std::optional<std::string> { return std::nullopt; };
    SECTION("defaults") {
        const auto cfg = config::load(std::nullopt, none);
        CHECK(cfg.pipeline.top_m == 3);
        CHECK(cfg.pipeline.retrieval.n_cosine == 2);
        CHECK(cfg.pipeline.retrieval.n_mmr == 2);
        CHECK(cfg.pipeline.retrieval.mmr_lambda == 0.5);
        CHECK(cfg.pipeline.baseline_chunk_cap == 3000);
        CHECK(cfg.pipeline.baseline_overlap == 0.25);
        CHECK(cfg.corpus.k == 2);
        CHECK(cfg.corpus.ps == 500);
        CHECK(cfg.backend.retries == 3);
        CHECK(cfg.backend.backoff_ms == 1000);
        CHECK(cfg.backend.temperature == 0.01);
        CHECK(cfg.service.session_ttl_s == 86400);
        CHECK(cfg.pipeline.history_turns == 10);
        CHECK(cfg.pipeline.abstention_phrase == "I don't know");
    }
    SECTION("file then environment") {
        std::map<std::string, std::string> env{{"MRRAG_PIPELINE_TOP_M", "5"},
                                               {"MRRAG_RETRIEVAL_MMR_LAMBDA", "0.7"},
                                               {"MRRAG_PIPELINE_ENABLE_SELECT", "false"},
                                               {"MRRAG_SERVICE_CORS_ORIGINS", "[\"http://a\"]"}};
        const auto cfg = config::load(fixture("config.json"), [&](const std::string& k) -> std::optional<std::string> {
            if (env.contains(k)) return env.at(k);
            return std::nullopt;
        });
        CHECK(cfg.backend.kind == "mock");
        CHECK(cfg.corpus.default_page_break == "=== PAGE ===");
        CHECK(cfg.pipeline.top_m == 5);
        CHECK(cfg.pipeline.retrieval.mmr_lambda == 0.7);
        CHECK_FALSE(cfg.pipeline.enable_select);
        CHECK(cfg.service.cors_origins == std::vector<std::string>{"http://a"});
        CHECK(cfg.resolve("mock_script.json") == fixture_dir() / "mock_script.json");
        CHECK(cfg.effective["pipeline"]["top_m"] == 5);
    }
    SECTION("validation failures") {
        TempDir tmp;
        auto write = [&](const nlohmann::json& j) {
            const auto p = tmp.path() / "c.json";
            std::ofstream(p) << j.dump();
            return p;
        };
        CHECK_THROWS_WITH(config::load(write({{"pipeline", {{"topm", 3}}}}), none), ContainsSubstring("pipeline.topm"));
        CHECK_THROWS_AS(config::load(write({{"backend", {{"kind", "cloud"}}}}), none), ValidationError);
        CHECK_THROWS_AS(config::load(write({{"retrieval", {{"mmr_lambda", 2.0}}}}), none), ValidationError);
        CHECK_THROWS_AS(config::load(write({{"pipeline", {{"baseline_mode", true}}}}), none), ValidationError);
        CHECK_THROWS_AS(config::load(write({{"baseline", {{"overlap", 0.5}}}}), none), ValidationError);
        CHECK_THROWS_AS(config::load(std::nullopt, [](const std::string& k) -> std::optional<std::string> {
                            if (k == "MRRAG_PIPELINE_TOP_M") return "many";
                            return std::nullopt;
                        }),
                        ValidationError);
        const auto bad = tmp.path() / "bad.json";
        std::ofstream(bad) << "{ nope";
        CHECK_THROWS_AS(config::load(bad, none), ValidationError);
    }
    SECTION("overrides re-validate") {
        const auto cfg = config::load(std::nullopt, none);
        CHECK(config::with_overrides(cfg, {{"corpus", {{"k", 4}}}}).corpus.k == 4);
        CHECK_THROWS_AS(config::with_overrides(cfg, {{"corpus", {{"k", 0}}}}), ValidationError);
    }
    SECTION("backend construction") {
        auto cfg = config::load(fixture("config.json"), none);
        const auto b = config::make_backends(cfg);
        CHECK(dynamic_cast<llm::ScriptedBackend*>(b.chat.get()) != nullptr);
        CHECK(dynamic_cast<llm::HashEmbedder*>(b.embedder.get()) != nullptr);
        const auto plain = config::load(std::nullopt, none);
        CHECK_THROWS_AS(config::make_backends(plain), ConfigError);
        auto http = config::with_overrides(plain, {{"backend", {{"kind", "http"}}}});
        const auto hb = config::make_backends(http);
        CHECK(dynamic_cast<llm::HttpChatBackend*>(hb.chat.get()) != nullptr);
        CHECK_THROWS_AS(config::make_embedder(config::with_overrides(plain, {{"backend", {{"embedding", {{"kind", "http"}}}}}})),
                        ConfigError);
    }
}

TEST_CASE("release extraction", "[rewrite]") {
    World w;
    const auto known = w.registry.releases();

    SECTION("surface variant maps to the registered release") {
        const auto r = rewrite::extract_release("How do I update the controller to R17.2?", known, w.chat, w.prompts);
        CHECK(r.found);
        CHECK(r.canonical == "Release 17.20");
        CHECK(r.matched_text == "R17.2");
        const auto prompt = w.chat.calls().back().prompt;
        CHECK_THAT(prompt, ContainsSubstring("- Release 12"));
        CHECK_THAT(prompt, ContainsSubstring("- Release 17.20"));
    }
    SECTION("generic question") {
        const auto r = rewrite::extract_release("How to connect to the controller's dashboard?", known, w.chat, w.prompts);
        CHECK_FALSE(r.found);
        CHECK_FALSE(r.canonical);
        CHECK_FALSE(r.unregistered);
    }
    SECTION("NONE sentinel") {
        auto none = scripted({{"default", "NONE"}, {"rules", nlohmann::json::array()}});
        CHECK_FALSE(rewrite::extract_release("anything in Release 12", known, none, w.prompts).found);
    }
    SECTION("unregistered releases are reported, never guessed") {
        const auto r = rewrite::extract_release("Shelves in Release 15?", known, w.chat, w.prompts);
        CHECK_FALSE(r.found);
        CHECK(r.unregistered == "Release 15");
        auto liar = scripted({{"default", "Release 99 | Release 99"}, {"rules", nlohmann::json::array()}});
        const auto l = rewrite::extract_release("What about Release 99?", known, liar, w.prompts);
        CHECK_FALSE(l.found);
        CHECK(l.unregistered == "Release 99");
    }
    SECTION("reply parsing") {
        CHECK(rewrite::parse_release_reply("Release: Release 12", "in R12", known).canonical == "Release 12");
        CHECK(rewrite::parse_release_reply("\"release 17.20\"", "x", known).found);
        CHECK_FALSE(rewrite::parse_release_reply("", "x", known).found);
        CHECK(rewrite::parse_release_reply("UNKNOWN", "in Rel 3.1 please", known).unregistered == "Rel 3.1");
    }
}

TEST_CASE("standalone query rewriting", "[rewrite]") {
    World w;
    rewrite::ConversationHistory empty;

    SECTION("self-contained query with empty history is kept verbatim") {
        const std::string q = "What is the upgrade timeout?";
        const auto out = rewrite::rewrite_queries(q, empty, {}, w.chat, w.prompts);
        CHECK(out.base == q);
        CHECK_FALSE(out.versionless);
        CHECK(out.all().size() == 2);
    }
    SECTION("pronoun resolved from history") {
        rewrite::ConversationHistory h;
        h.append_exchange("Tell me about the Nimbus Controller", "The Nimbus Controller is a shelf manager.");
        rewrite::ExtractedRelease rel{true, "Release 17.20", "Release 17.20", std::nullopt};
        const auto out = rewrite::rewrite_queries("how do I upgrade it to Release 17.20?", h, rel, w.chat, w.prompts);
        CHECK(out.base == "how do I upgrade the Nimbus Controller to Release 17.20?");
        REQUIRE(out.versionless);
        CHECK_FALSE(text::contains_icase(*out.versionless, "17.20"));
        CHECK_THAT(*out.versionless, ContainsSubstring("Nimbus Controller"));
        CHECK(out.all().size() == 3);
        const auto tags = w.chat.tag_log();
        CHECK(std::vector<std::string>(tags.end() - 3, tags.end()) ==
              std::vector<std::string>{"rewrite_base", "rewrite_filtered", "rewrite_versionless"});
    }
    SECTION("static filtering keeps content words and the release") {
        rewrite::ExtractedRelease rel{true, "Release 17.20", "R17.2", std::nullopt};
        rewrite::RewriteOptions opts;
        opts.filtered = rewrite::FilterStrategy::static_stopwords;
        const auto out = rewrite::rewrite_queries("How do I update the controller to R17.2?", empty, rel, w.chat, w.prompts, opts);
        CHECK(out.filtered == "update controller R17.2");
        CHECK(out.versionless == "update controller");
        CHECK(rewrite::static_filter("What is the maximum number of shelves?") == "maximum number shelves");
    }
    SECTION("versionless purity holds whatever the model returns") {
        auto stubborn = scripted({{"default", "upgrade Release 17.20 now R17.20"}, {"rules", nlohmann::json::array()}});
        rewrite::ExtractedRelease rel{true, "Release 17.20", "R17.20", std::nullopt};
        const auto out = rewrite::rewrite_queries("upgrade to R17.20", empty, rel, stubborn, w.prompts);
        REQUIRE(out.versionless);
        CHECK_FALSE(text::contains_icase(*out.versionless, "Release 17.20"));
        CHECK_FALSE(text::contains_icase(*out.versionless, "R17.20"));
    }
    SECTION("backend failure propagates") {
        auto broken = scripted({{"rules", {{{"error", "down"}}}}});
        CHECK_THROWS_AS(rewrite::rewrite_queries("q", empty, {}, broken, w.prompts), BackendError);
    }
}

TEST_CASE("conversation history keeps the last turns", "[rewrite]") {
    rewrite::ConversationHistory h(4);
    CHECK(h.render() == "(no previous conversation)");
    for (int i = 0; i < 5; ++i) h.append_exchange("q" + std::to_string(i), "a" + std::to_string(i));
    REQUIRE(h.size() == 4);
    CHECK(h.turns().front().text == "q3");
    CHECK(h.turns().front().role == llm::Role::user);
    CHECK(h.render() == "User: q3\nAssistant: a3\nUser: q4\nAssistant: a4");
}
