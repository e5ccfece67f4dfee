// SPDX-License-Identifier: Apache-2.0
#include <unistd.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>

#include <doctest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "finmoe/agents.hpp"
#include "finmoe/checkpoint.hpp"
#include "finmoe/errors.hpp"
#include "finmoe/model.hpp"

using namespace finmoe;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

AgentSpec scripted(const std::string& name, const std::string& text) {
    AgentSpec s;
    s.name = name;
    s.kind = AgentKind::scripted;
    s.script_text = text;
    return s;
}

// Serves chat-completion-shaped replies on a loopback port for the
// lifetime of one test.
struct LoopbackServer {
    httplib::Server svr;
    int port = 0;
    std::thread thread;

    explicit LoopbackServer() = default;

    void start() {
        port = svr.bind_to_any_port("127.0.0.1");
        REQUIRE(port > 0);
        thread = std::thread([this] { svr.listen_after_bind(); });
        svr.wait_until_ready();
    }

    std::string url(const std::string& path) const {
        return "http://127.0.0.1:" + std::to_string(port) + path;
    }

    ~LoopbackServer() {
        svr.stop();
        if (thread.joinable()) thread.join();
    }
};

std::string completion_body(const std::string& text) {
    json j;
    j["choices"] = json::array({json{{"message", json{{"role", "assistant"}, {"content", text}}}}});
    return j.dump();
}

AgentSpec http_spec(const std::string& url) {
    AgentSpec s;
    s.name = "remote";
    s.kind = AgentKind::http;
    s.endpoint = url;
    s.model_id = "test-model";
    s.response_text_path = "choices.0.message.content";
    s.timeout_ms = 2000;
    return s;
}

}  // namespace

TEST_CASE("scripted agents return their fixed text") {
    const AgentResponse r = call_agent(scripted("a", "It is positive."), "whatever");
    CHECK(r.status == AgentStatus::ok);
    CHECK(r.text == "It is positive.");
    CHECK(r.agent_name == "a");
}

TEST_CASE("a scripted stall beyond its timeout reports timeout") {
    AgentSpec s = scripted("slow", "too late");
    s.script_delay_ms = 80;
    s.timeout_ms = 20;
    const AgentResponse r = call_agent(s, "x");
    CHECK(r.status == AgentStatus::timeout);
    CHECK(r.text.empty());
}

TEST_CASE("majority-mode scripts echo the most frequent label word") {
    AgentSpec s = scripted("maj", "");
    s.script_mode = ScriptMode::majority;
    const AgentResponse r = call_agent(
        s, "Agent 1 says negative. Agent 2 says negative. Agent 3 says positive.");
    CHECK(r.status == AgentStatus::ok);
    CHECK(r.text.find("negative") != std::string::npos);

    const AgentResponse none = call_agent(s, "no label words here");
    CHECK(none.status == AgentStatus::ok);
    CHECK(none.text == "I cannot decide.");
}

TEST_CASE("spec validation names the missing pieces") {
    AgentSpec s;
    s.kind = AgentKind::http;
    CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("name"), ConfigError);
    s.name = "r";
    CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("endpoint"), ConfigError);
    s.endpoint = "http://127.0.0.1:1/v1";
    CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("response_text_path"), ConfigError);
    s.response_text_path = "choices.0.message.content";
    CHECK_NOTHROW(s.validate());
    s.timeout_ms = 0;
    CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("timeout_ms"), ConfigError);
}

TEST_CASE("extract_text_path walks objects and arrays") {
    const std::string body = completion_body("All good.");
    CHECK(extract_text_path(body, "choices.0.message.content") == "All good.");
    CHECK_THROWS_AS(extract_text_path(body, "choices.1.message.content"), InputError);
    CHECK_THROWS_AS(extract_text_path(body, "choices.0.message.missing"), InputError);
    CHECK_THROWS_AS(extract_text_path(body, "choices.0.message"), InputError);  // not a string
    CHECK_THROWS_AS(extract_text_path("not json", "a"), InputError);
}

TEST_CASE("http agents round-trip through a loopback service") {
    LoopbackServer server;
    std::atomic<int> hits{0};
    std::string seen_model, seen_content, seen_auth;
    server.svr.Post("/v1/chat", [&](const httplib::Request& req, httplib::Response& res) {
        ++hits;
        const json body = json::parse(req.body);
        seen_model = body["model"].get<std::string>();
        seen_content = body["messages"][0]["content"].get<std::string>();
        seen_auth = req.get_header_value("Authorization");
        res.set_content(completion_body("The outlook is positive."), "application/json");
    });
    server.start();

    AgentSpec s = http_spec(server.url("/v1/chat"));
    setenv("FINMOE_TEST_KEY", "sekrit", 1);
    s.api_key_env = "FINMOE_TEST_KEY";

    const AgentResponse r = call_agent(s, "How does the quarter look?");
    CHECK(r.status == AgentStatus::ok);
    CHECK(r.text == "The outlook is positive.");
    CHECK(hits == 1);
    CHECK(seen_model == "test-model");
    CHECK(seen_content == "How does the quarter look?");
    CHECK(seen_auth == "Bearer sekrit");
    unsetenv("FINMOE_TEST_KEY");
}

TEST_CASE("a named but unset key variable is an error, not a silent call") {
    LoopbackServer server;
    std::atomic<int> hits{0};
    server.svr.Post("/v1/chat", [&](const httplib::Request&, httplib::Response& res) {
        ++hits;
        res.set_content(completion_body("hi"), "application/json");
    });
    server.start();

    AgentSpec s = http_spec(server.url("/v1/chat"));
    unsetenv("FINMOE_MISSING_KEY");
    s.api_key_env = "FINMOE_MISSING_KEY";
    const AgentResponse r = call_agent(s, "x");
    CHECK(r.status == AgentStatus::error);
    CHECK(r.error_detail.find("FINMOE_MISSING_KEY") != std::string::npos);
    CHECK(hits == 0);
}

TEST_CASE("http errors surface as statuses and retries recover flaky services") {
    LoopbackServer server;
    std::atomic<int> hits{0};
    server.svr.Post("/flaky", [&](const httplib::Request&, httplib::Response& res) {
        if (++hits == 1) {
            res.status = 500;
            res.set_content("boom", "text/plain");
        } else {
            res.set_content(completion_body("recovered, neutral."), "application/json");
        }
    });
    server.svr.Post("/always500", [&](const httplib::Request&, httplib::Response& res) {
        res.status = 500;
    });
    server.start();

    AgentSpec flaky = http_spec(server.url("/flaky"));
    flaky.max_retries = 1;
    const AgentResponse ok = call_agent(flaky, "x");
    CHECK(ok.status == AgentStatus::ok);
    CHECK(hits == 2);

    AgentSpec broken = http_spec(server.url("/always500"));
    broken.max_retries = 2;
    const AgentResponse bad = call_agent(broken, "x");
    CHECK(bad.status == AgentStatus::error);
    CHECK(bad.error_detail.find("500") != std::string::npos);
}

TEST_CASE("connection refused comes back as an error status") {
    AgentSpec s = http_spec("http://127.0.0.1:1/unreachable");
    s.timeout_ms = 500;
    const AgentResponse r = call_agent(s, "x");
    CHECK(r.status != AgentStatus::ok);
    CHECK_FALSE(r.error_detail.empty());
}

TEST_CASE("local model agents answer in the fixed sentence shape") {
    ModelConfig cfg;
    cfg.model_dim = 8;
    cfg.num_heads = 2;
    cfg.num_layers = 2;
    cfg.max_seq_len = 160;
    cfg.moe.expert_hidden = 16;
    const fs::path ckpt =
        fs::temp_directory_path() / ("finmoe_agent_ckpt_" + std::to_string(::getpid()));
    save_checkpoint(build_model(cfg), ckpt.string());

    AgentSpec s;
    s.name = "local";
    s.kind = AgentKind::local_model;
    s.checkpoint_path = ckpt.string();
    const AgentResponse r = call_agent(s, "Shares dropped sharply after the recall.");
    CHECK(r.status == AgentStatus::ok);
    CHECK(r.text.rfind("The sentiment of this text is: ", 0) == 0);
    const AgentResponse r2 = call_agent(s, "Shares dropped sharply after the recall.");
    CHECK(r2.text == r.text);  // cached model, deterministic scoring
    fs::remove(ckpt);
}

TEST_CASE("agents config files load and reject bad kinds") {
    const fs::path p =
        fs::temp_directory_path() / ("finmoe_agents_" + std::to_string(::getpid()) + ".json");
    {
        std::ofstream out(p);
        out << R"({
  "proposers": [
    {"name": "a", "kind": "scripted", "script_text": "positive."},
    {"name": "b", "kind": "scripted", "script_text": "negative.", "script_delay_ms": 1}
  ],
  "aggregator": {"name": "agg", "kind": "scripted", "script_mode": "majority"}
})";
    }
    const AgentsConfig cfg = load_agents_config(p.string());
    CHECK(cfg.proposers.size() == 2);
    CHECK(cfg.aggregator.script_mode == ScriptMode::majority);

    {
        std::ofstream out(p);
        out << R"({"proposers": [{"name": "a", "kind": "psychic"}], "aggregator": {"name": "g", "kind": "scripted"}})";
    }
    CHECK_THROWS_AS(load_agents_config(p.string()), ConfigError);
    fs::remove(p);
}
