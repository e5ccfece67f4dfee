// SPDX-License-Identifier: Apache-2.0
#include "finmoe/agents.hpp"

#include <array>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "finmoe/checkpoint.hpp"
#include "finmoe/errors.hpp"
#include "finmoe/labels.hpp"
#include "finmoe/model.hpp"

namespace finmoe {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

AgentKind agent_kind_from_string(const std::string& s) {
    if (s == "scripted") return AgentKind::scripted;
    if (s == "local_model") return AgentKind::local_model;
    if (s == "http") return AgentKind::http;
    throw ConfigError("unknown agent kind: " + s);
}

std::string to_string(AgentKind k) {
    switch (k) {
        case AgentKind::scripted: return "scripted";
        case AgentKind::local_model: return "local_model";
        case AgentKind::http: return "http";
    }
    return "?";
}

std::string to_string(AgentStatus s) {
    switch (s) {
        case AgentStatus::ok: return "ok";
        case AgentStatus::timeout: return "timeout";
        case AgentStatus::error: return "error";
    }
    return "?";
}

void AgentSpec::validate() const {
    if (name.empty()) throw ConfigError("agent spec: empty name");
    if (timeout_ms < 1) throw ConfigError("agent '" + name + "': timeout_ms must be >= 1");
    if (max_retries < 0) throw ConfigError("agent '" + name + "': max_retries must be >= 0");
    if (kind == AgentKind::http) {
        if (endpoint.empty()) throw ConfigError("agent '" + name + "': http agent needs endpoint");
        if (response_text_path.empty())
            throw ConfigError("agent '" + name + "': http agent needs response_text_path");
    }
    if (kind == AgentKind::local_model && checkpoint_path.empty())
        throw ConfigError("agent '" + name + "': local_model agent needs checkpoint_path");
}

namespace {

long elapsed_ms(Clock::time_point start) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
}

AgentResponse scripted_attempt(const AgentSpec& spec, const std::string& prompt) {
    const auto start = Clock::now();
    AgentResponse r;
    r.agent_name = spec.name;
    if (spec.script_delay_ms > 0) {
        // Sleep only up to the deadline so a stalled script cannot slow the
        // suite beyond its own timeout budget.
        const int nap = std::min(spec.script_delay_ms, spec.timeout_ms);
        std::this_thread::sleep_for(std::chrono::milliseconds(nap));
    }
    if (spec.script_delay_ms > spec.timeout_ms) {
        r.status = AgentStatus::timeout;
        r.error_detail = "scripted delay exceeded timeout";
        r.latency_ms = elapsed_ms(start);
        return r;
    }
    if (spec.script_mode == ScriptMode::fixed) {
        r.text = spec.script_text;
    } else {
        std::array<int, 3> counts{};
        for (const LabelHit& hit : scan_label_words(prompt))
            ++counts[static_cast<size_t>(hit.label)];
        int best = -1;
        SentimentLabel winner = SentimentLabel::neutral;
        bool any = false;
        for (SentimentLabel l : kAllLabels) {
            const int c = counts[static_cast<size_t>(l)];
            if (c > 0 && c > best) {
                best = c;
                winner = l;
                any = true;
            }
        }
        r.text = any ? "Most agents agree, so the sentiment is " + label_word(winner) + "."
                     : "I cannot decide.";
    }
    if (r.text.empty()) {
        r.status = AgentStatus::error;
        r.error_detail = "scripted agent produced empty text";
    } else {
        r.status = AgentStatus::ok;
    }
    r.latency_ms = elapsed_ms(start);
    return r;
}

const Model& cached_model(const std::string& path) {
    static std::mutex mu;
    static std::map<std::string, std::unique_ptr<Model>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(path);
    if (it == cache.end())
        it = cache.emplace(path, std::make_unique<Model>(load_checkpoint(path))).first;
    return *it->second;
}

AgentResponse local_model_attempt(const AgentSpec& spec, const std::string& prompt) {
    const auto start = Clock::now();
    AgentResponse r;
    r.agent_name = spec.name;
    try {
        const Model& m = cached_model(spec.checkpoint_path);
        const LabelScore score = score_labels(m, prompt);
        r.text = "The sentiment of this text is: " + label_word(score.label) + ".";
        r.status = AgentStatus::ok;
    } catch (const std::exception& e) {
        r.status = AgentStatus::error;
        r.error_detail = e.what();
    }
    r.latency_ms = elapsed_ms(start);
    if (r.status == AgentStatus::ok && r.latency_ms > spec.timeout_ms) {
        r.status = AgentStatus::timeout;
        r.error_detail = "local model exceeded timeout";
        r.text.clear();
    }
    return r;
}

// "http://host:port/path" -> {"http://host:port", "/path"}
std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
    const size_t scheme = endpoint.find("://");
    if (scheme == std::string::npos)
        throw ConfigError("endpoint must include a scheme: " + endpoint);
    const size_t slash = endpoint.find('/', scheme + 3);
    if (slash == std::string::npos) return {endpoint, "/"};
    return {endpoint.substr(0, slash), endpoint.substr(slash)};
}

AgentResponse http_attempt(const AgentSpec& spec, const std::string& prompt) {
    const auto start = Clock::now();
    AgentResponse r;
    r.agent_name = spec.name;

    std::pair<std::string, std::string> split;
    try {
        split = split_endpoint(spec.endpoint);
    } catch (const std::exception& e) {
        r.status = AgentStatus::error;
        r.error_detail = e.what();
        r.latency_ms = elapsed_ms(start);
        return r;
    }

    httplib::Client client(split.first);
    const auto budget = std::chrono::milliseconds(spec.timeout_ms);
    client.set_connection_timeout(budget);
    client.set_read_timeout(budget);
    client.set_write_timeout(budget);

    httplib::Headers headers;
    if (!spec.api_key_env.empty()) {
        const char* key = std::getenv(spec.api_key_env.c_str());
        if (key == nullptr) {
            r.status = AgentStatus::error;
            r.error_detail = "environment variable not set: " + spec.api_key_env;
            r.latency_ms = elapsed_ms(start);
            return r;
        }
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    json body;
    body["model"] = spec.model_id;
    body["messages"] = json::array({json{{"role", "user"}, {"content", prompt}}});

    httplib::Result res = client.Post(split.second, headers, body.dump(), "application/json");
    r.latency_ms = elapsed_ms(start);
    if (!res) {
        const httplib::Error err = res.error();
        const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                               err == httplib::Error::Read || err == httplib::Error::Write;
        r.status = timed_out && r.latency_ms >= spec.timeout_ms ? AgentStatus::timeout
                                                                : AgentStatus::error;
        r.error_detail = httplib::to_string(err);
        return r;
    }
    if (res->status < 200 || res->status >= 300) {
        r.status = AgentStatus::error;
        r.error_detail = "http status " + std::to_string(res->status);
        return r;
    }
    try {
        r.text = extract_text_path(res->body, spec.response_text_path);
        if (r.text.empty()) {
            r.status = AgentStatus::error;
            r.error_detail = "empty completion text";
        } else {
            r.status = AgentStatus::ok;
        }
    } catch (const std::exception& e) {
        r.status = AgentStatus::error;
        r.error_detail = e.what();
    }
    return r;
}

AgentResponse attempt_once(const AgentSpec& spec, const std::string& prompt) {
    switch (spec.kind) {
        case AgentKind::scripted: return scripted_attempt(spec, prompt);
        case AgentKind::local_model: return local_model_attempt(spec, prompt);
        case AgentKind::http: return http_attempt(spec, prompt);
    }
    throw ContractError("attempt_once: unreachable agent kind");
}

}  // namespace

AgentResponse call_agent(const AgentSpec& spec, const std::string& prompt) {
    spec.validate();
    AgentResponse last;
    const int attempts = 1 + spec.max_retries;
    for (int i = 0; i < attempts; ++i) {
        last = attempt_once(spec, prompt);
        if (last.status == AgentStatus::ok) return last;
    }
    return last;
}

std::string extract_text_path(const std::string& json_body, const std::string& path) {
    json doc = json::parse(json_body, nullptr, false);
    if (doc.is_discarded()) throw InputError("response is not valid JSON");

    const json* node = &doc;
    size_t begin = 0;
    while (begin <= path.size()) {
        const size_t dot = path.find('.', begin);
        const std::string seg =
            path.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin);
        if (seg.empty()) throw InputError("empty segment in response_text_path: " + path);
        const bool numeric = seg.find_first_not_of("0123456789") == std::string::npos;
        if (node->is_array() && numeric) {
            const size_t idx = static_cast<size_t>(std::stoul(seg));
            if (idx >= node->size())
                throw InputError("response path index out of range: " + seg);
            node = &(*node)[idx];
        } else if (node->is_object() && node->contains(seg)) {
            node = &(*node)[seg];
        } else {
            throw InputError("response path segment not found: " + seg);
        }
        if (dot == std::string::npos) break;
        begin = dot + 1;
    }
    if (!node->is_string()) throw InputError("response path does not end at a string: " + path);
    return node->get<std::string>();
}

namespace {

AgentSpec spec_from_json(const json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": agent spec must be an object");
    AgentSpec s;
    if (!j.contains("name") || !j["name"].is_string())
        throw ConfigError(where + ": agent spec needs a string name");
    s.name = j["name"].get<std::string>();
    if (!j.contains("kind") || !j["kind"].is_string())
        throw ConfigError(where + ": agent '" + s.name + "' needs a string kind");
    s.kind = agent_kind_from_string(j["kind"].get<std::string>());

    auto str = [&](const char* key, std::string& out) {
        if (j.contains(key)) {
            if (!j[key].is_string())
                throw ConfigError(where + ": agent '" + s.name + "': " + key +
                                  " must be a string");
            out = j[key].get<std::string>();
        }
    };
    auto num = [&](const char* key, int& out) {
        if (j.contains(key)) {
            if (!j[key].is_number_integer())
                throw ConfigError(where + ": agent '" + s.name + "': " + key +
                                  " must be an integer");
            out = j[key].get<int>();
        }
    };
    str("endpoint", s.endpoint);
    str("model_id", s.model_id);
    num("timeout_ms", s.timeout_ms);
    num("max_retries", s.max_retries);
    str("api_key_env", s.api_key_env);
    str("response_text_path", s.response_text_path);
    str("checkpoint_path", s.checkpoint_path);
    str("script_text", s.script_text);
    num("script_delay_ms", s.script_delay_ms);
    if (j.contains("script_mode")) {
        const std::string mode = j["script_mode"].is_string() ? j["script_mode"].get<std::string>()
                                                              : std::string();
        if (mode == "fixed") s.script_mode = ScriptMode::fixed;
        else if (mode == "majority") s.script_mode = ScriptMode::majority;
        else
            throw ConfigError(where + ": agent '" + s.name + "': script_mode must be fixed or majority");
    }
    s.validate();
    return s;
}

}  // namespace

AgentsConfig load_agents_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open agents config: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw ConfigError("agents config is not a JSON object: " + path);
    if (!j.contains("proposers") || !j["proposers"].is_array() || j["proposers"].empty())
        throw ConfigError(path + ": agents config needs a nonempty proposers array");
    if (!j.contains("aggregator"))
        throw ConfigError(path + ": agents config needs an aggregator");

    AgentsConfig cfg;
    for (const json& p : j["proposers"]) cfg.proposers.push_back(spec_from_json(p, path));
    cfg.aggregator = spec_from_json(j["aggregator"], path);
    return cfg;
}

}  // namespace finmoe
