// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace finmoe {

enum class AgentKind { scripted, local_model, http };

AgentKind agent_kind_from_string(const std::string& s);
std::string to_string(AgentKind k);

// How a scripted agent produces its reply: a fixed text, or a tally of the
// label words in the prompt it receives (most frequent wins; used to model
// an aggregator that just follows the majority).
enum class ScriptMode { fixed, majority };

struct AgentSpec {
    std::string name;
    AgentKind kind = AgentKind::scripted;
    std::string endpoint;            // http only
    std::string model_id;
    int timeout_ms = 10000;
    int max_retries = 0;
    std::string api_key_env;         // http only
    std::string response_text_path;  // http only, e.g. "choices.0.message.content"
    std::string checkpoint_path;     // local_model only
    std::string script_text;         // scripted only
    int script_delay_ms = 0;         // scripted only
    ScriptMode script_mode = ScriptMode::fixed;

    void validate() const;  // throws ConfigError naming the bad field
};

enum class AgentStatus { ok, timeout, error };

std::string to_string(AgentStatus s);

struct AgentResponse {
    std::string agent_name;
    std::string text;
    long latency_ms = 0;
    AgentStatus status = AgentStatus::error;
    std::string error_detail;
};

// One call with the agent's retry policy: up to 1 + max_retries attempts,
// each bounded by timeout_ms. Failures come back as status values, never
// exceptions. Safe to invoke concurrently for distinct calls.
AgentResponse call_agent(const AgentSpec& spec, const std::string& prompt);

// Walks a parsed JSON document along a dotted path where numeric segments
// index arrays ("choices.0.message.content"); returns the string found.
// Exposed for tests; throws InputError when the path does not resolve.
std::string extract_text_path(const std::string& json_body, const std::string& path);

// Agents config file: {"proposers": [AgentSpec...], "aggregator": AgentSpec}.
struct AgentsConfig {
    std::vector<AgentSpec> proposers;
    AgentSpec aggregator;
};

AgentsConfig load_agents_config(const std::string& path);

}  // namespace finmoe
