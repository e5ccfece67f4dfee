// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "finmoe/agents.hpp"
#include "finmoe/labels.hpp"

namespace finmoe {

struct MoaRecord {
    std::string original_prompt;
    std::vector<AgentResponse> responses;  // proposers, spec order
    std::string aggregator_prompt;
    AgentResponse aggregator;
    std::string final_text;
    std::optional<SentimentLabel> final_label;  // nullopt = unparsed
    bool all_proposers_ok = false;
    bool label_parsed = false;
    bool disagreement = false;  // parseable proposer labels not all equal
};

// One response per proposer, in spec order regardless of completion order;
// proposer calls run concurrently and failures come back as status values.
std::vector<AgentResponse> fan_out(const std::string& prompt,
                                   const std::vector<AgentSpec>& proposers);

// Fixed prompt layout: task instruction, the original prompt verbatim, one
// numbered section per ok response with its text verbatim, failed agents
// noted by name, and a closing one-word answer instruction.
std::string build_aggregator_prompt(const std::string& original,
                                    const std::vector<AgentResponse>& responses);

// Case-insensitive whole-word label scan; the last occurrence wins, none
// found means unparsed.
std::optional<SentimentLabel> parse_label(const std::string& text);

MoaRecord run_moa(const std::string& prompt, const std::vector<AgentSpec>& proposers,
                  const AgentSpec& aggregator);

std::string record_to_json(const MoaRecord& record);
MoaRecord record_from_json(const std::string& line);

}  // namespace finmoe
