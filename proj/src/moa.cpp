// SPDX-License-Identifier: Apache-2.0
#include "finmoe/moa.hpp"

#include <future>
#include <sstream>

#include <nlohmann/json.hpp>

#include "finmoe/errors.hpp"

namespace finmoe {

using nlohmann::json;

std::vector<AgentResponse> fan_out(const std::string& prompt,
                                   const std::vector<AgentSpec>& proposers) {
    if (proposers.empty()) throw ConfigError("fan_out: empty proposer list");
    std::vector<std::future<AgentResponse>> futures;
    futures.reserve(proposers.size());
    for (const AgentSpec& spec : proposers)
        futures.push_back(std::async(std::launch::async,
                                     [&spec, &prompt] { return call_agent(spec, prompt); }));
    std::vector<AgentResponse> responses;
    responses.reserve(proposers.size());
    for (std::future<AgentResponse>& f : futures) responses.push_back(f.get());
    return responses;
}

std::string build_aggregator_prompt(const std::string& original,
                                    const std::vector<AgentResponse>& responses) {
    bool any_ok = false;
    for (const AgentResponse& r : responses) any_ok = any_ok || r.status == AgentStatus::ok;
    if (!any_ok) throw InputError("build_aggregator_prompt: no proposer output");

    std::ostringstream out;
    out << "You are the final decision maker for a financial sentiment task.\n"
        << "Several agents answered the prompt below. Weigh their replies and decide the "
           "sentiment yourself.\n"
        << "\n"
        << "Original prompt:\n"
        << original << "\n";
    int position = 0;
    for (const AgentResponse& r : responses) {
        ++position;
        out << "\n";
        if (r.status == AgentStatus::ok) {
            out << "Agent " << position << " (" << r.agent_name << ") says:\n" << r.text << "\n";
        } else {
            out << "Agent " << position << " (" << r.agent_name << ") failed: "
                << to_string(r.status) << ".\n";
        }
    }
    out << "\nAnswer with exactly one word: positive, negative, or neutral.\n";
    return out.str();
}

std::optional<SentimentLabel> parse_label(const std::string& text) {
    const std::vector<LabelHit> hits = scan_label_words(text);
    if (hits.empty()) return std::nullopt;
    return hits.back().label;
}

MoaRecord run_moa(const std::string& prompt, const std::vector<AgentSpec>& proposers,
                  const AgentSpec& aggregator) {
    MoaRecord rec;
    rec.original_prompt = prompt;
    rec.responses = fan_out(prompt, proposers);

    rec.all_proposers_ok = true;
    std::vector<SentimentLabel> proposer_labels;
    for (const AgentResponse& r : rec.responses) {
        if (r.status != AgentStatus::ok) {
            rec.all_proposers_ok = false;
            continue;
        }
        if (const std::optional<SentimentLabel> l = parse_label(r.text))
            proposer_labels.push_back(*l);
    }
    for (size_t i = 1; i < proposer_labels.size(); ++i)
        if (proposer_labels[i] != proposer_labels[0]) rec.disagreement = true;

    try {
        rec.aggregator_prompt = build_aggregator_prompt(prompt, rec.responses);
    } catch (const InputError& e) {
        // Zero ok proposers: record the failure rather than throwing; the
        // caller inspects statuses for exit-code policy.
        rec.aggregator.agent_name = aggregator.name;
        rec.aggregator.status = AgentStatus::error;
        rec.aggregator.error_detail = e.what();
        return rec;
    }

    rec.aggregator = call_agent(aggregator, rec.aggregator_prompt);
    if (rec.aggregator.status == AgentStatus::ok) {
        rec.final_text = rec.aggregator.text;
        rec.final_label = parse_label(rec.final_text);
        rec.label_parsed = rec.final_label.has_value();
    }
    return rec;
}

namespace {

json response_to_json(const AgentResponse& r) {
    return json{{"agent", r.agent_name},
                {"text", r.text},
                {"latency_ms", r.latency_ms},
                {"status", to_string(r.status)},
                {"error_detail", r.error_detail}};
}

AgentResponse response_from_json(const json& j) {
    AgentResponse r;
    r.agent_name = j.at("agent").get<std::string>();
    r.text = j.at("text").get<std::string>();
    r.latency_ms = j.at("latency_ms").get<long>();
    const std::string status = j.at("status").get<std::string>();
    if (status == "ok") r.status = AgentStatus::ok;
    else if (status == "timeout") r.status = AgentStatus::timeout;
    else r.status = AgentStatus::error;
    r.error_detail = j.at("error_detail").get<std::string>();
    return r;
}

}  // namespace

std::string record_to_json(const MoaRecord& record) {
    json j;
    j["original_prompt"] = record.original_prompt;
    json rs = json::array();
    for (const AgentResponse& r : record.responses) rs.push_back(response_to_json(r));
    j["responses"] = rs;
    j["aggregator_prompt"] = record.aggregator_prompt;
    j["aggregator"] = response_to_json(record.aggregator);
    j["final_text"] = record.final_text;
    j["final_label"] = record.final_label ? label_word(*record.final_label) : "unparsed";
    j["all_proposers_ok"] = record.all_proposers_ok;
    j["label_parsed"] = record.label_parsed;
    j["disagreement"] = record.disagreement;
    return j.dump();
}

MoaRecord record_from_json(const std::string& line) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw InputError("bad MoA record line");
    MoaRecord rec;
    try {
        rec.original_prompt = j.at("original_prompt").get<std::string>();
        for (const json& r : j.at("responses")) rec.responses.push_back(response_from_json(r));
        rec.aggregator_prompt = j.at("aggregator_prompt").get<std::string>();
        rec.aggregator = response_from_json(j.at("aggregator"));
        rec.final_text = j.at("final_text").get<std::string>();
        rec.final_label = label_from_word(j.at("final_label").get<std::string>());
        rec.all_proposers_ok = j.at("all_proposers_ok").get<bool>();
        rec.label_parsed = j.at("label_parsed").get<bool>();
        rec.disagreement = j.at("disagreement").get<bool>();
    } catch (const json::exception& e) {
        throw InputError(std::string("bad MoA record line: ") + e.what());
    }
    return rec;
}

}  // namespace finmoe
