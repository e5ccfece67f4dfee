// SPDX-License-Identifier: Apache-2.0
#include "finmoe/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace finmoe {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'F', 'M', 'O', 'E', 'C', 'K', 'P', '1'};

json config_to_json(const ModelConfig& cfg) {
    return json{{"vocab_size", cfg.vocab_size},
                {"model_dim", cfg.model_dim},
                {"num_layers", cfg.num_layers},
                {"num_heads", cfg.num_heads},
                {"max_seq_len", cfg.max_seq_len},
                {"init_seed", cfg.init_seed},
                {"moe",
                 {{"num_experts", cfg.moe.num_experts},
                  {"top_k", cfg.moe.top_k},
                  {"model_dim", cfg.moe.model_dim},
                  {"expert_hidden", cfg.moe.expert_hidden},
                  {"alpha", cfg.moe.alpha}}}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.model_dim = j.at("model_dim").get<int>();
    cfg.num_layers = j.at("num_layers").get<int>();
    cfg.num_heads = j.at("num_heads").get<int>();
    cfg.max_seq_len = j.at("max_seq_len").get<int>();
    cfg.init_seed = j.at("init_seed").get<uint64_t>();
    const json& moe = j.at("moe");
    cfg.moe.num_experts = moe.at("num_experts").get<int>();
    cfg.moe.top_k = moe.at("top_k").get<int>();
    cfg.moe.model_dim = moe.at("model_dim").get<int>();
    cfg.moe.expert_hidden = moe.at("expert_hidden").get<int>();
    cfg.moe.alpha = moe.at("alpha").get<double>();
    return cfg;
}

// Tensor slots in a fixed serialization order shared by save and load.
std::vector<std::pair<std::string, Matrix*>> tensor_slots(Model& m) {
    std::vector<std::pair<std::string, Matrix*>> slots;
    slots.emplace_back("tok_embed", &m.tok_embed);
    slots.emplace_back("pos_embed", &m.pos_embed);
    auto attn = [&](const std::string& prefix, AttentionParams& a) {
        slots.emplace_back(prefix + ".norm_gain", &a.norm_gain);
        slots.emplace_back(prefix + ".wq", &a.wq);
        slots.emplace_back(prefix + ".wk", &a.wk);
        slots.emplace_back(prefix + ".wv", &a.wv);
        slots.emplace_back(prefix + ".wo", &a.wo);
    };
    for (size_t i = 0; i < m.blocks.size(); ++i) {
        const std::string p = "block" + std::to_string(i);
        attn(p + ".attn", m.blocks[i].attn);
        slots.emplace_back(p + ".ffn_norm_gain", &m.blocks[i].ffn_norm_gain);
        slots.emplace_back(p + ".ffn.w_gate", &m.blocks[i].ffn.w_gate);
        slots.emplace_back(p + ".ffn.w_up", &m.blocks[i].ffn.w_up);
        slots.emplace_back(p + ".ffn.w_down", &m.blocks[i].ffn.w_down);
    }
    attn("final_attn", m.final_attn);
    slots.emplace_back("moe.w_router", &m.moe.w_router);
    for (size_t e = 0; e < m.moe.experts.size(); ++e) {
        const std::string p = "moe.expert" + std::to_string(e);
        slots.emplace_back(p + ".w_gate", &m.moe.experts[e].w_gate);
        slots.emplace_back(p + ".w_up", &m.moe.experts[e].w_up);
        slots.emplace_back(p + ".w_down", &m.moe.experts[e].w_down);
    }
    slots.emplace_back("final_norm_gain", &m.final_norm_gain);
    slots.emplace_back("lm_head", &m.lm_head);
    return slots;
}

}  // namespace

void save_checkpoint(const Model& m, const std::string& path) {
    Model& mm = const_cast<Model&>(m);  // slots only read through the pointers here
    auto slots = tensor_slots(mm);

    json manifest = json::array();
    for (auto& [name, t] : slots) {
        manifest.push_back({{"name", name}, {"rows", t->rows()}, {"cols", t->cols()}});
    }
    const std::string header = json{{"config", config_to_json(m.config)},
                                    {"tensors", manifest}}
                                   .dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("save_checkpoint: cannot open " + path);
    out.write(kMagic, sizeof(kMagic));
    const uint64_t hlen = header.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (auto& [name, t] : slots) {
        out.write(reinterpret_cast<const char*>(t->values().data()),
                  static_cast<std::streamsize>(t->size() * sizeof(double)));
    }
    if (!out) throw InputError("save_checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("load_checkpoint: cannot open " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw InputError("load_checkpoint: " + path + " is not a checkpoint file");
    }
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string header(hlen, '\0');
    in.read(header.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw InputError("load_checkpoint: truncated header in " + path);

    json j = json::parse(header);
    Model m = build_model(config_from_json(j.at("config")));

    auto slots = tensor_slots(m);
    const json& manifest = j.at("tensors");
    if (manifest.size() != slots.size()) {
        throw InputError("load_checkpoint: tensor manifest does not match config");
    }
    for (size_t i = 0; i < slots.size(); ++i) {
        auto& [name, t] = slots[i];
        const json& entry = manifest[i];
        if (entry.at("name") != name || entry.at("rows") != t->rows() ||
            entry.at("cols") != t->cols()) {
            throw InputError("load_checkpoint: tensor " + name + " mismatch");
        }
        in.read(reinterpret_cast<char*>(t->values().data()),
                static_cast<std::streamsize>(t->size() * sizeof(double)));
    }
    if (!in) throw InputError("load_checkpoint: truncated tensor data in " + path);
    return m;
}

}  // namespace finmoe
