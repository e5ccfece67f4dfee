// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "finmoe/labels.hpp"
#include "finmoe/matrix.hpp"
#include "finmoe/moe.hpp"

namespace finmoe {

struct ModelConfig {
    int vocab_size = 259;
    int model_dim = 32;
    int num_layers = 2;  // final block included; num_layers-1 standard blocks precede it
    int num_heads = 2;
    int max_seq_len = 192;
    MoEConfig moe;  // moe.model_dim == 0 inherits model_dim
    uint64_t init_seed = 1;

    // moe with model_dim/expert_hidden filled in from the model.
    MoEConfig resolved_moe() const;

    void validate() const;
};

// B x L token ids with a 0/1 loss mask over prediction positions:
// mask[t] = 1 means the logits at t are scored against ids[t+1].
struct TokenBatch {
    int batch = 0;
    int seq_len = 0;
    std::vector<int> ids;
    std::vector<int> loss_mask;

    int tokens() const { return batch * seq_len; }
    void validate(int vocab_size) const;
};

struct AttentionParams {
    Matrix norm_gain;  // 1 x d, pre-attention norm
    Matrix wq, wk, wv, wo;  // each d x d
};

// Standard frozen block: pre-norm attention + pre-norm SwiGLU feed-forward.
struct BlockParams {
    AttentionParams attn;
    Matrix ffn_norm_gain;  // 1 x d
    ExpertParams ffn;      // SwiGLU with hidden 4d
};

struct Model {
    ModelConfig config;
    Matrix tok_embed;  // vocab x d
    Matrix pos_embed;  // max_seq_len x d
    std::vector<BlockParams> blocks;  // num_layers - 1 standard blocks
    AttentionParams final_attn;       // attention half of the final block
    MoEParams moe;                    // the only trainable tensors
    Matrix final_norm_gain;  // 1 x d, pre-head norm
    Matrix lm_head;          // d x vocab

    // Frozen tensors in a fixed order (everything except moe).
    template <typename Fn>
    void for_each_frozen_tensor(Fn&& fn) const {
        fn(tok_embed);
        fn(pos_embed);
        auto attn = [&](const AttentionParams& a) {
            fn(a.norm_gain);
            fn(a.wq);
            fn(a.wk);
            fn(a.wv);
            fn(a.wo);
        };
        for (const auto& b : blocks) {
            attn(b.attn);
            fn(b.ffn_norm_gain);
            fn(b.ffn.w_gate);
            fn(b.ffn.w_up);
            fn(b.ffn.w_down);
        }
        attn(final_attn);
        fn(final_norm_gain);
        fn(lm_head);
    }
};

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 64;
    int epochs = 1;
    double alpha = 0.01;
    uint64_t shuffle_seed = 1;
    int max_steps = 0;  // 0 = no cap

    void validate() const;
};

struct ForwardCache {
    Matrix moe_input;       // x_attn rows, T x d
    MoECache moe_cache;
    Matrix pre_final_norm;  // y = moe output + residual, T x d
};

struct ForwardResult {
    Matrix logits;  // (B*L) x vocab, row t = position t
    std::vector<RoutingDecision> decisions;
    ForwardCache cache;
};

Model build_model(const ModelConfig& cfg);

ForwardResult forward(const Model& m, const TokenBatch& batch);

// Forward with each token's top-k selection imposed; finite-difference
// checks evaluate the loss along this path.
ForwardResult forward_pinned(const Model& m, const TokenBatch& batch,
                             const std::vector<std::vector<int>>& selected);

struct TaskLoss {
    double ce = 0.0;
    Matrix dlogits;
};

// Next-token cross-entropy: targets are ids shifted left by one and the
// last position of every sequence is excluded from the mask.
TaskLoss task_loss(const Matrix& logits, const TokenBatch& batch);

double total_loss(const Matrix& logits, const TokenBatch& batch, const LoadBalanceStats& stats,
                  double alpha);

struct StepRecord {
    double task_loss = 0.0;
    double balance_loss = 0.0;
    double total_loss = 0.0;
};

// One plain gradient-descent update of the MoE parameters; every other
// tensor is untouched.
StepRecord train_step(Model& m, const TokenBatch& batch, const TrainConfig& tc);

// Max relative error between analytic gradients of the total loss and
// central finite differences with step eps, top-k selections held fixed.
double gradient_check(Model& m, const TokenBatch& batch, double eps, double alpha);

struct LabelScore {
    SentimentLabel label = SentimentLabel::neutral;
    std::array<double, 3> logprobs{};  // indexed by SentimentLabel
};

// Sum of next-token log-probabilities over exactly the continuation ids,
// conditioned on prompt_ids ++ preceding continuation ids.
double score_continuation(const Model& m, const std::vector<int>& prompt_ids,
                          const std::vector<int>& cont_ids);

// Scores " positive" / " negative" / " neutral" appended after the prompt
// and returns the argmax; an exact tie resolves to neutral.
LabelScore score_labels(const Model& m, const std::string& prompt_text);

}  // namespace finmoe
