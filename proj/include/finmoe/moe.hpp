// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "finmoe/matrix.hpp"
#include "finmoe/rng.hpp"

namespace finmoe {

struct MoEConfig {
    int num_experts = 4;
    int top_k = 2;
    int model_dim = 0;
    int expert_hidden = 0;  // 0 means 4 * model_dim
    double alpha = 0.01;

    static MoEConfig defaults_for_dim(int d) {
        MoEConfig cfg;
        cfg.model_dim = d;
        cfg.expert_hidden = 4 * d;
        return cfg;
    }

    int hidden() const { return expert_hidden > 0 ? expert_hidden : 4 * model_dim; }

    void validate(const std::string& where = "moe") const;
};

// One expert: y = (silu(x w_gate) .* (x w_up)) w_down
struct ExpertParams {
    Matrix w_gate;  // d x h
    Matrix w_up;    // d x h
    Matrix w_down;  // h x d
};

struct MoEParams {
    Matrix w_router;  // d x E, bias-free gate-score projection
    std::vector<ExpertParams> experts;

    static MoEParams init(const MoEConfig& cfg, SeededRng& rng);

    // Shared iteration order for SGD updates, serialization and
    // gradient flattening: router, then per expert gate/up/down.
    template <typename Fn>
    void for_each_tensor(Fn&& fn) {
        fn(w_router);
        for (auto& e : experts) {
            fn(e.w_gate);
            fn(e.w_up);
            fn(e.w_down);
        }
    }
    template <typename Fn>
    void for_each_tensor(Fn&& fn) const {
        fn(w_router);
        for (const auto& e : experts) {
            fn(e.w_gate);
            fn(e.w_up);
            fn(e.w_down);
        }
    }
};

// Gradients are shaped exactly like the parameters.
using MoEGrads = MoEParams;

struct RoutingDecision {
    std::vector<double> probs;  // length E, sums to 1
    std::vector<int> selected;  // k distinct indices, ascending
    std::vector<double> weights;  // renormalized over selected, sums to 1
};

struct LoadBalanceStats {
    std::vector<double> f;  // fraction of tokens selecting each expert
    std::vector<double> p;  // mean routing probability per expert
    double loss = 0.0;      // (1/E) * sum_e f_e * p_e
};

struct MoECache {
    const MoEParams* params = nullptr;
    int tokens = 0;
    int model_dim = 0;
    int num_experts = 0;
    int top_k = 0;
    Matrix input;  // T x d
    Matrix probs;  // T x E
    std::vector<RoutingDecision> decisions;

    // Tokens grouped per expert so the backward pass runs on stacked rows.
    struct ExpertBatch {
        std::vector<int> token_rows;
        std::vector<double> mix_weights;
        Matrix x;  // n x d gathered inputs
        Matrix a;  // n x h gate pre-activations
        Matrix b;  // n x h up projections
        Matrix y;  // n x d expert outputs
    };
    std::vector<ExpertBatch> per_expert;
    std::vector<int> eval_counts;  // tokens actually run through each expert
};

struct MoEForwardResult {
    Matrix output;  // T x d
    std::vector<RoutingDecision> decisions;
    MoECache cache;
};

// g = h_in x w_router; no bias, no activation.
Matrix gate_scores(const Matrix& h_in, const MoEParams& params);

// Per token: probs = softmax of the gate row, selected = k largest probs
// (ties toward the lower expert index), weights = selected probs
// renormalized to sum 1. selected is reported in ascending index order.
std::vector<RoutingDecision> route(const Matrix& gate_logits, int top_k);

// Same, but the selected set per token is imposed; probs and weights are
// still computed from the gate logits. Used by finite-difference checks,
// which must hold the non-differentiable selection fixed.
std::vector<RoutingDecision> route_pinned(const Matrix& gate_logits,
                                          const std::vector<std::vector<int>>& selected);

Matrix expert_forward(const Matrix& x, const ExpertParams& e);

MoEForwardResult moe_forward(const Matrix& h_in, const MoEParams& params, const MoEConfig& cfg);
MoEForwardResult moe_forward_pinned(const Matrix& h_in, const MoEParams& params,
                                    const MoEConfig& cfg,
                                    const std::vector<std::vector<int>>& selected);

LoadBalanceStats load_balance_loss(const std::vector<RoutingDecision>& decisions,
                                   int num_experts, int top_k);

// Gradients of L = L_task + alpha * L_balance with respect to all MoE
// parameters, where upstream = dL_task/dy. Top-k selection and f_e are
// non-differentiable constants; gradients flow through the renormalized
// mixture weights, the expert stacks and p_e.
MoEGrads moe_backward(const Matrix& upstream, const MoECache& cache, double alpha);

}  // namespace finmoe
