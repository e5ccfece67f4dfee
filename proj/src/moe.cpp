// SPDX-License-Identifier: Apache-2.0
#include "finmoe/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "finmoe/ops.hpp"

namespace finmoe {

void MoEConfig::validate(const std::string& where) const {
    if (num_experts < 1) throw ConfigError(where + ".num_experts: must be >= 1");
    if (top_k < 1 || top_k > num_experts) {
        throw ConfigError(where + ".top_k: must satisfy 1 <= top_k <= num_experts, got " +
                          std::to_string(top_k) + " with " + std::to_string(num_experts) +
                          " experts");
    }
    if (model_dim < 1) throw ConfigError(where + ".model_dim: must be >= 1");
    if (hidden() < 1) throw ConfigError(where + ".expert_hidden: must be >= 1");
    if (alpha < 0.0) throw ConfigError(where + ".alpha: must be >= 0");
}

namespace {

Matrix gaussian_matrix(int rows, int cols, double stddev, SeededRng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.values()) v = rng.gaussian() * stddev;
    return m;
}

}  // namespace

MoEParams MoEParams::init(const MoEConfig& cfg, SeededRng& rng) {
    cfg.validate();
    const double sd = 1.0 / std::sqrt(static_cast<double>(cfg.model_dim));
    MoEParams p;
    p.w_router = gaussian_matrix(cfg.model_dim, cfg.num_experts, sd, rng);
    p.experts.resize(cfg.num_experts);
    for (auto& e : p.experts) {
        e.w_gate = gaussian_matrix(cfg.model_dim, cfg.hidden(), sd, rng);
        e.w_up = gaussian_matrix(cfg.model_dim, cfg.hidden(), sd, rng);
        e.w_down = gaussian_matrix(cfg.hidden(), cfg.model_dim, sd, rng);
    }
    return p;
}

Matrix gate_scores(const Matrix& h_in, const MoEParams& params) {
    return matmul(h_in, params.w_router);
}

namespace {

RoutingDecision decision_from_probs(const double* prob_row, int num_experts,
                                    const std::vector<int>& selected) {
    RoutingDecision d;
    d.probs.assign(prob_row, prob_row + num_experts);
    d.selected = selected;
    d.weights.resize(selected.size());
    double sum = 0.0;
    for (int e : selected) sum += prob_row[e];
    for (size_t i = 0; i < selected.size(); ++i) d.weights[i] = prob_row[selected[i]] / sum;
    return d;
}

std::vector<int> top_k_indices(const double* probs, int num_experts, int k) {
    std::vector<int> order(num_experts);
    std::iota(order.begin(), order.end(), 0);
    // Largest prob first; ties toward the lower expert index.
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return a < b;
    });
    std::vector<int> sel(order.begin(), order.begin() + k);
    std::sort(sel.begin(), sel.end());
    return sel;
}

}  // namespace

std::vector<RoutingDecision> route(const Matrix& gate_logits, int top_k) {
    const int num_experts = gate_logits.cols();
    if (top_k < 1 || top_k > num_experts) {
        throw ConfigError("route: top_k " + std::to_string(top_k) + " out of range for " +
                          std::to_string(num_experts) + " experts");
    }
    const Matrix probs = softmax_rows(gate_logits);
    std::vector<RoutingDecision> out;
    out.reserve(probs.rows());
    for (int t = 0; t < probs.rows(); ++t) {
        const double* row = probs.row_ptr(t);
        out.push_back(decision_from_probs(row, num_experts, top_k_indices(row, num_experts, top_k)));
    }
    return out;
}

std::vector<RoutingDecision> route_pinned(const Matrix& gate_logits,
                                          const std::vector<std::vector<int>>& selected) {
    if (static_cast<int>(selected.size()) != gate_logits.rows()) {
        throw ContractError("route_pinned: " + std::to_string(selected.size()) +
                            " pinned sets for " + std::to_string(gate_logits.rows()) + " tokens");
    }
    const Matrix probs = softmax_rows(gate_logits);
    std::vector<RoutingDecision> out;
    out.reserve(probs.rows());
    for (int t = 0; t < probs.rows(); ++t) {
        out.push_back(decision_from_probs(probs.row_ptr(t), probs.cols(), selected[t]));
    }
    return out;
}

Matrix expert_forward(const Matrix& x, const ExpertParams& e) {
    return matmul(hadamard(silu(matmul(x, e.w_gate)), matmul(x, e.w_up)), e.w_down);
}

namespace {

MoEForwardResult assemble_forward(const Matrix& h_in, const MoEParams& params,
                                  const MoEConfig& cfg, const Matrix& probs,
                                  std::vector<RoutingDecision> decisions) {
    const int tokens = h_in.rows();
    const int num_experts = cfg.num_experts;

    MoEForwardResult res;
    res.cache.params = &params;
    res.cache.tokens = tokens;
    res.cache.model_dim = cfg.model_dim;
    res.cache.num_experts = num_experts;
    res.cache.top_k = cfg.top_k;
    res.cache.input = h_in;
    res.cache.probs = probs;
    res.cache.per_expert.resize(num_experts);
    res.cache.eval_counts.assign(num_experts, 0);

    for (int t = 0; t < tokens; ++t) {
        const auto& d = decisions[t];
        for (size_t i = 0; i < d.selected.size(); ++i) {
            auto& batch = res.cache.per_expert[d.selected[i]];
            batch.token_rows.push_back(t);
            batch.mix_weights.push_back(d.weights[i]);
        }
    }

    res.output = Matrix(tokens, cfg.model_dim);
    for (int e = 0; e < num_experts; ++e) {
        auto& batch = res.cache.per_expert[e];
        const int n = static_cast<int>(batch.token_rows.size());
        if (n == 0) continue;  // unselected experts are never evaluated
        res.cache.eval_counts[e] = n;

        batch.x = Matrix(n, cfg.model_dim);
        for (int r = 0; r < n; ++r) {
            const double* src = h_in.row_ptr(batch.token_rows[r]);
            std::copy(src, src + cfg.model_dim, batch.x.row_ptr(r));
        }
        const auto& ep = params.experts[e];
        batch.a = matmul(batch.x, ep.w_gate);
        batch.b = matmul(batch.x, ep.w_up);
        batch.y = matmul(hadamard(silu(batch.a), batch.b), ep.w_down);

        for (int r = 0; r < n; ++r) {
            double* out_row = res.output.row_ptr(batch.token_rows[r]);
            const double* y_row = batch.y.row_ptr(r);
            const double w = batch.mix_weights[r];
            for (int j = 0; j < cfg.model_dim; ++j) out_row[j] += w * y_row[j];
        }
    }

    res.decisions = std::move(decisions);
    res.cache.decisions = res.decisions;
    return res;
}

}  // namespace

MoEForwardResult moe_forward(const Matrix& h_in, const MoEParams& params, const MoEConfig& cfg) {
    cfg.validate();
    if (h_in.cols() != cfg.model_dim) {
        throw ShapeError("moe_forward: input " + h_in.shape_str() + " vs model_dim " +
                         std::to_string(cfg.model_dim));
    }
    const Matrix g = gate_scores(h_in, params);
    const Matrix probs = softmax_rows(g);
    return assemble_forward(h_in, params, cfg, probs, route(g, cfg.top_k));
}

MoEForwardResult moe_forward_pinned(const Matrix& h_in, const MoEParams& params,
                                    const MoEConfig& cfg,
                                    const std::vector<std::vector<int>>& selected) {
    cfg.validate();
    const Matrix g = gate_scores(h_in, params);
    const Matrix probs = softmax_rows(g);
    return assemble_forward(h_in, params, cfg, probs, route_pinned(g, selected));
}

LoadBalanceStats load_balance_loss(const std::vector<RoutingDecision>& decisions,
                                   int num_experts, int top_k) {
    if (decisions.empty()) throw InputError("load_balance_loss: no tokens");
    for (const auto& d : decisions) {
        if (static_cast<int>(d.selected.size()) != top_k) {
            throw ContractError("load_balance_loss: decision selects " +
                                std::to_string(d.selected.size()) + " experts, expected " +
                                std::to_string(top_k));
        }
    }
    const double t = static_cast<double>(decisions.size());
    LoadBalanceStats stats;
    stats.f.assign(num_experts, 0.0);
    stats.p.assign(num_experts, 0.0);
    for (const auto& d : decisions) {
        for (int e : d.selected) stats.f[e] += 1.0;
        for (int e = 0; e < num_experts; ++e) stats.p[e] += d.probs[e];
    }
    for (int e = 0; e < num_experts; ++e) {
        stats.f[e] /= t;
        stats.p[e] /= t;
        stats.loss += stats.f[e] * stats.p[e];
    }
    stats.loss /= num_experts;
    return stats;
}

MoEGrads moe_backward(const Matrix& upstream, const MoECache& cache, double alpha) {
    if (cache.params == nullptr || cache.tokens == 0) {
        throw ContractError("moe_backward: cache not produced by moe_forward");
    }
    if (upstream.rows() != cache.tokens || upstream.cols() != cache.model_dim) {
        throw ContractError("moe_backward: upstream " + upstream.shape_str() +
                            " does not match cached output " + std::to_string(cache.tokens) +
                            "x" + std::to_string(cache.model_dim));
    }
    const MoEParams& params = *cache.params;
    if (static_cast<int>(params.experts.size()) != cache.num_experts ||
        params.w_router.cols() != cache.num_experts ||
        params.w_router.rows() != cache.model_dim) {
        throw ContractError("moe_backward: parameters changed shape since forward");
    }

    const int tokens = cache.tokens;
    const int num_experts = cache.num_experts;

    MoEGrads grads;
    grads.w_router = Matrix(params.w_router.rows(), params.w_router.cols());
    grads.experts.resize(num_experts);
    for (int e = 0; e < num_experts; ++e) {
        grads.experts[e].w_gate = Matrix(params.experts[e].w_gate.rows(), params.experts[e].w_gate.cols());
        grads.experts[e].w_up = Matrix(params.experts[e].w_up.rows(), params.experts[e].w_up.cols());
        grads.experts[e].w_down = Matrix(params.experts[e].w_down.rows(), params.experts[e].w_down.cols());
    }

    // dL/dw for each (token, selected expert) mixture weight.
    Matrix dmix(tokens, num_experts);

    for (int e = 0; e < num_experts; ++e) {
        const auto& batch = cache.per_expert[e];
        const int n = static_cast<int>(batch.token_rows.size());
        if (n == 0) continue;
        const auto& ep = params.experts[e];

        // Upstream scaled by each token's mixture weight.
        Matrix u(n, cache.model_dim);
        for (int r = 0; r < n; ++r) {
            const double* ur = upstream.row_ptr(batch.token_rows[r]);
            double* dst = u.row_ptr(r);
            const double w = batch.mix_weights[r];
            for (int j = 0; j < cache.model_dim; ++j) dst[j] = w * ur[j];
        }

        const Matrix s = silu(batch.a);
        const Matrix z = hadamard(s, batch.b);
        grads.experts[e].w_down = matmul_at(z, u);
        const Matrix dz = matmul_bt(u, ep.w_down);
        const Matrix db = hadamard(dz, s);
        const Matrix da = hadamard(hadamard(dz, batch.b), silu_grad(batch.a));
        grads.experts[e].w_gate = matmul_at(batch.x, da);
        grads.experts[e].w_up = matmul_at(batch.x, db);

        for (int r = 0; r < n; ++r) {
            const double* ur = upstream.row_ptr(batch.token_rows[r]);
            const double* yr = batch.y.row_ptr(r);
            double acc = 0.0;
            for (int j = 0; j < cache.model_dim; ++j) acc += ur[j] * yr[j];
            dmix.at(batch.token_rows[r], e) = acc;
        }
    }

    // Route gradients into the softmax probabilities: the task path goes
    // through the renormalized weights of the selected set, the balance
    // path through p_e with f_e held constant.
    Matrix dprobs(tokens, num_experts);
    for (int t = 0; t < tokens; ++t) {
        const auto& d = cache.decisions[t];
        double sel_sum = 0.0;
        double wdot = 0.0;
        for (size_t i = 0; i < d.selected.size(); ++i) {
            sel_sum += d.probs[d.selected[i]];
            wdot += dmix.at(t, d.selected[i]) * d.weights[i];
        }
        for (int e : d.selected) {
            dprobs.at(t, e) = (dmix.at(t, e) - wdot) / sel_sum;
        }
    }
    if (alpha != 0.0) {
        std::vector<double> f(num_experts, 0.0);
        for (const auto& d : cache.decisions) {
            for (int e : d.selected) f[e] += 1.0;
        }
        const double coef = alpha / (static_cast<double>(num_experts) * tokens * tokens);
        for (int t = 0; t < tokens; ++t) {
            for (int e = 0; e < num_experts; ++e) dprobs.at(t, e) += coef * f[e];
        }
    }

    // Softmax backward, then the router weight gradient.
    Matrix dgate(tokens, num_experts);
    for (int t = 0; t < tokens; ++t) {
        const double* pr = cache.probs.row_ptr(t);
        const double* dp = dprobs.row_ptr(t);
        double* dg = dgate.row_ptr(t);
        double dot = 0.0;
        for (int e = 0; e < num_experts; ++e) dot += dp[e] * pr[e];
        for (int e = 0; e < num_experts; ++e) dg[e] = pr[e] * (dp[e] - dot);
    }
    grads.w_router = matmul_at(cache.input, dgate);
    return grads;
}

}  // namespace finmoe
