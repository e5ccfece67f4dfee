// SPDX-License-Identifier: Apache-2.0
#include "finmoe/model.hpp"

#include <algorithm>
#include <cmath>

#include "finmoe/ops.hpp"
#include "finmoe/tokenizer.hpp"

namespace finmoe {

MoEConfig ModelConfig::resolved_moe() const {
    MoEConfig cfg = moe;
    if (cfg.model_dim == 0) cfg.model_dim = model_dim;
    if (cfg.expert_hidden == 0) cfg.expert_hidden = 4 * cfg.model_dim;
    return cfg;
}

void ModelConfig::validate() const {
    if (vocab_size < 4) throw ConfigError("model.vocab_size: must be >= 4");
    if (model_dim < 1) throw ConfigError("model.model_dim: must be >= 1");
    if (num_layers < 1) throw ConfigError("model.num_layers: must be >= 1");
    if (num_heads < 1) throw ConfigError("model.num_heads: must be >= 1");
    if (model_dim % num_heads != 0) {
        throw ConfigError("model.num_heads: model_dim " + std::to_string(model_dim) +
                          " not divisible by num_heads " + std::to_string(num_heads));
    }
    if (max_seq_len < 2) throw ConfigError("model.max_seq_len: must be >= 2");
    if (moe.model_dim != 0 && moe.model_dim != model_dim) {
        throw ConfigError("model.moe.model_dim: " + std::to_string(moe.model_dim) +
                          " conflicts with model_dim " + std::to_string(model_dim));
    }
    resolved_moe().validate("model.moe");
}

void TokenBatch::validate(int vocab_size) const {
    if (batch < 1 || seq_len < 1) {
        throw InputError("batch: empty (" + std::to_string(batch) + "x" +
                         std::to_string(seq_len) + ")");
    }
    if (static_cast<int>(ids.size()) != tokens() || ids.size() != loss_mask.size()) {
        throw InputError("batch: ids/mask sizes do not match batch x seq_len");
    }
    for (int id : ids) {
        if (id < 0 || id >= vocab_size) {
            throw InputError("batch: token id " + std::to_string(id) + " out of vocab");
        }
    }
    for (int m : loss_mask) {
        if (m != 0 && m != 1) throw InputError("batch: loss_mask entries must be 0/1");
    }
}

void TrainConfig::validate() const {
    // 0 is legal: an lr-0 run is the cheapest way to assert nothing drifts.
    if (learning_rate < 0.0) throw ConfigError("train.learning_rate: must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
    if (epochs < 1) throw ConfigError("train.epochs: must be >= 1");
    if (alpha < 0.0) throw ConfigError("train.alpha: must be >= 0");
    if (max_steps < 0) throw ConfigError("train.max_steps: must be >= 0");
}

namespace {

Matrix gaussian_matrix(int rows, int cols, double stddev, SeededRng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.values()) v = rng.gaussian() * stddev;
    return m;
}

Matrix ones_row(int cols) {
    Matrix m(1, cols);
    for (double& v : m.values()) v = 1.0;
    return m;
}

AttentionParams init_attention(int d, double sd, SeededRng& rng) {
    AttentionParams a;
    a.norm_gain = ones_row(d);
    a.wq = gaussian_matrix(d, d, sd, rng);
    a.wk = gaussian_matrix(d, d, sd, rng);
    a.wv = gaussian_matrix(d, d, sd, rng);
    a.wo = gaussian_matrix(d, d, sd, rng);
    return a;
}

// Causal multi-head attention over one sequence (rows = positions).
Matrix attention_forward(const Matrix& x_seq, const AttentionParams& p, int num_heads) {
    const int len = x_seq.rows();
    const int d = x_seq.cols();
    const int head_dim = d / num_heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(head_dim));

    const Matrix normed = rmsnorm(x_seq, p.norm_gain);
    const Matrix q = matmul(normed, p.wq);
    const Matrix k = matmul(normed, p.wk);
    const Matrix v = matmul(normed, p.wv);

    Matrix ctx(len, d);
    std::vector<double> scores(len);
    for (int h = 0; h < num_heads; ++h) {
        const int off = h * head_dim;
        for (int i = 0; i < len; ++i) {
            const double* qi = q.row_ptr(i) + off;
            double mx = -1e300;
            for (int j = 0; j <= i; ++j) {
                const double* kj = k.row_ptr(j) + off;
                double acc = 0.0;
                for (int c = 0; c < head_dim; ++c) acc += qi[c] * kj[c];
                scores[j] = acc * scl;
                mx = std::max(mx, scores[j]);
            }
            double sum = 0.0;
            for (int j = 0; j <= i; ++j) {
                scores[j] = std::exp(scores[j] - mx);
                sum += scores[j];
            }
            double* out = ctx.row_ptr(i) + off;
            for (int j = 0; j <= i; ++j) {
                const double a = scores[j] / sum;
                const double* vj = v.row_ptr(j) + off;
                for (int c = 0; c < head_dim; ++c) out[c] += a * vj[c];
            }
        }
    }
    return matmul(ctx, p.wo);
}

// Attention applied per sequence of a flattened B x L batch, added to the
// residual stream in place.
void add_attention(Matrix& x, const AttentionParams& p, int batch, int seq_len, int num_heads) {
    const int d = x.cols();
    for (int b = 0; b < batch; ++b) {
        Matrix seq(seq_len, d);
        std::copy(x.row_ptr(b * seq_len), x.row_ptr(b * seq_len) + seq_len * d,
                  seq.values().begin());
        const Matrix out = attention_forward(seq, p, num_heads);
        double* dst = x.row_ptr(b * seq_len);
        for (size_t i = 0; i < out.size(); ++i) dst[i] += out.values()[i];
    }
}

ForwardResult forward_impl(const Model& m, const TokenBatch& batch,
                           const std::vector<std::vector<int>>* pinned) {
    batch.validate(m.config.vocab_size);
    if (batch.seq_len > m.config.max_seq_len) {
        throw InputError("forward: sequence length " + std::to_string(batch.seq_len) +
                         " exceeds max_seq_len " + std::to_string(m.config.max_seq_len));
    }
    const int d = m.config.model_dim;
    const int tokens = batch.tokens();

    Matrix x(tokens, d);
    for (int b = 0; b < batch.batch; ++b) {
        for (int i = 0; i < batch.seq_len; ++i) {
            const int t = b * batch.seq_len + i;
            const double* tok = m.tok_embed.row_ptr(batch.ids[t]);
            const double* pos = m.pos_embed.row_ptr(i);
            double* dst = x.row_ptr(t);
            for (int c = 0; c < d; ++c) dst[c] = tok[c] + pos[c];
        }
    }

    for (const auto& blk : m.blocks) {
        add_attention(x, blk.attn, batch.batch, batch.seq_len, m.config.num_heads);
        const Matrix ffn_out = expert_forward(rmsnorm(x, blk.ffn_norm_gain), blk.ffn);
        add_inplace(x, ffn_out);
    }

    add_attention(x, m.final_attn, batch.batch, batch.seq_len, m.config.num_heads);
    // x is now the attention-block output; the MoE result merges back into
    // this residual stream.
    const MoEConfig moe_cfg = m.config.resolved_moe();
    MoEForwardResult moe_res = pinned == nullptr
                                   ? moe_forward(x, m.moe, moe_cfg)
                                   : moe_forward_pinned(x, m.moe, moe_cfg, *pinned);

    ForwardResult res;
    res.cache.moe_input = x;
    res.cache.moe_cache = std::move(moe_res.cache);
    res.cache.pre_final_norm = add(x, moe_res.output);
    res.decisions = std::move(moe_res.decisions);
    res.logits = matmul(rmsnorm(res.cache.pre_final_norm, m.final_norm_gain), m.lm_head);
    return res;
}

}  // namespace

Model build_model(const ModelConfig& cfg) {
    cfg.validate();
    const int d = cfg.model_dim;
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    SeededRng rng(cfg.init_seed);

    Model m;
    m.config = cfg;
    m.tok_embed = gaussian_matrix(cfg.vocab_size, d, sd, rng);
    m.pos_embed = gaussian_matrix(cfg.max_seq_len, d, sd, rng);
    m.blocks.resize(cfg.num_layers - 1);
    for (auto& blk : m.blocks) {
        blk.attn = init_attention(d, sd, rng);
        blk.ffn_norm_gain = ones_row(d);
        blk.ffn.w_gate = gaussian_matrix(d, 4 * d, sd, rng);
        blk.ffn.w_up = gaussian_matrix(d, 4 * d, sd, rng);
        blk.ffn.w_down = gaussian_matrix(4 * d, d, sd, rng);
    }
    m.final_attn = init_attention(d, sd, rng);
    m.moe = MoEParams::init(cfg.resolved_moe(), rng);
    m.final_norm_gain = ones_row(d);
    m.lm_head = gaussian_matrix(d, cfg.vocab_size, sd, rng);
    return m;
}

ForwardResult forward(const Model& m, const TokenBatch& batch) {
    return forward_impl(m, batch, nullptr);
}

ForwardResult forward_pinned(const Model& m, const TokenBatch& batch,
                             const std::vector<std::vector<int>>& selected) {
    return forward_impl(m, batch, &selected);
}

TaskLoss task_loss(const Matrix& logits, const TokenBatch& batch) {
    std::vector<int> targets(batch.tokens(), 0);
    std::vector<int> mask(batch.tokens(), 0);
    for (int b = 0; b < batch.batch; ++b) {
        for (int i = 0; i + 1 < batch.seq_len; ++i) {
            const int t = b * batch.seq_len + i;
            targets[t] = batch.ids[t + 1];
            mask[t] = batch.loss_mask[t];
        }
        // last position has no next token and never contributes
    }
    auto ce = cross_entropy(logits, targets, mask);
    return TaskLoss{ce.loss, std::move(ce.dlogits)};
}

double total_loss(const Matrix& logits, const TokenBatch& batch, const LoadBalanceStats& stats,
                  double alpha) {
    return task_loss(logits, batch).ce + alpha * stats.loss;
}

namespace {

std::vector<Matrix*> tensor_ptrs(MoEParams& p) {
    std::vector<Matrix*> out;
    p.for_each_tensor([&](Matrix& t) { out.push_back(&t); });
    return out;
}

// Backward along the trainable path: head input-grad, final-norm
// input-grad, residual, MoE parameter grads.
MoEGrads trainable_grads(const Model& m, const ForwardResult& fwd, const TaskLoss& tl,
                         double alpha) {
    const Matrix dnormed = matmul_bt(tl.dlogits, m.lm_head);
    const Matrix dy = rmsnorm_input_grad(fwd.cache.pre_final_norm, m.final_norm_gain, dnormed);
    return moe_backward(dy, fwd.cache.moe_cache, alpha);
}

}  // namespace

StepRecord train_step(Model& m, const TokenBatch& batch, const TrainConfig& tc) {
    tc.validate();
    ForwardResult fwd = forward(m, batch);
    const MoEConfig moe_cfg = m.config.resolved_moe();
    const LoadBalanceStats stats =
        load_balance_loss(fwd.decisions, moe_cfg.num_experts, moe_cfg.top_k);
    const TaskLoss tl = task_loss(fwd.logits, batch);

    StepRecord rec{tl.ce, stats.loss, tl.ce + tc.alpha * stats.loss};
    if (!std::isfinite(rec.total_loss)) {
        throw NumericError("train_step: non-finite loss (task=" + std::to_string(tl.ce) +
                           ", balance=" + std::to_string(stats.loss) + ")");
    }

    MoEGrads grads = trainable_grads(m, fwd, tl, tc.alpha);
    auto params = tensor_ptrs(m.moe);
    auto gs = tensor_ptrs(grads);
    for (size_t i = 0; i < params.size(); ++i) {
        axpy_inplace(*params[i], -tc.learning_rate, *gs[i]);
    }
    return rec;
}

double gradient_check(Model& m, const TokenBatch& batch, double eps, double alpha) {
    ForwardResult fwd = forward(m, batch);
    std::vector<std::vector<int>> pinned;
    pinned.reserve(fwd.decisions.size());
    for (const auto& d : fwd.decisions) pinned.push_back(d.selected);

    const MoEConfig moe_cfg = m.config.resolved_moe();
    const TaskLoss tl = task_loss(fwd.logits, batch);
    MoEGrads grads = trainable_grads(m, fwd, tl, alpha);

    auto loss_at = [&]() {
        ForwardResult f = forward_pinned(m, batch, pinned);
        const LoadBalanceStats stats =
            load_balance_loss(f.decisions, moe_cfg.num_experts, moe_cfg.top_k);
        return total_loss(f.logits, batch, stats, alpha);
    };

    auto params = tensor_ptrs(m.moe);
    auto gs = tensor_ptrs(grads);
    double max_err = 0.0;
    for (size_t t = 0; t < params.size(); ++t) {
        Matrix& w = *params[t];
        const Matrix& g = *gs[t];
        for (size_t i = 0; i < w.size(); ++i) {
            const double keep = w.values()[i];
            w.values()[i] = keep + eps;
            const double up = loss_at();
            w.values()[i] = keep - eps;
            const double down = loss_at();
            w.values()[i] = keep;
            const double fd = (up - down) / (2.0 * eps);
            const double a = g.values()[i];
            // Relative error with an absolute floor so zero-gradient
            // parameters compare in absolute terms.
            const double err = std::abs(a - fd) / std::max(1e-4, std::abs(a) + std::abs(fd));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

double score_continuation(const Model& m, const std::vector<int>& prompt_ids,
                          const std::vector<int>& cont_ids) {
    if (prompt_ids.empty() || cont_ids.empty()) {
        throw InputError("score_continuation: empty prompt or continuation");
    }
    const int total = static_cast<int>(prompt_ids.size() + cont_ids.size());
    if (total > m.config.max_seq_len) {
        throw InputError("score_continuation: prompt too long (" + std::to_string(total) +
                         " > " + std::to_string(m.config.max_seq_len) + " tokens)");
    }
    TokenBatch batch;
    batch.batch = 1;
    batch.seq_len = total;
    batch.ids = prompt_ids;
    batch.ids.insert(batch.ids.end(), cont_ids.begin(), cont_ids.end());
    batch.loss_mask.assign(total, 0);

    const ForwardResult fwd = forward(m, batch);
    const int vocab = fwd.logits.cols();
    double logprob = 0.0;
    for (size_t c = 0; c < cont_ids.size(); ++c) {
        const int pos = static_cast<int>(prompt_ids.size() + c);  // token being predicted
        const double* row = fwd.logits.row_ptr(pos - 1);
        double mx = row[0];
        for (int j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < vocab; ++j) sum += std::exp(row[j] - mx);
        logprob += row[batch.ids[pos]] - (mx + std::log(sum));
    }
    return logprob;
}

LabelScore score_labels(const Model& m, const std::string& prompt_text) {
    std::vector<int> prompt_ids;
    prompt_ids.push_back(kBosToken);
    for (int id : byte_ids(prompt_text)) prompt_ids.push_back(id);

    LabelScore out;
    for (SentimentLabel l : kAllLabels) {
        const std::vector<int> cont = byte_ids(" " + label_word(l));
        out.logprobs[static_cast<int>(l)] = score_continuation(m, prompt_ids, cont);
    }
    double best = out.logprobs[0];
    for (double v : out.logprobs) best = std::max(best, v);
    int hits = 0;
    SentimentLabel arg = SentimentLabel::neutral;
    for (SentimentLabel l : kAllLabels) {
        if (out.logprobs[static_cast<int>(l)] == best) {
            ++hits;
            if (hits == 1) arg = l;
        }
    }
    out.label = hits > 1 ? SentimentLabel::neutral : arg;
    return out;
}

}  // namespace finmoe
