// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate: every release criterion runs here, one pass/fail line
// per criterion, nonzero exit if any fail. Tolerances are pinned inline.
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "finmoe/checkpoint.hpp"
#include "finmoe/cli.hpp"
#include "finmoe/labels.hpp"
#include "finmoe/matrix.hpp"
#include "finmoe/metrics.hpp"
#include "finmoe/moa.hpp"
#include "finmoe/model.hpp"
#include "finmoe/moe.hpp"
#include "finmoe/rng.hpp"
#include "finmoe/sft.hpp"
#include "finmoe/templates.hpp"

#ifndef FINMOE_GOLDEN_DIR
#error "FINMOE_GOLDEN_DIR must point at the golden file directory"
#endif

using namespace finmoe;
namespace fs = std::filesystem;
using json = nlohmann::json;
using clock_type = std::chrono::steady_clock;

namespace {

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& what) {
    if (!cond) throw Failure(what);
}

void require_near(double got, double want, double tol, const std::string& what) {
    if (!(std::abs(got - want) <= tol))
        throw Failure(what + ": got " + std::to_string(got) + ", want " + std::to_string(want) +
                      " +/- " + std::to_string(tol));
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string golden(const std::string& name) {
    return slurp(fs::path(FINMOE_GOLDEN_DIR) / name);
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() /
               ("finmoe_acceptance_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run_cli(const std::vector<std::string>& args, std::string* out_text = nullptr) {
    std::ostringstream out, err;
    const int rc = run_command(args, out, err);
    if (out_text) *out_text = out.str() + err.str();
    return rc;
}

// The memorization config shared by the learning-smoke and determinism
// criteria: a 16-dim frozen stack over a 50-example synthetic train split.
void write_memorization_config(const std::string& path, int max_steps) {
    std::ofstream out(path);
    out << R"({
  "model": {"model_dim": 16, "num_layers": 2, "num_heads": 2, "max_seq_len": 160,
            "init_seed": 42, "moe": {"num_experts": 4, "top_k": 2, "expert_hidden": 64}},
  "train": {"learning_rate": 0.01, "batch_size": 50, "epochs": 1000, "max_steps": )"
        << max_steps << R"(, "shuffle_seed": 42},
  "data": {"synth_n": 56, "synth_seed": 42, "test_count": 3, "split_seed": 42}
})";
}

DatasetSplits memorization_splits() {
    return build_dataset(synth_corpus(56, 42), TemplatePolicy::round_robin, SplitRatios{0.9, 0.1},
                         3, 42);
}

Matrix gaussian_matrix(int rows, int cols, SeededRng& rng, double scale) {
    Matrix m(rows, cols);
    for (double& v : m.values()) v = scale * rng.gaussian();
    return m;
}

// --- 1. gradient correctness -------------------------------------------

void c1_gradient_correctness() {
    const auto start = clock_type::now();
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        std::string out;
        const int rc = run_cli({"gradcheck", "--seed", std::to_string(seed)}, &out);
        require(rc == 0, "gradcheck failed for seed " + std::to_string(seed) + ": " + out);
    }
    const double secs = std::chrono::duration<double>(clock_type::now() - start).count();
    require(secs < 60.0, "gradient checks took " + std::to_string(secs) + " s (limit 60)");
}

// --- 2. routing invariants ----------------------------------------------

void c2_routing_invariants() {
    const int E = 4, k = 2;
    SeededRng rng(5);
    Matrix logits = gaussian_matrix(1000, E, rng, 1.0);
    const std::vector<RoutingDecision> decisions = route(logits, k);
    require(decisions.size() == 1000, "expected one decision per token");
    for (const RoutingDecision& d : decisions) {
        require(static_cast<int>(d.selected.size()) == k, "selected count != k");
        require(d.selected[0] < d.selected[1], "selected not distinct ascending");
        double wsum = 0.0, psum = 0.0;
        for (double w : d.weights) wsum += w;
        for (double p : d.probs) psum += p;
        require_near(wsum, 1.0, 1e-12, "weight sum");
        require_near(psum, 1.0, 1e-12, "prob sum");
        // The selected pair carries the k largest probabilities.
        double min_sel = 1.0;
        for (int e : d.selected) min_sel = std::min(min_sel, d.probs[static_cast<size_t>(e)]);
        for (int e = 0; e < E; ++e) {
            const bool chosen = e == d.selected[0] || e == d.selected[1];
            if (!chosen)
                require(d.probs[static_cast<size_t>(e)] <= min_sel + 1e-15,
                        "unselected expert outranks a selected one");
        }
    }

    Matrix uniform(1, E);
    const std::vector<RoutingDecision> tie = route(uniform, k);
    require(tie[0].selected == std::vector<int>{0, 1}, "uniform tie must select [0, 1]");
    require_near(tie[0].weights[0], 0.5, 1e-12, "uniform tie weight 0");
    require_near(tie[0].weights[1], 0.5, 1e-12, "uniform tie weight 1");
}

// --- 3. load-balance closed forms ---------------------------------------

void c3_balance_closed_forms() {
    const int E = 4, k = 2, T = 8;
    std::vector<RoutingDecision> uniform_spread(T);
    for (int t = 0; t < T; ++t) {
        uniform_spread[static_cast<size_t>(t)].probs = {0.25, 0.25, 0.25, 0.25};
        int a = (2 * t) % E, b = (2 * t + 1) % E;
        if (a > b) std::swap(a, b);
        uniform_spread[static_cast<size_t>(t)].selected = {a, b};
        uniform_spread[static_cast<size_t>(t)].weights = {0.5, 0.5};
    }
    require_near(load_balance_loss(uniform_spread, E, k).loss, 0.125, 1e-12,
                 "uniform routing loss");

    std::vector<RoutingDecision> collapsed(T);
    for (RoutingDecision& d : collapsed) {
        d.probs = {0.5, 0.5, 0.0, 0.0};
        d.selected = {0, 1};
        d.weights = {0.5, 0.5};
    }
    require_near(load_balance_loss(collapsed, E, k).loss, 0.25, 1e-12, "collapsed routing loss");

    for (int e = 2; e <= 8; ++e)
        for (int kk = 1; kk < e; ++kk)
            require(static_cast<double>(kk) / (e * e) < 1.0 / e,
                    "k/E^2 < 1/E violated at E=" + std::to_string(e) + " k=" + std::to_string(kk));
}

// --- 4. identity-expert invariance --------------------------------------

void c4_identity_expert_invariance() {
    const int d = 6, E = 4, k = 2, h = 12, T = 7;
    SeededRng rng(11);
    ExpertParams shared;
    shared.w_gate = gaussian_matrix(d, h, rng, 0.4);
    shared.w_up = gaussian_matrix(d, h, rng, 0.4);
    shared.w_down = gaussian_matrix(h, d, rng, 0.4);

    MoEConfig cfg;
    cfg.num_experts = E;
    cfg.top_k = k;
    cfg.model_dim = d;
    cfg.expert_hidden = h;

    for (int trial = 0; trial < 100; ++trial) {
        MoEParams params;
        params.w_router = gaussian_matrix(d, E, rng, 1.0);
        params.experts.assign(E, shared);
        Matrix h_in = gaussian_matrix(T, d, rng, 1.0);

        const Matrix mixture = moe_forward(h_in, params, cfg).output;
        const Matrix single = expert_forward(h_in, shared);
        double max_diff = 0.0;
        for (size_t i = 0; i < mixture.size(); ++i)
            max_diff = std::max(max_diff,
                                std::abs(mixture.values()[i] - single.values()[i]));
        require(max_diff < 1e-10, "cloned-expert deviation " + std::to_string(max_diff) +
                                      " at trial " + std::to_string(trial));
    }
}

// --- 5. frozen invariance -----------------------------------------------

std::vector<std::vector<double>> snapshot_frozen(const Model& m) {
    std::vector<std::vector<double>> snap;
    m.for_each_frozen_tensor([&](const Matrix& t) { snap.push_back(t.values()); });
    return snap;
}

std::vector<std::vector<double>> snapshot_moe(const Model& m) {
    std::vector<std::vector<double>> snap;
    m.moe.for_each_tensor([&](const Matrix& t) { snap.push_back(t.values()); });
    return snap;
}

void run_steps(Model& m, const std::vector<SftExample>& examples, const TrainConfig& tc,
               int steps) {
    const size_t n = examples.size();
    size_t cursor = 0;
    for (int s = 0; s < steps; ++s) {
        std::vector<SftExample> chunk;
        for (int i = 0; i < tc.batch_size; ++i)
            chunk.push_back(examples[(cursor + static_cast<size_t>(i)) % n]);
        cursor = (cursor + static_cast<size_t>(tc.batch_size)) % n;
        train_step(m, batch_from_examples(chunk), tc);
    }
}

void c5_frozen_invariance() {
    const DatasetSplits splits = build_dataset(synth_corpus(300, 3), TemplatePolicy::round_robin,
                                               SplitRatios{1.0, 0.0}, 0, 3);
    require(splits.train.size() == 300, "expected the full corpus in the train split");
    int max_tokens = 0;
    for (const SftExample& ex : splits.train)
        max_tokens = std::max(max_tokens, ex.span_end + 1);

    ModelConfig mc;
    mc.model_dim = 16;
    mc.num_heads = 2;
    mc.num_layers = 2;
    mc.max_seq_len = max_tokens;
    mc.moe.num_experts = 4;
    mc.moe.top_k = 2;
    mc.moe.expert_hidden = 32;
    mc.init_seed = 9;

    TrainConfig tc;
    tc.learning_rate = 1e-2;
    tc.batch_size = 16;
    tc.alpha = 0.01;

    Model model = build_model(mc);
    const auto frozen_before = snapshot_frozen(model);
    const auto moe_before = snapshot_moe(model);
    run_steps(model, splits.train, tc, 100);
    require(snapshot_frozen(model) == frozen_before,
            "a frozen tensor changed during training");
    require(snapshot_moe(model) != moe_before, "expert tensors never moved at lr > 0");

    Model still = build_model(mc);
    TrainConfig zero = tc;
    zero.learning_rate = 0.0;
    const auto frozen_init = snapshot_frozen(still);
    const auto moe_init = snapshot_moe(still);
    run_steps(still, splits.train, zero, 100);
    require(snapshot_frozen(still) == frozen_init, "a frozen tensor changed at lr 0");
    require(snapshot_moe(still) == moe_init, "an expert tensor changed at lr 0");
}

// --- 6. learning smoke ---------------------------------------------------

void c6_learning_smoke() {
    const auto start = clock_type::now();
    TempDir tmp("learn");
    write_memorization_config(tmp.file("cfg.json"), 500);
    std::string out;
    require(run_cli({"train", "--config", tmp.file("cfg.json"), "--out", tmp.file("run")},
                    &out) == 0,
            "training run failed: " + out);

    const std::vector<std::string> log_lines = lines_of(slurp(tmp.file("run") + "/loss_log.jsonl"));
    require(log_lines.size() == 500, "expected 500 logged steps");
    const double step0_ce = json::parse(log_lines.front()).at("task_loss").get<double>();

    const Model model = load_checkpoint(tmp.file("run") + "/model.ckpt");
    const DatasetSplits splits = memorization_splits();
    require(splits.train.size() == 50, "memorization split must hold 50 examples");
    const TokenBatch batch = batch_from_examples(splits.train);
    const double final_ce = task_loss(forward(model, batch).logits, batch).ce;

    require(final_ce <= 0.8 * step0_ce,
            "cross-entropy " + std::to_string(final_ce) + " not <= 0.8 * " +
                std::to_string(step0_ce));
    const double secs = std::chrono::duration<double>(clock_type::now() - start).count();
    require(secs < 300.0, "learning smoke took " + std::to_string(secs) + " s (limit 300)");
}

// --- 7. balance-loss decomposition --------------------------------------

void c7_balance_decomposition() {
    const DatasetSplits splits = memorization_splits();
    ModelConfig mc;
    mc.model_dim = 16;
    mc.num_heads = 2;
    mc.num_layers = 2;
    mc.max_seq_len = 160;
    mc.moe.num_experts = 4;
    mc.moe.top_k = 2;
    mc.moe.expert_hidden = 64;
    mc.init_seed = 42;

    for (double alpha : {0.0, 0.01}) {
        Model model = build_model(mc);
        TrainConfig tc;
        tc.learning_rate = 0.01;
        tc.batch_size = 25;
        tc.alpha = alpha;
        const size_t n = splits.train.size();
        size_t cursor = 0;
        for (int step = 0; step < 40; ++step) {
            std::vector<SftExample> chunk;
            for (int i = 0; i < tc.batch_size; ++i)
                chunk.push_back(splits.train[(cursor + static_cast<size_t>(i)) % n]);
            cursor = (cursor + static_cast<size_t>(tc.batch_size)) % n;
            const StepRecord rec = train_step(model, batch_from_examples(chunk), tc);
            require_near(rec.total_loss - rec.task_loss, alpha * rec.balance_loss, 1e-12,
                         "loss decomposition at alpha " + std::to_string(alpha) + " step " +
                             std::to_string(step));
        }
    }
}

// --- 8. MoA golden scenarios ---------------------------------------------

AgentSpec scripted(const std::string& name, const std::string& text) {
    AgentSpec spec;
    spec.name = name;
    spec.kind = AgentKind::scripted;
    spec.script_text = text;
    return spec;
}

void c8_moa_goldens() {
    // An aggregator that overrides two wrong intermediate answers.
    {
        const std::vector<AgentSpec> proposers = {
            scripted("p1", "My read: the sentiment is negative."),
            scripted("p2", "Weak quarter, clearly negative."),
            scripted("p3", "Strong guidance; this is positive."),
        };
        const AgentSpec aggregator = scripted("final", "positive");
        const MoaRecord rec = run_moa("Shares rallied after earnings beat estimates.",
                                      proposers, aggregator);
        require(rec.final_label == SentimentLabel::positive,
                "override scenario: wrong final label");
        require(rec.disagreement, "override scenario: disagreement flag not set");
        require(rec.all_proposers_ok && rec.label_parsed, "override scenario: bad flags");
    }

    // A majority-following aggregator lands on the majority label.
    {
        const std::vector<AgentSpec> proposers = {
            scripted("p1", "I vote negative."),
            scripted("p2", "Looks negative."),
            scripted("p3", "Actually positive."),
        };
        AgentSpec aggregator = scripted("final", "");
        aggregator.script_mode = ScriptMode::majority;
        const MoaRecord rec = run_moa("Mixed quarter for the index.", proposers, aggregator);
        require(rec.final_label == SentimentLabel::negative,
                "majority scenario: expected the majority label");
    }

    // Aggregator prompts are byte-for-byte stable.
    {
        std::vector<AgentResponse> responses(3);
        responses[0] = {"alpha", "I think it is positive.", 0, AgentStatus::ok, ""};
        responses[1] = {"beta", "Looks negative to me.", 0, AgentStatus::ok, ""};
        responses[2] = {"gamma", "The sentiment is neutral.", 0, AgentStatus::ok, ""};
        require(build_aggregator_prompt("Is the firm's outlook improving?", responses) ==
                    golden("aggregator_prompt_all_ok.golden"),
                "all-ok aggregator prompt drifted from golden");
    }
    {
        std::vector<AgentResponse> responses(3);
        responses[0] = {"alpha", "Clearly positive results.", 0, AgentStatus::ok, ""};
        responses[1] = {"beta", "", 0, AgentStatus::timeout, "timed out"};
        responses[2] = {"gamma", "", 0, AgentStatus::error, "boom"};
        require(build_aggregator_prompt("Quarterly numbers for review.", responses) ==
                    golden("aggregator_prompt_one_failed.golden"),
                "partial-failure aggregator prompt drifted from golden");
    }
}

// --- 9. metrics oracle ----------------------------------------------------

void c9_metrics_oracle() {
    const SentimentLabel P = SentimentLabel::positive;
    const SentimentLabel N = SentimentLabel::negative;
    const SentimentLabel U = SentimentLabel::neutral;
    auto wrap = [](std::vector<SentimentLabel> v) {
        std::vector<std::optional<SentimentLabel>> out;
        for (SentimentLabel l : v) out.emplace_back(l);
        return out;
    };

    const MetricsReport hand = metrics(confusion({P, P, N, U}, wrap({P, N, N, U})));
    require_near(hand.accuracy, 0.75, 1e-4, "hand-tallied accuracy");
    require_near(hand.macro_f1, 0.7778, 1e-4, "hand-tallied macro F1");

    const MetricsReport perfect = metrics(confusion({P, N, U, P}, wrap({P, N, U, P})));
    require_near(perfect.accuracy, 1.0, 1e-12, "perfect accuracy");
    require_near(perfect.macro_f1, 1.0, 1e-12, "perfect macro F1");
    require_near(perfect.macro_precision, 1.0, 1e-12, "perfect macro precision");
    require_near(perfect.macro_recall, 1.0, 1e-12, "perfect macro recall");
}

// --- 10. template fidelity ------------------------------------------------

void c10_template_fidelity() {
    require(lines_of(golden("template_questions.golden")) == sft_questions(),
            "question registry drifted from golden");
    require(lines_of(golden("template_prefixes.golden")) == sft_prefixes(),
            "prefix registry drifted from golden");
    require(static_cast<int>(sft_questions().size()) == kNumQuestions, "question count");
    require(static_cast<int>(sft_prefixes().size()) == kNumPrefixes, "prefix count");

    std::vector<CorpusItem> corpus;
    for (int i = 0; i < 150; ++i)
        corpus.push_back({"item " + std::to_string(i), SentimentLabel::neutral});
    const DatasetSplits splits =
        build_dataset(corpus, TemplatePolicy::round_robin, SplitRatios{1.0, 0.0}, 0, 1);
    require(splits.train.size() == 150, "coverage corpus must land fully in train");
    std::vector<std::pair<int, int>> pairs;
    for (const SftExample& ex : splits.train) pairs.emplace_back(ex.q_idx, ex.p_idx);
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    require(pairs.size() == 150, "round robin must cover all 150 (question, prefix) pairs");
}

// --- 11. end-to-end determinism -------------------------------------------

void c11_end_to_end_determinism() {
    TempDir tmp("determinism");
    write_memorization_config(tmp.file("cfg.json"), 50);
    for (const std::string& run : {"a", "b"}) {
        std::string out;
        require(run_cli({"build-dataset", "--config", tmp.file("cfg.json"), "--out",
                         tmp.file(run)},
                        &out) == 0,
                "build-dataset failed: " + out);
        require(run_cli({"train", "--config", tmp.file("cfg.json"), "--out", tmp.file(run)},
                        &out) == 0,
                "train failed: " + out);
        require(run_cli({"eval", "--config", tmp.file("cfg.json"), "--checkpoint",
                         tmp.file(run) + "/model.ckpt", "--out", tmp.file(run)},
                        &out) == 0,
                "eval failed: " + out);
    }
    require(slurp(tmp.file("a") + "/train.jsonl") == slurp(tmp.file("b") + "/train.jsonl"),
            "rendered datasets differ between runs");
    require(slurp(tmp.file("a") + "/loss_log.jsonl") == slurp(tmp.file("b") + "/loss_log.jsonl"),
            "loss logs differ between runs");
    require(slurp(tmp.file("a") + "/report.json") == slurp(tmp.file("b") + "/report.json"),
            "metric reports differ between runs");
}

struct Criterion {
    int id;
    const char* name;
    std::function<void()> body;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "gradient correctness (finite differences, 3 seeds)", c1_gradient_correctness},
        {2, "routing invariants over 1000 tokens + tie golden", c2_routing_invariants},
        {3, "load-balance closed forms and k/E^2 < 1/E", c3_balance_closed_forms},
        {4, "cloned experts match a single expert", c4_identity_expert_invariance},
        {5, "frozen tensors bit-identical through training", c5_frozen_invariance},
        {6, "learning smoke: 0.8x cross-entropy in 500 steps", c6_learning_smoke},
        {7, "total = task + alpha * balance at every step", c7_balance_decomposition},
        {8, "mixture-of-agents golden scenarios", c8_moa_goldens},
        {9, "metrics oracle: hand tally and perfect case", c9_metrics_oracle},
        {10, "template registry fidelity and pair coverage", c10_template_fidelity},
        {11, "end-to-end determinism across identical runs", c11_end_to_end_determinism},
    };

    int failures = 0;
    for (const Criterion& c : criteria) {
        const auto start = clock_type::now();
        std::string detail;
        bool ok = true;
        try {
            c.body();
        } catch (const std::exception& e) {
            ok = false;
            detail = e.what();
        }
        const double secs = std::chrono::duration<double>(clock_type::now() - start).count();
        char timing[32];
        std::snprintf(timing, sizeof(timing), "%.1f s", secs);
        if (ok) {
            std::cout << "PASS: " << c.id << ". " << c.name << " [" << timing << "]\n";
        } else {
            ++failures;
            std::cout << "FAIL: " << c.id << ". " << c.name << " [" << timing << "] — " << detail
                      << "\n";
        }
        std::cout.flush();
    }
    if (failures != 0) std::cout << failures << " criterion(s) failed\n";
    return failures == 0 ? 0 : 1;
}
