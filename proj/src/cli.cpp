// SPDX-License-Identifier: Apache-2.0
#include "finmoe/cli.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "finmoe/checkpoint.hpp"
#include "finmoe/errors.hpp"
#include "finmoe/metrics.hpp"
#include "finmoe/moa.hpp"
#include "finmoe/tokenizer.hpp"

namespace finmoe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void read_int(const json& j, const char* section, const char* key, int& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_integer())
        throw ConfigError(std::string(section) + "." + key + ": must be an integer");
    out = j[key].get<int>();
}

void read_u64(const json& j, const char* section, const char* key, uint64_t& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_unsigned() && !j[key].is_number_integer())
        throw ConfigError(std::string(section) + "." + key + ": must be an integer");
    out = j[key].get<uint64_t>();
}

void read_double(const json& j, const char* section, const char* key, double& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number())
        throw ConfigError(std::string(section) + "." + key + ": must be a number");
    out = j[key].get<double>();
}

void read_string(const json& j, const char* section, const char* key, std::string& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_string())
        throw ConfigError(std::string(section) + "." + key + ": must be a string");
    out = j[key].get<std::string>();
}

}  // namespace

CliConfig load_cli_config(const std::string& path) {
    CliConfig cfg;
    if (path.empty()) return cfg;

    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw ConfigError("config file is not a JSON object: " + path);

    if (j.contains("model")) {
        const json& m = j["model"];
        if (!m.is_object()) throw ConfigError("model: must be an object");
        read_int(m, "model", "vocab_size", cfg.model.vocab_size);
        read_int(m, "model", "model_dim", cfg.model.model_dim);
        read_int(m, "model", "num_layers", cfg.model.num_layers);
        read_int(m, "model", "num_heads", cfg.model.num_heads);
        read_int(m, "model", "max_seq_len", cfg.model.max_seq_len);
        read_u64(m, "model", "init_seed", cfg.model.init_seed);
        if (m.contains("moe")) {
            const json& e = m["moe"];
            if (!e.is_object()) throw ConfigError("model.moe: must be an object");
            read_int(e, "model.moe", "num_experts", cfg.model.moe.num_experts);
            read_int(e, "model.moe", "top_k", cfg.model.moe.top_k);
            read_int(e, "model.moe", "expert_hidden", cfg.model.moe.expert_hidden);
            read_double(e, "model.moe", "alpha", cfg.model.moe.alpha);
        }
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        if (!t.is_object()) throw ConfigError("train: must be an object");
        read_double(t, "train", "learning_rate", cfg.train.learning_rate);
        read_int(t, "train", "batch_size", cfg.train.batch_size);
        read_int(t, "train", "epochs", cfg.train.epochs);
        read_double(t, "train", "alpha", cfg.train.alpha);
        read_u64(t, "train", "shuffle_seed", cfg.train.shuffle_seed);
        read_int(t, "train", "max_steps", cfg.train.max_steps);
    }
    if (j.contains("data")) {
        const json& d = j["data"];
        if (!d.is_object()) throw ConfigError("data: must be an object");
        read_string(d, "data", "corpus", cfg.data.corpus_path);
        read_int(d, "data", "synth_n", cfg.data.synth_n);
        read_u64(d, "data", "synth_seed", cfg.data.synth_seed);
        std::string policy;
        read_string(d, "data", "template_policy", policy);
        if (!policy.empty()) cfg.data.policy = template_policy_from_string(policy);
        read_double(d, "data", "train_ratio", cfg.data.ratios.train);
        read_double(d, "data", "validation_ratio", cfg.data.ratios.validation);
        read_int(d, "data", "test_count", cfg.data.test_count);
        read_u64(d, "data", "split_seed", cfg.data.split_seed);
    }
    cfg.model.validate();
    cfg.train.validate();
    return cfg;
}

std::string cli_config_to_json(const CliConfig& cfg) {
    json j;
    j["model"] = {{"vocab_size", cfg.model.vocab_size},
                  {"model_dim", cfg.model.model_dim},
                  {"num_layers", cfg.model.num_layers},
                  {"num_heads", cfg.model.num_heads},
                  {"max_seq_len", cfg.model.max_seq_len},
                  {"init_seed", cfg.model.init_seed},
                  {"moe",
                   {{"num_experts", cfg.model.moe.num_experts},
                    {"top_k", cfg.model.moe.top_k},
                    {"expert_hidden", cfg.model.resolved_moe().expert_hidden},
                    {"alpha", cfg.model.moe.alpha}}}};
    j["train"] = {{"learning_rate", cfg.train.learning_rate},
                  {"batch_size", cfg.train.batch_size},
                  {"epochs", cfg.train.epochs},
                  {"alpha", cfg.train.alpha},
                  {"shuffle_seed", cfg.train.shuffle_seed},
                  {"max_steps", cfg.train.max_steps}};
    j["data"] = {{"corpus", cfg.data.corpus_path},
                 {"synth_n", cfg.data.synth_n},
                 {"synth_seed", cfg.data.synth_seed},
                 {"template_policy", to_string(cfg.data.policy)},
                 {"train_ratio", cfg.data.ratios.train},
                 {"validation_ratio", cfg.data.ratios.validation},
                 {"test_count", cfg.data.test_count},
                 {"split_seed", cfg.data.split_seed}};
    return j.dump(2);
}

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    uint64_t seed = 0;
    bool seed_given = false;
};

CliConfig resolve_config(const CommonOpts& opts) {
    CliConfig cfg = load_cli_config(opts.config_path);
    if (opts.seed_given) {
        cfg.model.init_seed = opts.seed;
        cfg.train.shuffle_seed = opts.seed;
        cfg.data.split_seed = opts.seed;
        cfg.data.synth_seed = opts.seed;
    }
    return cfg;
}

fs::path prepare_out_dir(const CommonOpts& opts, const CliConfig& cfg) {
    fs::path dir(opts.out_dir);
    fs::create_directories(dir);
    std::ofstream echo(dir / "config.json");
    echo << cli_config_to_json(cfg) << "\n";
    return dir;
}

DatasetSplits load_splits(const CliConfig& cfg) {
    std::vector<CorpusItem> corpus =
        cfg.data.corpus_path.empty() ? synth_corpus(cfg.data.synth_n, cfg.data.synth_seed)
                                     : load_corpus_jsonl(cfg.data.corpus_path);
    return build_dataset(corpus, cfg.data.policy, cfg.data.ratios, cfg.data.test_count,
                         cfg.data.split_seed);
}

int cmd_build_dataset(const CommonOpts& opts, std::ostream& out) {
    const CliConfig cfg = resolve_config(opts);
    const fs::path dir = prepare_out_dir(opts, cfg);
    const DatasetSplits splits = load_splits(cfg);
    write_examples_jsonl(splits.train, (dir / "train.jsonl").string());
    if (!splits.validation.empty())
        write_examples_jsonl(splits.validation, (dir / "validation.jsonl").string());
    if (!splits.test.empty()) write_examples_jsonl(splits.test, (dir / "test.jsonl").string());
    out << "train: " << splits.train.size() << "  validation: " << splits.validation.size()
        << "  test: " << splits.test.size() << "\n";
    out << "wrote " << (dir / "train.jsonl").string() << "\n";
    return 0;
}

int cmd_train(const CommonOpts& opts, std::ostream& out) {
    const CliConfig cfg = resolve_config(opts);
    const fs::path dir = prepare_out_dir(opts, cfg);
    const DatasetSplits splits = load_splits(cfg);
    if (splits.train.empty()) throw InputError("train: empty training split");

    Model model = build_model(cfg.model);
    std::ofstream log(dir / "loss_log.jsonl");
    if (!log) throw InputError("cannot write loss log in " + dir.string());

    SeededRng shuffle_rng(cfg.train.shuffle_seed);
    int step = 0;
    bool done = false;
    StepRecord last{};
    for (int epoch = 0; epoch < cfg.train.epochs && !done; ++epoch) {
        std::vector<size_t> order(splits.train.size());
        std::iota(order.begin(), order.end(), 0);
        shuffle_rng.shuffle(order);
        for (size_t begin = 0; begin < order.size() && !done;
             begin += static_cast<size_t>(cfg.train.batch_size)) {
            const size_t end =
                std::min(order.size(), begin + static_cast<size_t>(cfg.train.batch_size));
            std::vector<SftExample> chunk;
            chunk.reserve(end - begin);
            for (size_t i = begin; i < end; ++i) chunk.push_back(splits.train[order[i]]);
            const TokenBatch batch = batch_from_examples(chunk);
            last = train_step(model, batch, cfg.train);
            ++step;
            log << json{{"step", step},
                        {"task_loss", last.task_loss},
                        {"balance_loss", last.balance_loss},
                        {"total_loss", last.total_loss}}
                       .dump()
                << "\n";
            if (step % 50 == 0)
                out << "step " << step << "  task " << last.task_loss << "  balance "
                    << last.balance_loss << "\n";
            if (cfg.train.max_steps > 0 && step >= cfg.train.max_steps) done = true;
        }
    }
    const std::string ckpt = (dir / "model.ckpt").string();
    save_checkpoint(model, ckpt);
    out << "steps: " << step << "  final task loss: " << last.task_loss
        << "  final total loss: " << last.total_loss << "\n";
    out << "checkpoint: " << ckpt << "\n";
    return 0;
}

int write_report(const MetricsReport& report, const fs::path& dir, std::ostream& out) {
    out << render_report(report);
    std::ofstream rep(dir / "report.json");
    rep << report_to_json(report) << "\n";
    out << "report: " << (dir / "report.json").string() << "\n";
    return 0;
}

int cmd_eval_checkpoint(const CommonOpts& opts, const std::string& ckpt, std::ostream& out) {
    const CliConfig cfg = resolve_config(opts);
    const fs::path dir = prepare_out_dir(opts, cfg);
    const DatasetSplits splits = load_splits(cfg);
    if (splits.test.empty()) throw InputError("eval: empty test split (set data.test_count)");

    const Model model = load_checkpoint(ckpt);
    std::vector<SentimentLabel> golds;
    std::vector<std::optional<SentimentLabel>> preds;
    std::ofstream pred_log(dir / "predictions.jsonl");
    for (const SftExample& ex : splits.test) {
        const LabelScore score = score_labels(model, ex.prompt);
        golds.push_back(ex.label);
        preds.emplace_back(score.label);
        pred_log << json{{"text", ex.source_text},
                         {"gold", label_word(ex.label)},
                         {"pred", label_word(score.label)}}
                        .dump()
                 << "\n";
    }
    return write_report(metrics(confusion(golds, preds)), dir, out);
}

int cmd_eval_moa_log(const CommonOpts& opts, const std::string& log_path, std::ostream& out) {
    const CliConfig cfg = resolve_config(opts);
    const fs::path dir = prepare_out_dir(opts, cfg);
    std::ifstream in(log_path);
    if (!in) throw InputError("cannot open MoA log: " + log_path);

    std::vector<SentimentLabel> golds;
    std::vector<std::optional<SentimentLabel>> preds;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            throw InputError(log_path + ":" + std::to_string(lineno) + ": bad record");
        if (!j.contains("gold") || !j["gold"].is_string())
            throw InputError(log_path + ":" + std::to_string(lineno) +
                             ": record has no gold label; run moa-run on a labeled corpus");
        const std::optional<SentimentLabel> gold = label_from_word(j["gold"].get<std::string>());
        if (!gold)
            throw InputError(log_path + ":" + std::to_string(lineno) + ": bad gold label");
        golds.push_back(*gold);
        std::optional<SentimentLabel> pred;
        if (j.contains("final_label") && j["final_label"].is_string())
            pred = label_from_word(j["final_label"].get<std::string>());
        preds.push_back(pred);
    }
    if (golds.empty()) throw InputError("MoA log has no records: " + log_path);
    return write_report(metrics(confusion(golds, preds)), dir, out);
}

struct PromptItem {
    std::string prompt;
    std::optional<SentimentLabel> gold;
};

// A line that parses as a JSON object with a text field is treated as a
// corpus record and rendered with the first question/prefix pair; anything
// else is passed through as a raw prompt.
std::vector<PromptItem> load_prompts(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open prompts file: " + path);
    std::vector<PromptItem> items;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        PromptItem item;
        json j = json::parse(line, nullptr, false);
        if (!j.is_discarded() && j.is_object() && j.contains("text") && j["text"].is_string()) {
            if (j.contains("label") && j["label"].is_string())
                item.gold = label_from_word(j["label"].get<std::string>());
            item.prompt =
                render_example(j["text"].get<std::string>(),
                               item.gold.value_or(SentimentLabel::neutral), 0, 0)
                    .prompt;
        } else {
            item.prompt = line;
        }
        items.push_back(std::move(item));
    }
    if (items.empty()) throw InputError("prompts file has no prompts: " + path);
    return items;
}

int cmd_moa_run(const CommonOpts& opts, const std::string& agents_path,
                const std::string& prompts_path, int parallel, std::ostream& out) {
    if (parallel < 1) throw ConfigError("--parallel must be >= 1");
    const AgentsConfig agents = load_agents_config(agents_path);
    const std::vector<PromptItem> items = load_prompts(prompts_path);
    fs::path dir(opts.out_dir);
    fs::create_directories(dir);

    std::vector<MoaRecord> records(items.size());
    std::atomic<size_t> next{0};
    auto worker = [&] {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= items.size()) return;
            records[i] = run_moa(items[i].prompt, agents.proposers, agents.aggregator);
        }
    };
    std::vector<std::thread> pool;
    const int n_threads = std::min<int>(parallel, static_cast<int>(items.size()));
    pool.reserve(static_cast<size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();

    const fs::path log_path = dir / "moa_log.jsonl";
    std::ofstream log(log_path);
    if (!log) throw InputError("cannot write MoA log in " + dir.string());
    size_t failures = 0;
    size_t unparsed = 0;
    for (size_t i = 0; i < records.size(); ++i) {
        json j = json::parse(record_to_json(records[i]));
        if (items[i].gold) j["gold"] = label_word(*items[i].gold);
        log << j.dump() << "\n";
        if (records[i].aggregator.status != AgentStatus::ok) ++failures;
        else if (!records[i].label_parsed) ++unparsed;
    }
    out << "prompts: " << items.size() << "  failures: " << failures
        << "  unparsed: " << unparsed << "\n";
    out << "log: " << log_path.string() << "\n";
    return failures == 0 ? 0 : 1;
}

int cmd_route_stats(const CommonOpts& opts, const std::string& ckpt, const std::string& split,
                    std::ostream& out) {
    const CliConfig cfg = resolve_config(opts);
    const fs::path dir = prepare_out_dir(opts, cfg);
    const DatasetSplits splits = load_splits(cfg);
    const std::vector<SftExample>* examples = nullptr;
    if (split == "train") examples = &splits.train;
    else if (split == "validation") examples = &splits.validation;
    else if (split == "test") examples = &splits.test;
    else throw ConfigError("--split must be train, validation or test");
    if (examples->empty()) throw InputError("route-stats: split '" + split + "' is empty");

    const Model model = load_checkpoint(ckpt);
    const MoEConfig moe_cfg = model.config.resolved_moe();
    std::vector<RoutingDecision> decisions;
    for (size_t begin = 0; begin < examples->size();
         begin += static_cast<size_t>(cfg.train.batch_size)) {
        const size_t end =
            std::min(examples->size(), begin + static_cast<size_t>(cfg.train.batch_size));
        std::vector<SftExample> chunk(examples->begin() + static_cast<long>(begin),
                                      examples->begin() + static_cast<long>(end));
        ForwardResult res = forward(model, batch_from_examples(chunk));
        for (RoutingDecision& d : res.decisions) decisions.push_back(std::move(d));
    }
    const LoadBalanceStats stats =
        load_balance_loss(decisions, moe_cfg.num_experts, moe_cfg.top_k);

    out << std::fixed << std::setprecision(6);
    out << "tokens: " << decisions.size() << "  split: " << split << "\n";
    out << "expert       f_e         p_e\n";
    double f_sum = 0.0, p_sum = 0.0;
    for (int e = 0; e < moe_cfg.num_experts; ++e) {
        out << std::setw(4) << e << "   " << std::setw(10) << stats.f[static_cast<size_t>(e)]
            << "  " << std::setw(10) << stats.p[static_cast<size_t>(e)] << "\n";
        f_sum += stats.f[static_cast<size_t>(e)];
        p_sum += stats.p[static_cast<size_t>(e)];
    }
    out << "sum    " << std::setw(10) << f_sum << "  " << std::setw(10) << p_sum << "\n";
    out << "balance loss: " << stats.loss << "\n";

    json j;
    j["tokens"] = decisions.size();
    j["split"] = split;
    j["f"] = stats.f;
    j["p"] = stats.p;
    j["balance_loss"] = stats.loss;
    std::ofstream rep(dir / "route_stats.json");
    rep << j.dump(2) << "\n";
    return 0;
}

int cmd_gradcheck(uint64_t seed, double eps, std::ostream& out) {
    ModelConfig mc;
    mc.model_dim = 8;
    mc.num_heads = 2;
    mc.num_layers = 2;
    mc.max_seq_len = 16;
    mc.moe.num_experts = 4;
    mc.moe.top_k = 2;
    mc.moe.expert_hidden = 16;
    mc.init_seed = seed;
    Model model = build_model(mc);

    SeededRng rng(seed + 17);
    TokenBatch batch;
    batch.batch = 2;
    batch.seq_len = 16;
    batch.ids.resize(static_cast<size_t>(batch.tokens()));
    batch.loss_mask.assign(static_cast<size_t>(batch.tokens()), 0);
    for (int b = 0; b < batch.batch; ++b) {
        batch.ids[static_cast<size_t>(b * batch.seq_len)] = kBosToken;
        for (int t = 1; t < batch.seq_len; ++t)
            batch.ids[static_cast<size_t>(b * batch.seq_len + t)] =
                kByteOffset + static_cast<int>(rng.uniform_int(256));
        bool any = false;
        for (int t = 0; t < batch.seq_len - 1; ++t) {
            const int bit = rng.uniform() < 0.5 ? 1 : 0;
            batch.loss_mask[static_cast<size_t>(b * batch.seq_len + t)] = bit;
            any = any || bit != 0;
        }
        if (!any) batch.loss_mask[static_cast<size_t>(b * batch.seq_len)] = 1;
    }

    const double max_err = gradient_check(model, batch, eps, 0.01);
    out << "max relative gradient error: " << std::scientific << std::setprecision(3) << max_err
        << " (seed " << seed << ", eps " << eps << ")\n";
    return max_err < 1e-4 ? 0 : 1;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sparse-expert sentiment model: data, training, evaluation, routing "
                 "diagnostics and multi-agent runs"};
    app.require_subcommand(1);

    CommonOpts opts;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config_path, "JSON config file");
        sub->add_option("--out", opts.out_dir, "output directory")->capture_default_str();
        sub->add_option("--seed", opts.seed, "override init/shuffle/split/synth seeds")
            ->each([&](const std::string&) { opts.seed_given = true; });
    };

    int rc = 0;

    CLI::App* build = app.add_subcommand("build-dataset", "render corpus into train/val/test");
    add_common(build);
    build->callback([&] { rc = cmd_build_dataset(opts, out); });

    CLI::App* train = app.add_subcommand("train", "run the expert-layer training loop");
    add_common(train);
    train->callback([&] { rc = cmd_train(opts, out); });

    CLI::App* eval = app.add_subcommand("eval", "score a checkpoint or a MoA log");
    add_common(eval);
    std::string eval_ckpt, eval_moa_log;
    eval->add_option("--checkpoint", eval_ckpt, "model checkpoint to score on the test split");
    eval->add_option("--moa-log", eval_moa_log, "MoA record log with gold labels");
    eval->callback([&] {
        if ((eval_ckpt.empty()) == (eval_moa_log.empty()))
            throw ConfigError("eval: pass exactly one of --checkpoint or --moa-log");
        rc = eval_ckpt.empty() ? cmd_eval_moa_log(opts, eval_moa_log, out)
                               : cmd_eval_checkpoint(opts, eval_ckpt, out);
    });

    CLI::App* moa = app.add_subcommand("moa-run", "fan prompts through proposers + aggregator");
    add_common(moa);
    std::string agents_path, prompts_path;
    int parallel = 1;
    moa->add_option("--agents", agents_path, "agents config JSON")->required();
    moa->add_option("--prompts", prompts_path, "JSONL corpus or plain prompt lines")->required();
    moa->add_option("--parallel", parallel, "concurrent prompt workers")->capture_default_str();
    moa->callback([&] { rc = cmd_moa_run(opts, agents_path, prompts_path, parallel, out); });

    CLI::App* route = app.add_subcommand("route-stats", "per-expert routing statistics");
    add_common(route);
    std::string route_ckpt, route_split = "validation";
    route->add_option("--checkpoint", route_ckpt, "model checkpoint")->required();
    route->add_option("--split", route_split, "train|validation|test")->capture_default_str();
    route->callback([&] { rc = cmd_route_stats(opts, route_ckpt, route_split, out); });

    CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference check of the expert layer");
    uint64_t grad_seed = 1;
    double grad_eps = 1e-5;
    grad->add_option("--seed", grad_seed, "model/batch seed")->capture_default_str();
    grad->add_option("--eps", grad_eps, "finite-difference step")->capture_default_str();
    grad->callback([&] { rc = cmd_gradcheck(grad_seed, grad_eps, out); });

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("finmoe");
    for (const std::string& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return rc;
}

}  // namespace finmoe
