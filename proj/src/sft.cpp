// SPDX-License-Identifier: Apache-2.0
#include "finmoe/sft.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "finmoe/errors.hpp"
#include "finmoe/rng.hpp"
#include "finmoe/templates.hpp"
#include "finmoe/tokenizer.hpp"

namespace finmoe {

using nlohmann::json;

SftExample render_example(const std::string& text, SentimentLabel label, int q_idx, int p_idx) {
    if (q_idx < 0 || q_idx >= kNumQuestions)
        throw ConfigError("render_example: q_idx out of range: " + std::to_string(q_idx));
    if (p_idx < 0 || p_idx >= kNumPrefixes)
        throw ConfigError("render_example: p_idx out of range: " + std::to_string(p_idx));
    if (text.empty()) throw InputError("render_example: empty text");

    SftExample ex;
    ex.source_text = text;
    ex.label = label;
    ex.q_idx = q_idx;
    ex.p_idx = p_idx;
    ex.prompt = sft_questions()[static_cast<size_t>(q_idx)] + "\n" + text + "\n" +
                sft_prefixes()[static_cast<size_t>(p_idx)];
    const std::string answer = std::string(" ") + label_word(label);
    ex.full = ex.prompt + answer;

    // byte_tokenize(full) = [BOS] + bytes + [EOS]; the answer occupies the
    // final |answer| byte positions before EOS.
    const int full_tokens = static_cast<int>(ex.full.size()) + 2;
    ex.span_end = full_tokens - 1;
    ex.span_begin = ex.span_end - static_cast<int>(answer.size());
    return ex;
}

TemplatePolicy template_policy_from_string(const std::string& s) {
    if (s == "round_robin") return TemplatePolicy::round_robin;
    if (s == "seeded_random") return TemplatePolicy::seeded_random;
    throw ConfigError("unknown template policy: " + s);
}

std::string to_string(TemplatePolicy p) {
    return p == TemplatePolicy::round_robin ? "round_robin" : "seeded_random";
}

DatasetSplits build_dataset(const std::vector<CorpusItem>& corpus, TemplatePolicy policy,
                            SplitRatios ratios, int test_count, uint64_t seed) {
    if (corpus.empty()) throw InputError("build_dataset: empty corpus");
    if (ratios.train <= 0.0 || ratios.validation < 0.0 ||
        std::abs(ratios.train + ratios.validation - 1.0) > 1e-9)
        throw ConfigError("build_dataset: split ratios must be positive and sum to 1");
    if (test_count < 0) throw ConfigError("build_dataset: negative test_count");

    SeededRng rng(seed);

    // Template assignment happens in corpus order, before any shuffling, so
    // the pairing is independent of the split seed for round_robin.
    std::vector<SftExample> rendered;
    rendered.reserve(corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) {
        int q = 0, p = 0;
        if (policy == TemplatePolicy::round_robin) {
            const int idx = static_cast<int>(i % (kNumQuestions * kNumPrefixes));
            q = idx % kNumQuestions;
            p = idx / kNumQuestions;
        } else {
            q = static_cast<int>(rng.uniform_int(kNumQuestions));
            p = static_cast<int>(rng.uniform_int(kNumPrefixes));
        }
        rendered.push_back(render_example(corpus[i].text, corpus[i].label, q, p));
    }

    std::vector<size_t> order(rendered.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    const size_t n = rendered.size();
    const size_t n_train = static_cast<size_t>(std::floor(ratios.train * static_cast<double>(n)));
    const size_t n_val_pool = n - n_train;
    if (static_cast<size_t>(test_count) > n_val_pool)
        throw ConfigError("build_dataset: test_count " + std::to_string(test_count) +
                          " exceeds held-out pool of " + std::to_string(n_val_pool));

    DatasetSplits out;
    out.split_seed = seed;
    out.train.reserve(n_train);
    for (size_t i = 0; i < n_train; ++i) out.train.push_back(rendered[order[i]]);
    for (size_t i = n_train; i < n; ++i) {
        const SftExample& ex = rendered[order[i]];
        if (out.test.size() < static_cast<size_t>(test_count)) out.test.push_back(ex);
        else out.validation.push_back(ex);
    }
    return out;
}

std::vector<CorpusItem> synth_corpus(int n, uint64_t seed) {
    if (n < 3) throw InputError("synth_corpus: need at least 3 items, got " + std::to_string(n));

    static const std::array<const char*, 12> subjects = {
        "Acme",   "Orion",    "Vertex",   "Nimbus", "Atlas",  "Zephyr",
        "Pinnacle", "Crescent", "Summit", "Harbor", "Quartz", "Beacon"};
    static const std::array<const char*, 5> positive_patterns = {
        "%s shares surge on record profit",
        "%s beats forecasts and raises guidance",
        "%s lands major contract, stock jumps",
        "%s posts strong growth this quarter",
        "%s dividend hike cheers investors"};
    static const std::array<const char*, 5> negative_patterns = {
        "%s shares slump after profit warning",
        "%s misses estimates, stock tumbles",
        "%s cuts outlook as losses widen",
        "%s faces layoffs amid weak demand",
        "%s recall costs drag earnings down"};
    static const std::array<const char*, 5> neutral_patterns = {
        "%s schedules annual shareholder meeting",
        "%s appoints new board member",
        "%s to report results next week",
        "%s completes routine audit",
        "%s relocates headquarters downtown"};

    SeededRng rng(seed);
    std::vector<CorpusItem> corpus;
    corpus.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const SentimentLabel label = kAllLabels[static_cast<size_t>(i % 3)];
        const char* subject = subjects[rng.uniform_int(subjects.size())];
        const char* pattern = nullptr;
        switch (label) {
            case SentimentLabel::positive:
                pattern = positive_patterns[rng.uniform_int(positive_patterns.size())];
                break;
            case SentimentLabel::negative:
                pattern = negative_patterns[rng.uniform_int(negative_patterns.size())];
                break;
            case SentimentLabel::neutral:
                pattern = neutral_patterns[rng.uniform_int(neutral_patterns.size())];
                break;
        }
        std::string text(pattern);
        const size_t at = text.find("%s");
        text.replace(at, 2, subject);
        corpus.push_back(CorpusItem{text, label});
    }
    return corpus;
}

namespace {

json parse_line(const std::string& line, const std::string& path, size_t lineno) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw InputError(path + ":" + std::to_string(lineno) + ": not a JSON object");
    return j;
}

std::string require_string(const json& j, const char* key, const std::string& path, size_t lineno) {
    if (!j.contains(key) || !j[key].is_string())
        throw InputError(path + ":" + std::to_string(lineno) + ": missing string field '" + key +
                         "'");
    return j[key].get<std::string>();
}

}  // namespace

std::vector<CorpusItem> load_corpus_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open corpus file: " + path);
    std::vector<CorpusItem> corpus;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const json j = parse_line(line, path, lineno);
        CorpusItem item;
        item.text = require_string(j, "text", path, lineno);
        if (item.text.empty())
            throw InputError(path + ":" + std::to_string(lineno) + ": empty text");
        const std::string word = require_string(j, "label", path, lineno);
        const std::optional<SentimentLabel> parsed = label_from_word(word);
        if (!parsed)
            throw InputError(path + ":" + std::to_string(lineno) + ": unknown label '" + word +
                             "'");
        item.label = *parsed;
        corpus.push_back(std::move(item));
    }
    if (corpus.empty()) throw InputError("corpus file has no records: " + path);
    return corpus;
}

void write_corpus_jsonl(const std::vector<CorpusItem>& corpus, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write corpus file: " + path);
    for (const CorpusItem& item : corpus) {
        json j;
        j["text"] = item.text;
        j["label"] = label_word(item.label);
        out << j.dump() << "\n";
    }
}

void write_examples_jsonl(const std::vector<SftExample>& examples, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write examples file: " + path);
    for (const SftExample& ex : examples) {
        json j;
        j["text"] = ex.source_text;
        j["label"] = label_word(ex.label);
        j["q_idx"] = ex.q_idx;
        j["p_idx"] = ex.p_idx;
        j["prompt"] = ex.prompt;
        j["full"] = ex.full;
        j["span_begin"] = ex.span_begin;
        j["span_end"] = ex.span_end;
        out << j.dump() << "\n";
    }
}

std::vector<SftExample> load_examples_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open examples file: " + path);
    std::vector<SftExample> examples;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const json j = parse_line(line, path, lineno);
        const std::string text = require_string(j, "text", path, lineno);
        const std::string word = require_string(j, "label", path, lineno);
        const std::optional<SentimentLabel> label = label_from_word(word);
        if (!label)
            throw InputError(path + ":" + std::to_string(lineno) + ": unknown label '" + word +
                             "'");
        if (!j.contains("q_idx") || !j["q_idx"].is_number_integer() || !j.contains("p_idx") ||
            !j["p_idx"].is_number_integer())
            throw InputError(path + ":" + std::to_string(lineno) + ": missing q_idx/p_idx");
        // Re-render from the source fields so span bookkeeping can never
        // drift from the stored strings.
        SftExample ex =
            render_example(text, *label, j["q_idx"].get<int>(), j["p_idx"].get<int>());
        if (j.contains("full") && j["full"].is_string() &&
            j["full"].get<std::string>() != ex.full)
            throw InputError(path + ":" + std::to_string(lineno) +
                             ": stored rendering disagrees with template fields");
        examples.push_back(std::move(ex));
    }
    if (examples.empty()) throw InputError("examples file has no records: " + path);
    return examples;
}

TokenBatch batch_from_examples(const std::vector<SftExample>& examples) {
    if (examples.empty()) throw InputError("batch_from_examples: empty batch");

    std::vector<std::vector<int>> ids;
    ids.reserve(examples.size());
    size_t max_len = 0;
    for (const SftExample& ex : examples) {
        ids.push_back(byte_tokenize(ex.full));
        max_len = std::max(max_len, ids.back().size());
    }

    TokenBatch batch;
    batch.batch = static_cast<int>(examples.size());
    batch.seq_len = static_cast<int>(max_len);
    batch.ids.assign(examples.size() * max_len, kPadToken);
    batch.loss_mask.assign(examples.size() * max_len, 0.0);
    for (size_t b = 0; b < examples.size(); ++b) {
        const SftExample& ex = examples[b];
        const std::vector<int>& seq = ids[b];
        std::copy(seq.begin(), seq.end(), batch.ids.begin() + static_cast<long>(b * max_len));
        if (ex.span_begin < 1 || ex.span_end > static_cast<int>(seq.size()) ||
            ex.span_begin >= ex.span_end)
            throw ContractError("batch_from_examples: bad answer span");
        // Position i carries loss iff its logits predict token i+1, so the
        // span [begin, end) over targets maps to mask [begin-1, end-1).
        for (int i = ex.span_begin - 1; i < ex.span_end - 1; ++i)
            batch.loss_mask[b * max_len + static_cast<size_t>(i)] = 1.0;
    }
    return batch;
}

}  // namespace finmoe
