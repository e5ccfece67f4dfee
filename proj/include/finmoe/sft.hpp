// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "finmoe/labels.hpp"
#include "finmoe/model.hpp"

namespace finmoe {

struct SftExample {
    std::string source_text;
    SentimentLabel label = SentimentLabel::neutral;
    int q_idx = 0;
    int p_idx = 0;
    std::string prompt;  // question "\n" text "\n" prefix
    std::string full;    // prompt + " " + label word
    // Token index range [begin, end) of the label-word tokens (including
    // the leading space) within byte_tokenize(full).
    int span_begin = 0;
    int span_end = 0;
};

SftExample render_example(const std::string& text, SentimentLabel label, int q_idx, int p_idx);

struct CorpusItem {
    std::string text;
    SentimentLabel label = SentimentLabel::neutral;
};

enum class TemplatePolicy { round_robin, seeded_random };

TemplatePolicy template_policy_from_string(const std::string& s);
std::string to_string(TemplatePolicy p);

struct SplitRatios {
    double train = 0.9;
    double validation = 0.1;
};

struct DatasetSplits {
    std::vector<SftExample> train;
    std::vector<SftExample> validation;
    std::vector<SftExample> test;
    uint64_t split_seed = 0;
};

// Renders the corpus with templates assigned per policy (round_robin walks
// the 15x10 grid in corpus order), then splits train/validation by the
// ratios and draws test_count examples out of the validation pool.
DatasetSplits build_dataset(const std::vector<CorpusItem>& corpus, TemplatePolicy policy,
                            SplitRatios ratios, int test_count, uint64_t seed);

// Synthetic headline corpus with unambiguous label-correlated wording,
// balanced across the three classes within one item.
std::vector<CorpusItem> synth_corpus(int n, uint64_t seed);

// JSON-lines corpus: one object per line with fields text and label;
// unknown fields ignored; a bad label is a hard error naming the line.
std::vector<CorpusItem> load_corpus_jsonl(const std::string& path);
void write_corpus_jsonl(const std::vector<CorpusItem>& corpus, const std::string& path);

// Rendered examples for audit and for the training pipeline.
void write_examples_jsonl(const std::vector<SftExample>& examples, const std::string& path);
std::vector<SftExample> load_examples_jsonl(const std::string& path);

// Tokenizes rendered examples into one padded batch; the loss mask covers
// exactly the positions whose next token lies in the answer span.
TokenBatch batch_from_examples(const std::vector<SftExample>& examples);

}  // namespace finmoe
