// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "finmoe/labels.hpp"

namespace finmoe {

// Rows = gold class, columns = predicted class, both in kAllLabels order.
struct ConfusionMatrix {
    std::array<std::array<long, 3>, 3> cells{};
    long n_unparsed = 0;

    long at(SentimentLabel gold, SentimentLabel pred) const {
        return cells[static_cast<size_t>(gold)][static_cast<size_t>(pred)];
    }
    long trace() const;
    long total() const;
    long gold_support(SentimentLabel c) const;
    long pred_support(SentimentLabel c) const;
};

// Predictions may be absent (nullopt = unparsed); those pairs are excluded
// from the matrix and tallied in n_unparsed.
ConfusionMatrix confusion(const std::vector<SentimentLabel>& golds,
                          const std::vector<std::optional<SentimentLabel>>& preds);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long support = 0;         // gold count
    bool degenerate = false;  // class absent from both golds and preds
};

struct MetricsReport {
    double accuracy = 0.0;
    std::array<ClassMetrics, 3> per_class{};  // kAllLabels order
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    double weighted_precision = 0.0;
    double weighted_recall = 0.0;
    double weighted_f1 = 0.0;
    long n_evaluated = 0;
    long n_unparsed = 0;
    ConfusionMatrix cm;
};

// 0/0 ratios are defined as 0 throughout.
MetricsReport metrics(const ConfusionMatrix& cm);

std::string render_report(const MetricsReport& r);
std::string report_to_json(const MetricsReport& r);

}  // namespace finmoe
