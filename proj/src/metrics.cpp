// SPDX-License-Identifier: Apache-2.0
#include "finmoe/metrics.hpp"

#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "finmoe/errors.hpp"

namespace finmoe {

using nlohmann::json;

long ConfusionMatrix::trace() const {
    long t = 0;
    for (size_t i = 0; i < 3; ++i) t += cells[i][i];
    return t;
}

long ConfusionMatrix::total() const {
    long t = 0;
    for (const auto& row : cells)
        for (long c : row) t += c;
    return t;
}

long ConfusionMatrix::gold_support(SentimentLabel c) const {
    long t = 0;
    for (long v : cells[static_cast<size_t>(c)]) t += v;
    return t;
}

long ConfusionMatrix::pred_support(SentimentLabel c) const {
    long t = 0;
    for (const auto& row : cells) t += row[static_cast<size_t>(c)];
    return t;
}

ConfusionMatrix confusion(const std::vector<SentimentLabel>& golds,
                          const std::vector<std::optional<SentimentLabel>>& preds) {
    if (golds.empty()) throw InputError("confusion: empty input");
    if (golds.size() != preds.size())
        throw InputError("confusion: golds/preds length mismatch: " +
                         std::to_string(golds.size()) + " vs " + std::to_string(preds.size()));
    ConfusionMatrix cm;
    for (size_t i = 0; i < golds.size(); ++i) {
        if (!preds[i].has_value()) {
            ++cm.n_unparsed;
            continue;
        }
        ++cm.cells[static_cast<size_t>(golds[i])][static_cast<size_t>(*preds[i])];
    }
    return cm;
}

namespace {

double safe_ratio(long num, long den) { return den == 0 ? 0.0 : static_cast<double>(num) / den; }

}  // namespace

MetricsReport metrics(const ConfusionMatrix& cm) {
    const long total = cm.total();
    if (total <= 0) throw InputError("metrics: empty confusion matrix");

    MetricsReport r;
    r.cm = cm;
    r.n_evaluated = total;
    r.n_unparsed = cm.n_unparsed;
    r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);

    for (SentimentLabel c : kAllLabels) {
        const size_t ci = static_cast<size_t>(c);
        const long tp = cm.cells[ci][ci];
        const long gold = cm.gold_support(c);
        const long pred = cm.pred_support(c);
        ClassMetrics m;
        m.support = gold;
        m.degenerate = (gold == 0 && pred == 0);
        m.precision = safe_ratio(tp, pred);
        m.recall = safe_ratio(tp, gold);
        m.f1 = (m.precision + m.recall) == 0.0
                   ? 0.0
                   : 2.0 * m.precision * m.recall / (m.precision + m.recall);
        r.per_class[ci] = m;

        r.macro_precision += m.precision / 3.0;
        r.macro_recall += m.recall / 3.0;
        r.macro_f1 += m.f1 / 3.0;
        const double w = static_cast<double>(gold) / static_cast<double>(total);
        r.weighted_precision += w * m.precision;
        r.weighted_recall += w * m.recall;
        r.weighted_f1 += w * m.f1;
    }
    return r;
}

std::string render_report(const MetricsReport& r) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << "evaluated: " << r.n_evaluated << "  unparsed: " << r.n_unparsed << "\n";
    out << "accuracy: " << r.accuracy << "\n";
    out << "class      precision  recall     f1         support\n";
    for (SentimentLabel c : kAllLabels) {
        const ClassMetrics& m = r.per_class[static_cast<size_t>(c)];
        out << std::left << std::setw(11) << label_word(c) << std::right << std::setw(9)
            << m.precision << "  " << std::setw(9) << m.recall << "  " << std::setw(9) << m.f1
            << "  " << std::setw(7) << m.support << (m.degenerate ? "  (no data)" : "") << "\n";
    }
    out << "macro      " << std::setw(9) << r.macro_precision << "  " << std::setw(9)
        << r.macro_recall << "  " << std::setw(9) << r.macro_f1 << "\n";
    out << "weighted   " << std::setw(9) << r.weighted_precision << "  " << std::setw(9)
        << r.weighted_recall << "  " << std::setw(9) << r.weighted_f1 << "\n";
    out << "confusion (rows gold, cols pred; order positive/negative/neutral):\n";
    for (const auto& row : r.cm.cells) {
        out << " ";
        for (long v : row) out << " " << std::setw(6) << v;
        out << "\n";
    }
    return out.str();
}

std::string report_to_json(const MetricsReport& r) {
    json j;
    j["accuracy"] = r.accuracy;
    j["n_evaluated"] = r.n_evaluated;
    j["n_unparsed"] = r.n_unparsed;
    json per;
    for (SentimentLabel c : kAllLabels) {
        const ClassMetrics& m = r.per_class[static_cast<size_t>(c)];
        per[label_word(c)] = {{"precision", m.precision},
                              {"recall", m.recall},
                              {"f1", m.f1},
                              {"support", m.support},
                              {"degenerate", m.degenerate}};
    }
    j["per_class"] = per;
    j["macro"] = {{"precision", r.macro_precision},
                  {"recall", r.macro_recall},
                  {"f1", r.macro_f1}};
    j["weighted"] = {{"precision", r.weighted_precision},
                     {"recall", r.weighted_recall},
                     {"f1", r.weighted_f1}};
    json rows = json::array();
    for (const auto& row : r.cm.cells) rows.push_back(row);
    j["confusion"] = rows;
    return j.dump(2);
}

}  // namespace finmoe
