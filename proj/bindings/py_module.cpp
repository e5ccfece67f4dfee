// SPDX-License-Identifier: Apache-2.0
//
// Python bindings for the main operations: tokenizer, dense kernels,
// expert routing, template rendering, scoring, metrics, agent-prompt
// assembly and the full command-line entry point.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "finmoe/checkpoint.hpp"
#include "finmoe/cli.hpp"
#include "finmoe/labels.hpp"
#include "finmoe/matrix.hpp"
#include "finmoe/metrics.hpp"
#include "finmoe/moa.hpp"
#include "finmoe/model.hpp"
#include "finmoe/moe.hpp"
#include "finmoe/ops.hpp"
#include "finmoe/sft.hpp"
#include "finmoe/templates.hpp"
#include "finmoe/tokenizer.hpp"

namespace py = pybind11;
using namespace finmoe;

namespace {

Matrix to_matrix(const std::vector<std::vector<double>>& rows, const char* what) {
    if (rows.empty()) throw std::invalid_argument(std::string(what) + ": empty matrix");
    Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
    for (size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size())
            throw std::invalid_argument(std::string(what) + ": ragged rows");
        for (size_t c = 0; c < rows[r].size(); ++c)
            m.at(static_cast<int>(r), static_cast<int>(c)) = rows[r][c];
    }
    return m;
}

std::vector<std::vector<double>> to_rows(const Matrix& m) {
    std::vector<std::vector<double>> rows(static_cast<size_t>(m.rows()));
    for (int r = 0; r < m.rows(); ++r)
        rows[static_cast<size_t>(r)] =
            std::vector<double>(m.row_ptr(r), m.row_ptr(r) + m.cols());
    return rows;
}

SentimentLabel label_or_throw(const std::string& word) {
    const std::optional<SentimentLabel> l = label_from_word(word);
    if (!l) throw std::invalid_argument("unknown label word: " + word);
    return *l;
}

py::dict example_dict(const SftExample& ex) {
    py::dict d;
    d["text"] = ex.source_text;
    d["label"] = label_word(ex.label);
    d["q_idx"] = ex.q_idx;
    d["p_idx"] = ex.p_idx;
    d["prompt"] = ex.prompt;
    d["full"] = ex.full;
    d["span_begin"] = ex.span_begin;
    d["span_end"] = ex.span_end;
    return d;
}

py::dict decision_dict(const RoutingDecision& dec) {
    py::dict d;
    d["probs"] = dec.probs;
    d["selected"] = dec.selected;
    d["weights"] = dec.weights;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Sparse-expert sentiment model: core operations";

    // --- tokenizer -------------------------------------------------------
    m.def("tokenize", &byte_tokenize, py::arg("text"),
          "Byte-level token ids framed with BOS and EOS.");
    m.def("detokenize", &byte_detokenize, py::arg("ids"),
          "Text from token ids; framing and padding tokens are dropped.");
    m.attr("PAD") = kPadToken;
    m.attr("BOS") = kBosToken;
    m.attr("EOS") = kEosToken;
    m.attr("VOCAB_SIZE") = kVocabSize;

    // --- dense kernels ---------------------------------------------------
    m.def(
        "matmul",
        [](const std::vector<std::vector<double>>& a,
           const std::vector<std::vector<double>>& b) {
            return to_rows(matmul(to_matrix(a, "matmul"), to_matrix(b, "matmul")));
        },
        py::arg("a"), py::arg("b"));
    m.def(
        "softmax",
        [](const std::vector<std::vector<double>>& rows) {
            return to_rows(softmax_rows(to_matrix(rows, "softmax")));
        },
        py::arg("rows"), "Row-wise softmax.");
    m.def(
        "silu",
        [](const std::vector<std::vector<double>>& rows) {
            return to_rows(silu(to_matrix(rows, "silu")));
        },
        py::arg("rows"), "Elementwise x * sigmoid(x).");
    m.def(
        "rmsnorm",
        [](const std::vector<std::vector<double>>& rows, std::vector<double> gain) {
            const Matrix x = to_matrix(rows, "rmsnorm");
            Matrix g(1, x.cols());
            if (gain.empty()) gain.assign(static_cast<size_t>(x.cols()), 1.0);
            if (static_cast<int>(gain.size()) != x.cols())
                throw std::invalid_argument("rmsnorm: gain length must match columns");
            for (int c = 0; c < x.cols(); ++c) g.at(0, c) = gain[static_cast<size_t>(c)];
            return to_rows(rmsnorm(x, g));
        },
        py::arg("rows"), py::arg("gain") = std::vector<double>{});

    // --- expert routing --------------------------------------------------
    m.def(
        "route",
        [](const std::vector<std::vector<double>>& gate_logits, int top_k) {
            py::list out;
            for (const RoutingDecision& dec :
                 route(to_matrix(gate_logits, "route"), top_k))
                out.append(decision_dict(dec));
            return out;
        },
        py::arg("gate_logits"), py::arg("top_k"),
        "Top-k routing decisions, one per row of gate logits.");
    m.def(
        "balance_loss",
        [](const std::vector<std::vector<double>>& gate_logits, int top_k) {
            const Matrix logits = to_matrix(gate_logits, "balance_loss");
            const LoadBalanceStats stats =
                load_balance_loss(route(logits, top_k), logits.cols(), top_k);
            py::dict d;
            d["f"] = stats.f;
            d["p"] = stats.p;
            d["loss"] = stats.loss;
            return d;
        },
        py::arg("gate_logits"), py::arg("top_k"),
        "Selection fractions, mean routing probabilities and the balance loss.");

    // --- templates and data ----------------------------------------------
    m.def("questions", [] { return sft_questions(); });
    m.def("prefixes", [] { return sft_prefixes(); });
    m.def(
        "render_example",
        [](const std::string& text, const std::string& label, int q_idx, int p_idx) {
            return example_dict(render_example(text, label_or_throw(label), q_idx, p_idx));
        },
        py::arg("text"), py::arg("label"), py::arg("q_idx") = 0, py::arg("p_idx") = 0);
    m.def(
        "synth_corpus",
        [](int n, uint64_t seed) {
            py::list out;
            for (const CorpusItem& item : synth_corpus(n, seed)) {
                py::dict d;
                d["text"] = item.text;
                d["label"] = label_word(item.label);
                out.append(d);
            }
            return out;
        },
        py::arg("n"), py::arg("seed") = 1);

    // --- model -----------------------------------------------------------
    py::class_<MoEConfig>(m, "MoEConfig")
        .def(py::init<>())
        .def_readwrite("num_experts", &MoEConfig::num_experts)
        .def_readwrite("top_k", &MoEConfig::top_k)
        .def_readwrite("expert_hidden", &MoEConfig::expert_hidden)
        .def_readwrite("alpha", &MoEConfig::alpha);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("model_dim", &ModelConfig::model_dim)
        .def_readwrite("num_layers", &ModelConfig::num_layers)
        .def_readwrite("num_heads", &ModelConfig::num_heads)
        .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
        .def_readwrite("init_seed", &ModelConfig::init_seed)
        .def_readwrite("moe", &ModelConfig::moe);

    py::class_<Model>(m, "Model")
        .def_static("build", &build_model, py::arg("config"))
        .def_static("load", &load_checkpoint, py::arg("path"))
        .def("save",
             [](const Model& model, const std::string& path) { save_checkpoint(model, path); },
             py::arg("path"))
        .def_property_readonly("config", [](const Model& model) { return model.config; })
        .def(
            "score",
            [](const Model& model, const std::string& prompt) {
                const LabelScore s = score_labels(model, prompt);
                py::dict d;
                d["label"] = label_word(s.label);
                py::dict lp;
                for (SentimentLabel l : kAllLabels)
                    lp[py::str(label_word(l))] = s.logprobs[static_cast<size_t>(l)];
                d["logprobs"] = lp;
                return d;
            },
            py::arg("prompt"),
            "Label scores for the three answer continuations after the prompt.");

    // --- agents ------------------------------------------------------------
    m.def("parse_label",
          [](const std::string& text) -> std::optional<std::string> {
              const std::optional<SentimentLabel> l = parse_label(text);
              if (!l) return std::nullopt;
              return label_word(*l);
          },
          py::arg("text"),
          "Whole-word label scan, last occurrence wins; None when unparsed.");
    m.def(
        "aggregator_prompt",
        [](const std::string& original,
           const std::vector<std::pair<std::string, std::optional<std::string>>>& replies) {
            std::vector<AgentResponse> responses;
            for (const auto& [name, text] : replies) {
                AgentResponse r;
                r.agent_name = name;
                if (text) {
                    r.text = *text;
                    r.status = AgentStatus::ok;
                } else {
                    r.status = AgentStatus::error;
                }
                responses.push_back(std::move(r));
            }
            return build_aggregator_prompt(original, responses);
        },
        py::arg("original"), py::arg("replies"),
        "Aggregator prompt from (agent_name, reply_or_None) pairs.");

    // --- metrics -----------------------------------------------------------
    m.def(
        "metrics",
        [](const std::vector<std::string>& golds,
           const std::vector<std::optional<std::string>>& preds) {
            std::vector<SentimentLabel> g;
            std::vector<std::optional<SentimentLabel>> p;
            for (const std::string& w : golds) g.push_back(label_or_throw(w));
            for (const std::optional<std::string>& w : preds)
                p.push_back(w ? std::optional<SentimentLabel>(label_or_throw(*w))
                              : std::nullopt);
            return report_to_json(metrics(confusion(g, p)));
        },
        py::arg("golds"), py::arg("preds"),
        "Classification report as a JSON string; None predictions count as unparsed.");

    // --- command line ------------------------------------------------------
    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            const int code = run_command(args, out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run a CLI subcommand; returns (exit_code, stdout, stderr).");
}
