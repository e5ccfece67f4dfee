"""End-to-end smoke tests for the python surface of the compiled core."""

import math

import finmoe


def test_tokenizer_round_trip():
    ids = finmoe.tokenize("margins widened")
    assert ids[0] == finmoe.BOS
    assert ids[-1] == finmoe.EOS
    assert finmoe.detokenize(ids) == "margins widened"
    assert finmoe.VOCAB_SIZE == 259


def test_dense_kernels():
    assert finmoe.matmul([[0.5, -1.0]], [[1.0, 2.0], [3.0, 4.0]]) == [[-2.5, -3.0]]
    row = finmoe.softmax([[0.0, 0.0]])[0]
    assert math.isclose(row[0], 0.5, abs_tol=1e-12)
    assert math.isclose(finmoe.silu([[1.0]])[0][0], 0.7310585786300049, abs_tol=1e-12)
    normed = finmoe.rmsnorm([[3.0, 4.0]])[0]
    assert math.isclose(normed[0], 0.848528, abs_tol=1e-4)


def test_routing_invariants():
    (decision,) = finmoe.route([[0.1, 0.9, 0.3, 0.2]], top_k=2)
    assert decision["selected"] == [1, 2]
    assert math.isclose(sum(decision["weights"]), 1.0, abs_tol=1e-12)
    assert math.isclose(sum(decision["probs"]), 1.0, abs_tol=1e-12)


def test_balance_loss_collapse_vs_spread():
    collapsed = finmoe.balance_loss([[9.0, 8.0, -9.0, -9.0]] * 10, top_k=2)
    assert math.isclose(sum(collapsed["f"]), 2.0, abs_tol=1e-12)
    assert math.isclose(sum(collapsed["p"]), 1.0, abs_tol=1e-12)
    uniform = finmoe.balance_loss([[0.0, 0.0, 0.0, 0.0]] * 10, top_k=2)
    assert math.isclose(uniform["loss"], 0.125, abs_tol=1e-12)
    assert collapsed["loss"] > uniform["loss"]


def test_templates_and_rendering():
    assert len(finmoe.questions()) == 15
    assert len(finmoe.prefixes()) == 10
    example = finmoe.render_example("Shares fell sharply.", "negative", q_idx=2, p_idx=3)
    assert example["prompt"].startswith(finmoe.questions()[2])
    assert example["prompt"].endswith(finmoe.prefixes()[3])
    assert example["full"] == example["prompt"] + " negative"
    assert example["span_end"] - example["span_begin"] == len(" negative")


def test_synth_corpus_balanced():
    corpus = finmoe.synth_corpus(9, seed=4)
    labels = [item["label"] for item in corpus]
    assert labels.count("positive") == labels.count("negative") == labels.count("neutral") == 3


def test_model_build_score_save_load(tmp_path):
    config = finmoe.ModelConfig()
    config.model_dim = 8
    config.num_heads = 2
    config.num_layers = 2
    config.max_seq_len = 192
    config.moe.expert_hidden = 16
    config.init_seed = 7
    model = finmoe.Model.build(config)
    assert model.config.model_dim == 8

    prompt = finmoe.render_example("Profits doubled this quarter.", "positive")["prompt"]
    score = model.score(prompt)
    assert score["label"] in {"positive", "negative", "neutral"}
    assert set(score["logprobs"]) == {"positive", "negative", "neutral"}

    path = str(tmp_path / "model.ckpt")
    model.save(path)
    assert finmoe.Model.load(path).score(prompt) == score


def test_parse_label_and_aggregator_prompt():
    assert finmoe.parse_label("Mostly NEGATIVE, but ending neutral.") == "neutral"
    assert finmoe.parse_label("unneutral") is None
    prompt = finmoe.aggregator_prompt(
        "Up or down?", [("a", "I say positive."), ("b", None)]
    )
    assert "Agent 1 (a) says:" in prompt
    assert "Agent 2 (b) failed" in prompt
    assert prompt.endswith("Answer with exactly one word: positive, negative, or neutral.\n")


def test_metrics_oracle():
    report = finmoe.metrics(
        ["positive", "positive", "negative", "neutral"],
        ["positive", "negative", "negative", "neutral"],
    )
    assert math.isclose(report["accuracy"], 0.75, abs_tol=1e-12)
    assert math.isclose(report["macro"]["f1"], 0.7778, abs_tol=1e-4)
    assert report["n_unparsed"] == 0


def test_cli_entry_point():
    code, out, err = finmoe.run_cli(["gradcheck", "--seed", "2"])
    assert code == 0, err
    assert "max relative gradient error" in out
