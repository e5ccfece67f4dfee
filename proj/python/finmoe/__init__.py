"""Desk-scale sparse-expert sentiment model with a multi-agent wrapper.

The heavy lifting lives in the compiled ``_core`` extension; this package
re-exports it and keeps the surface pythonic (dict reports, keyword args).
"""

import json as _json

from ._core import (
    BOS,
    EOS,
    PAD,
    VOCAB_SIZE,
    Model,
    ModelConfig,
    MoEConfig,
    aggregator_prompt,
    balance_loss,
    detokenize,
    matmul,
    parse_label,
    prefixes,
    questions,
    render_example,
    rmsnorm,
    route,
    run_cli,
    silu,
    softmax,
    synth_corpus,
    tokenize,
)
from ._core import metrics as _metrics_json

__version__ = "0.1.0"

__all__ = [
    "BOS",
    "EOS",
    "PAD",
    "VOCAB_SIZE",
    "Model",
    "ModelConfig",
    "MoEConfig",
    "aggregator_prompt",
    "balance_loss",
    "detokenize",
    "matmul",
    "metrics",
    "parse_label",
    "prefixes",
    "questions",
    "render_example",
    "rmsnorm",
    "route",
    "run_cli",
    "silu",
    "softmax",
    "synth_corpus",
    "tokenize",
]


def metrics(golds, preds):
    """Classification report as a dict.

    ``golds`` are label words; ``preds`` may contain ``None`` for
    predictions that could not be parsed (excluded from the confusion
    matrix but counted under ``n_unparsed``).
    """
    return _json.loads(_metrics_json(list(golds), list(preds)))
