"""Gaussian parameter watermarks for toy language models."""

import json

from ._core import (
    GaussmarkError,
    Key,
    Model,
    corrupt,
    generate,
    kgw_generate,
    keygen,
    p_value,
    rejection_threshold,
    sample,
)
from . import _core

__all__ = [
    "GaussmarkError",
    "Key",
    "Model",
    "corrupt",
    "detect",
    "generate",
    "key_from_json",
    "keygen",
    "kgw_detect",
    "kgw_generate",
    "make_model",
    "p_value",
    "rejection_threshold",
    "run_experiment",
    "sample",
    "verify_theory",
]


def make_model(spec):
    return _core.make_model(json.dumps(spec))


def key_from_json(text, model=None):
    if not isinstance(text, str):
        text = json.dumps(text)
    return _core.key_from_json(text, model)


def detect(model, key, prompt, response, alpha=0.05):
    return json.loads(_core.detect_json(model, key, list(prompt), list(response), alpha))


def kgw_detect(prompt, response, vocab, gamma=0.25, context_width=1, hash_seed=0):
    return json.loads(_core.kgw_detect_json(list(prompt), list(response), vocab, gamma, context_width, hash_seed))


def run_experiment(config):
    """Returns (csv_text, summary_dict)."""
    csv, summary = _core.run_experiment_json(json.dumps(config))
    return csv, json.loads(summary)


def verify_theory(check="all", scale=1.0, seed=0):
    return json.loads(_core.verify_theory_json(check, scale, seed))
