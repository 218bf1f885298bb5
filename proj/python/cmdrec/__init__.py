"""Next-command recommendation for BIM event logs."""

import json

from ._cmdrec import (
    Error,
    Recommender,
    bayes_recall as _bayes_recall,
    generate as _generate,
    ndcg_at_k,
    preprocess,
    preset_names,
    rank_of,
    recall_at_k,
)

__all__ = [
    "Error",
    "Recommender",
    "bayes_recall",
    "generate",
    "ndcg_at_k",
    "preprocess",
    "preset_names",
    "rank_of",
    "recall_at_k",
]


def generate(spec=None):
    """Return (log_texts, clean_tsv) for a generator spec given as a dict."""
    return _generate(json.dumps(spec or {}))


def bayes_recall(spec=None, k=5):
    return _bayes_recall(json.dumps(spec or {}), k)
