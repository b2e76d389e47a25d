"""Multi-task implicit sentiment analysis toolkit (C++ core)."""

from ._core import (
    Dataset,
    Error,
    Instance,
    accuracy,
    augment_with_mock,
    clip_confidence,
    descend_sigma,
    evaluate_checkpoint,
    generate_synthetic,
    load_jsonl,
    macro_f1,
    markov_confidence,
    save_jsonl,
    stationary_sigma,
    train_and_evaluate,
)

__all__ = [
    "Dataset",
    "Error",
    "Instance",
    "accuracy",
    "augment_with_mock",
    "clip_confidence",
    "descend_sigma",
    "evaluate_checkpoint",
    "generate_synthetic",
    "load_jsonl",
    "macro_f1",
    "markov_confidence",
    "save_jsonl",
    "stationary_sigma",
    "train_and_evaluate",
]
