"""Confusion matrices, accuracy, per-class precision/recall/F1, macro-F1."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import Batch, ModelConfig, ModelParams, collate, forward
from .text import EncodedUser, LabelSet


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (|C|, |C|) int64, rows = truth, cols = prediction
    labels: LabelSet

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    per_class: dict[str, ClassScores]
    matrix: ConfusionMatrix

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class": {
                name: {
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                    "support": s.support,
                }
                for name, s in self.per_class.items()
            },
            "labels": list(self.matrix.labels.names),
            "matrix": self.matrix.counts.tolist(),
        }

    def format_text(self) -> str:
        lines = [f"accuracy  {self.accuracy:.4f}", f"macro-F1  {self.macro_f1:.4f}", ""]
        lines.append(f"{'class':<14} {'prec':>7} {'recall':>7} {'f1':>7} {'support':>8}")
        for name, s in self.per_class.items():
            lines.append(
                f"{name:<14} {s.precision:>7.4f} {s.recall:>7.4f} {s.f1:>7.4f} {s.support:>8d}"
            )
        return "\n".join(lines)


def _as_index(value, labels: LabelSet) -> int:
    if isinstance(value, str):
        return labels.index(value)
    idx = int(value)
    if not 0 <= idx < len(labels):
        raise KeyError(f"label index {idx} outside [0, {len(labels)})")
    return idx


def confusion(preds, golds, labels: LabelSet) -> ConfusionMatrix:
    """Count (truth, prediction) pairs; accepts label names or indices."""
    preds, golds = list(preds), list(golds)
    if len(preds) != len(golds):
        raise ValueError(f"got {len(preds)} predictions for {len(golds)} gold labels")
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for p, g in zip(preds, golds):
        counts[_as_index(g, labels), _as_index(p, labels)] += 1
    return ConfusionMatrix(counts, labels)


def metrics(matrix: ConfusionMatrix) -> EvalReport:
    """Scores from counts; any zero denominator scores 0 for that class."""
    counts = matrix.counts
    total = counts.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    accuracy = float(np.trace(counts) / total)
    per_class: dict[str, ClassScores] = {}
    f1s = []
    for c, name in enumerate(matrix.labels.names):
        tp = float(counts[c, c])
        col = float(counts[:, c].sum())
        row = float(counts[c, :].sum())
        precision = tp / col if col else 0.0
        recall = tp / row if row else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[name] = ClassScores(precision, recall, f1, int(row))
        f1s.append(f1)
    return EvalReport(accuracy, float(np.mean(f1s)), per_class, matrix)


def predict_batch(
    batch: Batch, params: ModelParams, cfg: ModelConfig
) -> tuple[np.ndarray, np.ndarray]:
    _, probs = forward(batch, params, cfg, mode="eval")
    return np.argmax(probs.data, axis=-1), probs.data


def predict(
    users: list[EncodedUser],
    params: ModelParams,
    cfg: ModelConfig,
    batch_size: int = 64,
) -> tuple[np.ndarray, np.ndarray]:
    """Predicted class ids and probabilities for a user list, eval mode."""
    preds, probs = [], []
    with T.no_grad():
        for lo in range(0, len(users), batch_size):
            p, q = predict_batch(collate(users[lo : lo + batch_size]), params, cfg)
            preds.append(p)
            probs.append(q)
    return np.concatenate(preds), np.concatenate(probs)


def evaluate(
    users: list[EncodedUser],
    params: ModelParams,
    cfg: ModelConfig,
    labels: LabelSet,
    batch_size: int = 64,
) -> EvalReport:
    preds, _ = predict(users, params, cfg, batch_size=batch_size)
    golds = [u.label_id for u in users]
    return metrics(confusion(preds.tolist(), golds, labels))
