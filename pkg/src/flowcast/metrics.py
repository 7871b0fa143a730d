"""Evaluation metrics: feature errors, macro structural metrics, the
compound score, and degree-rank tables."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, ShapeMismatchError


def mae(pred: np.ndarray, target: np.ndarray) -> float:
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"mae shapes differ: {pred.shape} vs {target.shape}")
    return float(np.abs(pred - target).mean())


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    return float(((pred - target) ** 2).mean())


def macro_accuracy(preds: np.ndarray, targets: np.ndarray, n_classes: int) -> float:
    """Per-class recall averaged over the classes present in targets."""
    preds = np.asarray(preds, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    values = []
    for c in range(n_classes):
        support = targets == c
        if not support.any():
            continue
        values.append(float((preds[support] == c).mean()))
    return float(np.mean(values)) if values else 0.0


def macro_precision(preds: np.ndarray, targets: np.ndarray, n_classes: int) -> float:
    """Per-class precision averaged over the classes present in targets.

    A class that is never predicted contributes precision 0.
    """
    preds = np.asarray(preds, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    values = []
    for c in range(n_classes):
        if not (targets == c).any():
            continue
        predicted = preds == c
        if predicted.any():
            values.append(float((targets[predicted] == c).mean()))
        else:
            values.append(0.0)
    return float(np.mean(values)) if values else 0.0


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    ranks[order] = np.arange(1, len(scores) + 1)
    sorted_scores = scores[order]
    boundaries = np.nonzero(np.diff(sorted_scores))[0] + 1
    starts = np.concatenate([[0], boundaries])
    stops = np.concatenate([boundaries, [len(scores)]])
    for a, b in zip(starts, stops):
        if b - a > 1:
            ranks[order[a:b]] = (a + 1 + b) / 2.0
    return ranks


def macro_auroc(score_rows: np.ndarray, targets: np.ndarray) -> float:
    """One-vs-rest AUROC per class via the rank formulation, averaged
    over classes that have both positives and negatives."""
    scores = np.asarray(score_rows, dtype=float)
    targets = np.asarray(targets, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] != targets.shape[0]:
        raise ShapeMismatchError("score rows and targets disagree")
    values = []
    for c in range(scores.shape[1]):
        pos = targets == c
        n_pos = int(pos.sum())
        n_neg = len(targets) - n_pos
        if n_pos == 0 or n_neg == 0:
            continue
        ranks = _average_ranks(scores[:, c])
        u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
        values.append(float(u / (n_pos * n_neg)))
    if not values:
        raise DegenerateError("no class has both positive and negative samples")
    return float(np.mean(values))


def compound_score(acc: float, auroc: float, mae_value: float) -> float:
    """0.25*Acc + 0.25*AUROC + 0.5*(1 - MAE), with MAE clipped to [0,1]."""
    clipped = min(max(mae_value, 0.0), 1.0)
    return 0.25 * acc + 0.25 * auroc + 0.5 * (1.0 - clipped)


@dataclass
class DegreeTable:
    """Per-node attachment counts, ranked by actual degree descending
    (ties broken by node id)."""

    node_ids: np.ndarray
    actual: np.ndarray
    predicted: np.ndarray

    def top_predicted(self, k: int) -> list[int]:
        order = np.lexsort((self.node_ids, -self.predicted))
        return [int(self.node_ids[i]) for i in order[:k]]

    def rows(self):
        for rank, (node, a, p) in enumerate(zip(self.node_ids, self.actual, self.predicted), start=1):
            yield rank, int(node), int(a), int(p)


def degree_table(actual_counts: np.ndarray, predicted_counts: np.ndarray) -> DegreeTable:
    node_ids = np.arange(len(actual_counts))
    order = np.lexsort((node_ids, -actual_counts))
    return DegreeTable(node_ids[order], actual_counts[order], predicted_counts[order])


def attachment_degrees(labels: np.ndarray, n_nodes: int) -> np.ndarray:
    return np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_nodes)


def degree_rank(actual: dict[str, np.ndarray], predicted: dict[str, np.ndarray],
                n_ip: int, n_port: int = 8) -> tuple[DegreeTable, DegreeTable]:
    """Degree-rank tables for IP and Port nodes.

    A node's degree counts attachments from both the source and the
    destination relation of its type; for a single window each relation
    contributes exactly one attachment per connection.
    """
    ip_actual = attachment_degrees(actual["src_ip"], n_ip) + attachment_degrees(actual["dst_ip"], n_ip)
    ip_pred = attachment_degrees(predicted["src_ip"], n_ip) + attachment_degrees(predicted["dst_ip"], n_ip)
    port_actual = attachment_degrees(actual["src_port"], n_port) + attachment_degrees(actual["dst_port"], n_port)
    port_pred = attachment_degrees(predicted["src_port"], n_port) + attachment_degrees(predicted["dst_port"], n_port)
    return degree_table(ip_actual, ip_pred), degree_table(port_actual, port_pred)


@dataclass
class MetricsReport:
    """Evaluation summary for one model on one split."""

    mae: float
    mse: float
    macro_accuracy: float
    macro_auroc: float
    macro_precision: float
    compound_score: float
    per_relation: dict[str, dict[str, float]] = field(default_factory=dict)
    ip_degree: DegreeTable | None = None
    port_degree: DegreeTable | None = None

    def as_flat_dict(self) -> dict[str, float]:
        flat = {
            "mae": self.mae,
            "mse": self.mse,
            "macro_accuracy": self.macro_accuracy,
            "macro_auroc": self.macro_auroc,
            "macro_precision": self.macro_precision,
            "compound_score": self.compound_score,
        }
        for rel, metrics in self.per_relation.items():
            for key, value in metrics.items():
                flat[f"{rel}.{key}"] = value
        return flat
