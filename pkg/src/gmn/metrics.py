"""Offline metrics over labelled (user, video, label) samples."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative, ties counting half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs at least one positive and one negative sample")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class ThresholdMetrics:
    precision: float
    recall: float
    loss: float
    no_positive_predictions: bool = False


def threshold_metrics(scores, labels, tau: float = 0.5) -> ThresholdMetrics:
    """Precision/recall of ``sigmoid(score) > tau`` and mean binary cross-entropy, all x100."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if labels.all() or not labels.any():
        raise MetricError("threshold metrics need both classes")
    pred = expit(scores) > tau
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    flagged = tp + fp == 0
    precision = 0.0 if flagged else 100.0 * tp / (tp + fp)
    recall = 100.0 * tp / (tp + fn)
    # -log sigmoid(s) for positives, -log sigmoid(-s) for negatives
    bce = -np.where(labels, log_expit(scores), log_expit(-scores))
    return ThresholdMetrics(precision, recall, 100.0 * float(bce.mean()), flagged)


def hit_rate_at_1(users, scores, labels) -> float:
    """Share of users whose highest-scored sample is a positive (x100)."""
    users = np.asarray(users)
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    order = np.lexsort((-scores, users))
    first = np.ones(len(order), dtype=bool)
    first[1:] = users[order][1:] != users[order][:-1]
    return 100.0 * float(labels[order][first].mean())


@dataclass
class MetricsReport:
    auc: float
    precision: float
    recall: float
    loss: float
    hit_rate: float = 0.0
    flags: list[str] = field(default_factory=list)

    @classmethod
    def from_scores(cls, users, scores, labels) -> "MetricsReport":
        t = threshold_metrics(scores, labels)
        flags = ["no_positive_predictions"] if t.no_positive_predictions else []
        return cls(100.0 * auc(scores, labels), t.precision, t.recall, t.loss, hit_rate_at_1(users, scores, labels), flags)

    HEADER = ("auc", "precision", "recall", "loss", "hit@1")

    def row(self) -> list[str]:
        return [f"{v:.2f}" for v in (self.auc, self.precision, self.recall, self.loss, self.hit_rate)]
