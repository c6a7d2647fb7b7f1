"""Ranking metrics: ROC/AUC and precision/recall at a cutoff.

AUC is computed rank-based (probability a random positive outranks a random
negative, ties counted one half), which equals the trapezoidal area under
the ROC curve produced here.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np


class MetricError(ValueError):
    """Metric undefined for the given inputs."""


def _check_scores_labels(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    if scores.shape != labels.shape:
        raise MetricError("scores and labels must have equal length")
    if scores.size == 0:
        raise MetricError("empty input")
    if not np.isfinite(scores).all():
        raise MetricError("scores must be finite")
    return scores, labels


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned their group average."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    n = x.size
    boundary = np.flatnonzero(sx[1:] != sx[:-1]) + 1
    starts = np.concatenate([[0], boundary])
    ends = np.concatenate([boundary, [n]])
    avg = (starts + ends + 1) / 2.0  # mean of 1-based ranks starts+1 .. ends
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative."""
    scores, labels = _check_scores_labels(scores, labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes present")
    ranks = _average_ranks(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_curve(scores, labels):
    """ROC points (fpr, tpr), one per distinct score, from (0,0) to (1,1)."""
    scores, labels = _check_scores_labels(scores, labels)
    n_pos = int((labels == 1).sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC needs both classes present")
    order = np.argsort(-scores, kind="mergesort")
    ls = labels[order]
    ss = scores[order]
    cut = np.concatenate([np.flatnonzero(ss[1:] != ss[:-1]), [ss.size - 1]])
    tp = np.cumsum(ls)[cut]
    fp = cut + 1 - tp
    fpr = np.concatenate([[0.0], fp / n_neg])
    tpr = np.concatenate([[0.0], tp / n_pos])
    return fpr, tpr


def precision_recall_at_k(scores, labels, k: int):
    """Precision and recall of the top-k scored objects.

    Ties at the cutoff are broken by ascending object id (stable sort), so
    results are reproducible.
    """
    scores, labels = _check_scores_labels(scores, labels)
    if not (1 <= k <= scores.size):
        raise MetricError(f"k={k} outside [1, {scores.size}]")
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise MetricError("precision/recall need at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    tp = int(labels[order[:k]].sum())
    return tp / k, tp / n_pos


@dataclass
class EvalReport:
    task: str  # "node" or "edge"
    auc: float
    precision_at_k: float
    recall_at_k: float
    k: int
    roc_points: list  # [(fpr, tpr), ...]
    num_scored: int
    num_skipped: int
    config: dict = field(default_factory=dict)

    def validate(self) -> None:
        fpr = np.array([p[0] for p in self.roc_points])
        tpr = np.array([p[1] for p in self.roc_points])
        assert (np.diff(fpr) >= 0).all() and (np.diff(tpr) >= 0).all()
        assert fpr[0] == 0.0 and tpr[0] == 0.0 and fpr[-1] == 1.0 and tpr[-1] == 1.0
        assert abs(np.trapezoid(tpr, fpr) - self.auc) < 1e-9

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "EvalReport":
        payload = dict(payload)
        payload["roc_points"] = [tuple(p) for p in payload["roc_points"]]
        return cls(**payload)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "EvalReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def summary_line(self) -> str:
        return (
            f"task={self.task} auc={self.auc:.4f} pre@k={self.precision_at_k:.4f} "
            f"rec@k={self.recall_at_k:.4f} k={self.k}"
        )


def evaluate(scores, labels, task: str, k: int | None = None, config=None) -> EvalReport:
    """Build an EvalReport, excluding unscored objects (None/NaN/inf scores).

    Default k is the number of true anomalies among the scored objects.
    """
    raw = np.array([np.nan if s is None else float(s) for s in scores], dtype=np.float64)
    labels = np.asarray(labels).ravel().astype(np.int64)
    if raw.shape != labels.shape:
        raise MetricError("scores and labels must have equal length")
    scored = np.isfinite(raw)
    num_skipped = int((~scored).sum())
    s = raw[scored]
    y = labels[scored]
    if k is None:
        k = int((y == 1).sum())
    auc = roc_auc(s, y)
    pre, rec = precision_recall_at_k(s, y, k)
    fpr, tpr = roc_curve(s, y)
    report = EvalReport(
        task=task,
        auc=auc,
        precision_at_k=pre,
        recall_at_k=rec,
        k=int(k),
        roc_points=[(float(a), float(b)) for a, b in zip(fpr, tpr)],
        num_scored=int(scored.sum()),
        num_skipped=num_skipped,
        config=dict(config or {}),
    )
    report.validate()
    return report
