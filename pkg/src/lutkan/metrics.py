"""Classification metrics, degradation deltas, and OOB breakdowns.

Thresholded metrics follow the usual confusion-count formulas with the
zero conventions (precision/recall/F1 are 0 when their denominators
vanish). ROC-AUC uses the Mann-Whitney rank statistic with ties counted
as 1/2; PR-AUC is average precision (step-wise integral), not trapezoidal
interpolation, which is known to be biased for PR curves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from typing import Optional, Union

import numpy as np

from .compiler import CompiledModel
from .errors import DegenerateMetricError, InputDomainError, InputShapeError
from .model import ModelSpec, forward_reference, segment_boundaries
from .runtime import forward_lut, predict


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class EvalReport:
    """Full quality report; delta_f1_vs_baseline is None when no baseline given."""

    accuracy: float
    precision: float
    recall: float
    f1: float
    roc_auc: float
    pr_auc: float
    delta_f1_vs_baseline: Optional[float]
    in_range_f1: float
    n_oob_samples: int
    n_samples: int
    threshold: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_text(self) -> str:
        rows = [
            ("accuracy", f"{self.accuracy:.6f}"),
            ("precision", f"{self.precision:.6f}"),
            ("recall", f"{self.recall:.6f}"),
            ("f1", f"{self.f1:.6f}"),
            ("roc_auc", f"{self.roc_auc:.6f}"),
            ("pr_auc", f"{self.pr_auc:.6f}"),
            ("delta_f1_vs_baseline",
             "n/a" if self.delta_f1_vs_baseline is None else f"{self.delta_f1_vs_baseline:+.6f}"),
            ("in_range_f1", f"{self.in_range_f1:.6f}"),
            ("n_oob_samples", str(self.n_oob_samples)),
            ("n_samples", str(self.n_samples)),
            ("threshold", f"{self.threshold:.4f}"),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value:>12}" for name, value in rows)


def _check_binary(arr: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim != 1:
        raise InputShapeError(f"{name} must be 1-D")
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise InputDomainError(f"{name} must contain only 0/1 values")
    return arr.astype(np.int64)


def confusion(labels, predictions) -> ConfusionCounts:
    y = _check_binary(labels, "labels")
    p = _check_binary(predictions, "predictions")
    if y.shape != p.shape:
        raise InputShapeError(
            f"labels and predictions differ in length: {y.shape[0]} vs {p.shape[0]}"
        )
    tp = int(np.sum((y == 1) & (p == 1)))
    fp = int(np.sum((y == 0) & (p == 1)))
    tn = int(np.sum((y == 0) & (p == 0)))
    fn = int(np.sum((y == 1) & (p == 0)))
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def thresholded_metrics(counts: ConfusionCounts) -> tuple[float, float, float, float]:
    """(accuracy, precision, recall, f1) with zero-denominator conventions."""
    n = counts.total
    if n == 0:
        raise InputShapeError("cannot compute metrics over zero samples")
    accuracy = (counts.tp + counts.tn) / n
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)) if precision + recall else 0.0
    return accuracy, precision, recall, f1


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their group's average rank."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.shape[0], dtype=np.float64)
    sorted_scores = scores[order]
    boundaries = np.flatnonzero(np.diff(sorted_scores) != 0) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [scores.shape[0]]))
    for lo, hi in zip(starts, ends):
        ranks[order[lo:hi]] = 0.5 * (lo + 1 + hi)
    return ranks


def roc_auc(labels, scores) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 * P(tie)."""
    y = _check_binary(labels, "labels")
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise InputShapeError("labels and scores differ in length")
    n_pos = int(np.sum(y == 1))
    n_neg = y.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateMetricError("roc_auc needs both classes present")
    ranks = _average_ranks(s)
    rank_sum = float(np.sum(ranks[y == 1]))
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def pr_auc(labels, scores) -> float:
    """Average precision: sum over recall increments of the precision there."""
    y = _check_binary(labels, "labels")
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise InputShapeError("labels and scores differ in length")
    n_pos = int(np.sum(y == 1))
    if n_pos == 0 or n_pos == y.shape[0]:
        raise DegenerateMetricError("pr_auc needs both classes present")
    order = np.argsort(-s, kind="mergesort")
    y_sorted = y[order]
    s_sorted = s[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(1 - y_sorted)
    # evaluate only at the last index of each tied-score group
    last_of_group = np.concatenate((np.diff(s_sorted) != 0, [True]))
    tp = tp[last_of_group].astype(np.float64)
    fp = fp[last_of_group].astype(np.float64)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev_recall) * precision))


def _score_dataset(model: Union[ModelSpec, CompiledModel], features: np.ndarray) -> np.ndarray:
    if isinstance(model, CompiledModel):
        probs, _ = forward_lut(model, features)
        return probs
    return forward_reference(model, features)


def _input_domain(model: Union[ModelSpec, CompiledModel]) -> tuple[float, float, bool]:
    """(domain_min, domain_max, right_closed) of the first layer."""
    if isinstance(model, CompiledModel):
        layer = model.layers[0]
        return layer.domain_min, layer.domain_max, model.config.boundary_mode == "closed"
    grid = model.layers[0].grid
    return grid.domain_min, grid.domain_max, True


def oob_sample_mask(model: Union[ModelSpec, CompiledModel], features: np.ndarray) -> np.ndarray:
    """True for rows with at least one feature outside the input domain."""
    lo, hi, right_closed = _input_domain(model)
    bounds = segment_boundaries(lo, hi, 1)
    if right_closed:
        in_range = (features >= bounds[0]) & (features <= bounds[1])
    else:
        in_range = (features >= bounds[0]) & (features < bounds[1])
    return ~np.all(in_range, axis=1)


def evaluate(model: Union[ModelSpec, CompiledModel], features, labels,
             threshold: float = 0.5,
             baseline: Optional[EvalReport] = None) -> EvalReport:
    """Score a labeled dataset and report quality plus the OOB breakdown."""
    features = np.asarray(features, dtype=np.float64)
    y = _check_binary(labels, "labels")
    if features.shape[0] != y.shape[0]:
        raise InputShapeError("features and labels differ in length")
    scores = _score_dataset(model, features)
    preds = predict(scores, threshold)
    counts = confusion(y, preds)
    accuracy, precision, recall, f1 = thresholded_metrics(counts)
    auc = roc_auc(y, scores)
    ap = pr_auc(y, scores)
    oob_mask = oob_sample_mask(model, features)
    n_oob = int(np.sum(oob_mask))
    if n_oob < y.shape[0]:
        in_counts = confusion(y[~oob_mask], preds[~oob_mask])
        in_range_f1 = thresholded_metrics(in_counts)[3]
    else:
        in_range_f1 = 0.0
    delta = None if baseline is None else f1 - baseline.f1
    return EvalReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        roc_auc=auc,
        pr_auc=ap,
        delta_f1_vs_baseline=delta,
        in_range_f1=in_range_f1,
        n_oob_samples=n_oob,
        n_samples=int(y.shape[0]),
        threshold=threshold,
    )
