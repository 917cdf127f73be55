"""Segmentation accuracy, calibration, and OOD ranking metrics.

Conventions, pinned once for the whole artifact:

* label maps score only pixels whose ground truth is not ``IGNORE_LABEL``
* NLL is the *negative* mean log-likelihood, so it is always >= 0
* ECE uses 15 equal-width confidence bins over (0, 1]
* for ranking metrics the OOD pixels are the positives, scored by
  1 - max class probability
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .imgcore import IGNORE_LABEL

ECE_BINS = 15
PROB_FLOOR = 1e-12


class UndefinedMetricError(ValueError):
    """A metric has no value on this input (e.g. single-class ranking)."""


@dataclass(frozen=True)
class ScoredSamples:
    """Per-pixel OOD scores paired with the binary OOD ground truth."""

    scores: np.ndarray
    is_ood: np.ndarray

    def __post_init__(self) -> None:
        if self.scores.shape != self.is_ood.shape or self.scores.ndim != 1:
            raise ValueError("scores and is_ood must be equal-length 1-D arrays")

    @property
    def n_pos(self) -> int:
        return int(np.count_nonzero(self.is_ood))

    @property
    def n_neg(self) -> int:
        return int(self.is_ood.size - self.n_pos)


def confusion(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """K x K counts, rows = ground truth, cols = prediction.

    Ignore-labeled ground-truth pixels are excluded entirely.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    valid = gt != IGNORE_LABEL
    p = pred[valid].astype(np.int64)
    g = gt[valid].astype(np.int64)
    if p.size and (p.max() >= num_classes or g.max() >= num_classes):
        raise ValueError(f"label out of range for {num_classes} classes")
    flat = np.bincount(g * num_classes + p, minlength=num_classes * num_classes)
    return flat.reshape(num_classes, num_classes)


def miou(cm: np.ndarray) -> float:
    """Mean over classes of TP / (TP + FP + FN).

    Classes absent from both prediction and ground truth do not count
    toward the mean; if every class is absent the metric is undefined.
    """
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    present = union > 0
    if not np.any(present):
        raise UndefinedMetricError("no class present in prediction or ground truth")
    return float(np.mean(tp[present] / union[present]))


def nll(probs: np.ndarray, gt: np.ndarray, diagnostics: dict | None = None) -> float:
    """Negative mean log-likelihood of the ground-truth classes (>= 0).

    Probabilities are floored at 1e-12; when ``diagnostics`` is given, the
    number of floored pixels is recorded under ``"clamped_pixels"``.
    """
    if probs.shape[:2] != gt.shape:
        raise ValueError(f"shape mismatch: {probs.shape} vs {gt.shape}")
    valid = gt != IGNORE_LABEL
    if not np.any(valid):
        raise UndefinedMetricError("no scored pixels")
    p = probs[valid].astype(np.float64)
    picked = p[np.arange(p.shape[0]), gt[valid].astype(np.int64)]
    clamped = int(np.count_nonzero(picked < PROB_FLOOR))
    if diagnostics is not None:
        diagnostics["clamped_pixels"] = diagnostics.get("clamped_pixels", 0) + clamped
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def mcp_confidence(probs: np.ndarray) -> np.ndarray:
    """Per-pixel maximum class probability, float32 (H, W).

    ``1 - mcp_confidence(probs)`` is the OOD score used downstream.
    """
    return probs.max(axis=-1).astype(np.float32)


def ece(probs: np.ndarray, gt: np.ndarray, bins: int = ECE_BINS) -> float:
    """Expected calibration error over equal-width confidence bins.

    Pixels are binned by max class probability into ``bins`` bins covering
    (0, 1]; ECE is the bin-size-weighted mean |accuracy - confidence|.
    """
    if probs.shape[:2] != gt.shape:
        raise ValueError(f"shape mismatch: {probs.shape} vs {gt.shape}")
    valid = gt != IGNORE_LABEL
    if not np.any(valid):
        raise UndefinedMetricError("no scored pixels")
    p = probs[valid].astype(np.float64)
    conf = p.max(axis=-1)
    correct = (p.argmax(axis=-1) == gt[valid].astype(np.int64)).astype(np.float64)

    # bin i covers (i/bins, (i+1)/bins]
    bin_idx = np.clip(np.ceil(conf * bins).astype(np.int64) - 1, 0, bins - 1)
    total = conf.size
    value = 0.0
    for b in range(bins):
        sel = bin_idx == b
        count = int(np.count_nonzero(sel))
        if count == 0:
            continue
        gap = abs(float(correct[sel].mean()) - float(conf[sel].mean()))
        value += count / total * gap
    return float(value)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    new_group = np.r_[True, sorted_vals[1:] != sorted_vals[:-1]]
    group = np.cumsum(new_group) - 1
    counts = np.bincount(group)
    starts = np.cumsum(np.r_[0, counts[:-1]])
    avg = starts + (counts + 1) / 2.0
    ranks = np.empty(values.size, dtype=np.float64)
    ranks[order] = avg[group]
    return ranks


def _require_both_classes(s: ScoredSamples, metric: str) -> None:
    if s.n_pos == 0 or s.n_neg == 0:
        raise UndefinedMetricError(f"{metric} needs both OOD and in-distribution samples")


def roc_auc(s: ScoredSamples) -> float:
    """Probability that a random OOD sample outscores a random
    in-distribution sample, ties counted 1/2 (Mann-Whitney)."""
    _require_both_classes(s, "roc_auc")
    ranks = _average_ranks(s.scores.astype(np.float64))
    pos_rank_sum = float(ranks[s.is_ood.astype(bool)].sum())
    n_pos, n_neg = s.n_pos, s.n_neg
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def aupr(s: ScoredSamples) -> float:
    """Area under precision-recall, positives = OOD.

    Step-wise sum over descending unique thresholds: at each new
    threshold the recall gained is weighted by the precision there.
    """
    if s.n_pos == 0:
        raise UndefinedMetricError("aupr needs at least one OOD sample")
    scores = s.scores.astype(np.float64)
    labels = s.is_ood.astype(bool)
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_pos = labels[order].astype(np.float64)

    tp = np.cumsum(sorted_pos)
    predicted = np.arange(1, scores.size + 1, dtype=np.float64)
    # last index of each unique threshold in the descending order
    last = np.r_[sorted_scores[1:] != sorted_scores[:-1], True]

    precision = tp[last] / predicted[last]
    recall = tp[last] / s.n_pos
    prev_recall = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev_recall) * precision))


def fpr_at_95_tpr(s: ScoredSamples) -> float:
    """FPR at the largest threshold reaching TPR >= 0.95, no interpolation."""
    _require_both_classes(s, "fpr_at_95_tpr")
    scores = s.scores.astype(np.float64)
    labels = s.is_ood.astype(bool)
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_pos = labels[order].astype(np.float64)

    tp = np.cumsum(sorted_pos)
    fp = np.cumsum(1.0 - sorted_pos)
    last = np.r_[sorted_scores[1:] != sorted_scores[:-1], True]

    tpr = tp[last] / s.n_pos
    fpr = fp[last] / s.n_neg
    qualifying = np.nonzero(tpr >= 0.95)[0]
    # thresholds are visited in descending order, so the first qualifying
    # entry is the largest threshold
    return float(fpr[qualifying[0]])


def format_report(values: dict[str, float]) -> str:
    """Render a metric dict as the canonical single-object JSON report,
    every value rounded to 6 decimal places."""
    return json.dumps({k: round(float(v), 6) for k, v in values.items()})
