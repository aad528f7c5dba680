"""Voxel-wise anomaly detection metrics: DICE variants, AP, AUROC, FPR@recall."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    """Metric undefined for the given inputs."""


def _as_binary(mask) -> np.ndarray:
    mask = np.asarray(mask).ravel()
    out = mask.astype(bool)
    if np.any((mask != 0) & (mask != 1)):
        raise MetricError("mask values must be 0 or 1")
    return out


def dice(pred, gt) -> float:
    """2|P&G| / (|P|+|G|); both empty -> 1.0 by convention."""
    pred = _as_binary(pred)
    gt = _as_binary(gt)
    if pred.size != gt.size:
        raise MetricError(f"size mismatch {pred.size} vs {gt.size}")
    denom = pred.sum() + gt.sum()
    if denom == 0:
        return 1.0
    return 2.0 * np.logical_and(pred, gt).sum() / denom


def _pool(scores_list, masks_list):
    scores = np.concatenate([np.asarray(s, dtype=np.float64).ravel() for s in scores_list])
    labels = np.concatenate([_as_binary(m) for m in masks_list])
    if scores.size != labels.size:
        raise MetricError("pooled scores and masks differ in length")
    return scores, labels


def _threshold_sweep(scores: np.ndarray, labels: np.ndarray):
    """Cumulative TP / predicted-positive counts at each distinct score threshold.

    Returns (descending distinct thresholds, tp counts, pred-positive counts)
    for the inclusive rule `predict positive where score >= threshold`.
    """
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    cum_tp = np.cumsum(y)
    boundaries = np.nonzero(np.diff(s))[0]
    ends = np.concatenate([boundaries, [s.size - 1]])
    return s[ends], cum_tp[ends], ends + 1


def best_dice(scores_list, masks_list):
    """Max DICE over all distinct pooled-score thresholds; ties -> lowest threshold."""
    scores, labels = _pool(scores_list, masks_list)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise MetricError("best_dice undefined: no positive ground-truth voxels")
    thresholds, tps, preds = _threshold_sweep(scores, labels)
    dices = 2.0 * tps / (preds + n_pos)
    best = None
    for thr, d in zip(thresholds, dices):
        if best is None or d > best[0] or (d == best[0] and thr < best[1]):
            best = (float(d), float(thr))
    return best


def dice_at_threshold(scores_list, masks_list, threshold: float):
    """Per-subject DICE with `score >= threshold`; returns (list, mean, population std)."""
    per_subject = [
        dice(np.asarray(s, dtype=np.float64).ravel() >= threshold, m)
        for s, m in zip(scores_list, masks_list)
    ]
    arr = np.array(per_subject)
    return per_subject, float(arr.mean()), float(arr.std())


def auroc(scores, labels) -> float:
    """P(random positive outscores random negative), ties counted half."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = _as_binary(labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("auroc undefined: both classes must be present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size)
    s = scores[order]
    # average ranks over tie groups (1-based)
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s[j + 1] == s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Sum of (recall step) * precision over descending thresholds, ties grouped."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = _as_binary(labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise MetricError("average precision undefined: no positives")
    _, tps, preds = _threshold_sweep(scores, labels)
    recalls = tps / n_pos
    precisions = tps / preds
    prev_recall = np.concatenate([[0.0], recalls[:-1]])
    return float(np.sum((recalls - prev_recall) * precisions))


def fpr_at_recall(scores, labels, recall: float = 0.95) -> float:
    """Lowest false-positive rate among thresholds reaching the target recall."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = _as_binary(labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("fpr_at_recall undefined: both classes must be present")
    _, tps, preds = _threshold_sweep(scores, labels)
    tprs = tps / n_pos
    fprs = (preds - tps) / n_neg
    achieving = fprs[tprs >= recall]
    if achieving.size == 0:
        raise MetricError(f"no threshold reaches recall {recall}")
    return float(achieving.min())


@dataclass
class MetricsReport:
    best_dice: float
    best_dice_threshold: float
    dice_mean: float
    dice_std: float
    per_subject_dice: list[float]
    ap: float
    auroc: float
    fpr_at_95r: float
    threshold: float
    n_voxels: int
    n_positive: int

    def format(self) -> str:
        lines = [
            f"best_dice = {self.best_dice:.12g}",
            f"best_dice_threshold = {self.best_dice_threshold:.12g}",
            f"dice_mean = {self.dice_mean:.12g}",
            f"dice_std = {self.dice_std:.12g}",
            f"ap = {self.ap:.12g}",
            f"auroc = {self.auroc:.12g}",
            f"fpr_at_95r = {self.fpr_at_95r:.12g}",
            f"threshold = {self.threshold:.12g}",
            f"n_voxels = {self.n_voxels}",
            f"n_positive = {self.n_positive}",
            "per_subject_dice = " + ",".join(f"{d:.12g}" for d in self.per_subject_dice),
        ]
        return "\n".join(lines) + "\n"


def evaluate(scores_list, masks_list, threshold: float) -> MetricsReport:
    """Full report: pooled ranking metrics plus per-subject DICE at `threshold`."""
    pooled_scores, pooled_labels = _pool(scores_list, masks_list)
    bd, bd_thr = best_dice(scores_list, masks_list)
    per_subject, mean, std = dice_at_threshold(scores_list, masks_list, threshold)
    return MetricsReport(
        best_dice=bd,
        best_dice_threshold=bd_thr,
        dice_mean=mean,
        dice_std=std,
        per_subject_dice=per_subject,
        ap=average_precision(pooled_scores, pooled_labels),
        auroc=auroc(pooled_scores, pooled_labels),
        fpr_at_95r=fpr_at_recall(pooled_scores, pooled_labels, 0.95),
        threshold=threshold,
        n_voxels=int(pooled_labels.size),
        n_positive=int(pooled_labels.sum()),
    )
