"""Overlap metrics for predicted vs ground-truth masks.

Empty-mask conventions (documented, NaN-free): both masks empty gives
dice = precision = recall = 1.0; otherwise an empty denominator (no
positive predictions, or no positive ground truth) gives 0.0 for the
affected metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class SegMetrics:
    dice: float
    precision: float
    recall: float


def _as_bool(mask) -> np.ndarray:
    return np.asarray(mask).astype(bool)


def _check_shapes(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = _as_bool(pred), _as_bool(gt)
    if p.shape != g.shape:
        raise ShapeError(f"pred shape {p.shape} != gt shape {g.shape}")
    return p, g


def dice(pred, gt) -> float:
    """2|pred & gt| / (|pred| + |gt|); 1.0 when both masks are empty."""
    p, g = _check_shapes(pred, gt)
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def precision_recall(pred, gt) -> tuple[float, float]:
    p, g = _check_shapes(pred, gt)
    tp = int((p & g).sum())
    fp = int((p & ~g).sum())
    fn = int((~p & g).sum())
    if tp + fp + fn == 0:
        return 1.0, 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall


def seg_metrics(pred, gt) -> SegMetrics:
    p, r = precision_recall(pred, gt)
    return SegMetrics(dice=dice(pred, gt), precision=p, recall=r)


def per_class_metrics(
    pred_labels: np.ndarray, gt_labels: np.ndarray, n_classes: int
) -> dict[int, SegMetrics]:
    """One-vs-rest metrics for every non-background class."""
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise ShapeError(
            f"pred shape {pred_labels.shape} != gt shape {gt_labels.shape}"
        )
    return {
        c: seg_metrics(pred_labels == c, gt_labels == c)
        for c in range(1, n_classes)
    }
