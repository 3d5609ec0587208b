"""Evaluation metrics: boundary F-score, silhouette IoU, image MSE,
classification accuracy, and per-class forgetting summaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from flab.errors import ConfigError

# Distance threshold for FS in the [-1,1]^2 scene, ~1% of its extent.
DEFAULT_FS_TAU = 0.02
FS_PRED_POINTS = 2048
FS_GT_POINTS = 1024


@dataclass
class CurvePoint:
    """One metric observation along an exposure sequence.

    per_class holds values only for classes seen so far; overall is
    their plain mean, so every learned class counts equally.
    """

    exposure: int
    metric: str
    overall: float
    per_class: dict = field(default_factory=dict)

    @property
    def classes_seen(self):
        return len(self.per_class)

    @classmethod
    def from_per_class(cls, exposure, metric, per_class):
        vals = list(per_class.values())
        if not vals:
            raise ConfigError("CurvePoint needs at least one seen class")
        return cls(exposure=exposure, metric=metric,
                   overall=float(np.mean(vals)), per_class=dict(per_class))


def fscore_at_tau(pred_points, gt_points, tau=DEFAULT_FS_TAU):
    """Precision/recall/F of predicted boundary points at threshold tau.

    Precision: fraction of predicted points within tau of some ground
    truth point; recall the converse. A missing or empty prediction
    (no surface) scores 0 across the board.
    """
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    gt = np.asarray(gt_points, dtype=np.float64)
    if gt.size == 0:
        raise ConfigError("fscore_at_tau needs nonempty ground truth points")
    if pred_points is None:
        return {"precision": 0.0, "recall": 0.0, "fscore": 0.0}
    pred = np.asarray(pred_points, dtype=np.float64)
    if pred.size == 0:
        return {"precision": 0.0, "recall": 0.0, "fscore": 0.0}
    d_pred = cKDTree(gt).query(pred)[0]
    d_gt = cKDTree(pred).query(gt)[0]
    precision = float(np.mean(d_pred <= tau))
    recall = float(np.mean(d_gt <= tau))
    if precision + recall == 0.0:
        fscore = 0.0
    else:
        fscore = 2.0 * precision * recall / (precision + recall)
    return {"precision": precision, "recall": recall, "fscore": fscore}


def iou_mask(a, b):
    """Intersection over union of two binary masks; both empty counts as 1."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ConfigError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def mse_image(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ConfigError(f"image shapes differ: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def accuracy(preds, labels, classes=None):
    """Exact-match rate, optionally restricted to a class filter.

    Returns {"overall", "per_class"}; overall is the rate over the
    kept examples, per_class the rate within each kept class.
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ConfigError(f"preds/labels lengths differ: {preds.shape} vs {labels.shape}")
    if classes is not None:
        keep = np.isin(labels, list(classes))
        if not keep.any():
            raise ConfigError(f"no examples with labels in {sorted(classes)}")
        preds, labels = preds[keep], labels[keep]
    per_class = {}
    for c in np.unique(labels):
        mask = labels == c
        per_class[int(c)] = float(np.mean(preds[mask] == c))
    return {"overall": float(np.mean(preds == labels)), "per_class": per_class}


def forgetting_summary(curve, classes=None):
    """Per-class just-learned vs final values along a metric curve.

    For each class: its value at the first exposure where it appears
    (just learned), its value at the last exposure, and the drop
    between the two.
    """
    if not curve:
        raise ConfigError("forgetting_summary needs a nonempty curve")
    points = sorted(curve, key=lambda p: p.exposure)
    final = points[-1]
    if classes is None:
        classes = sorted(final.per_class)
    out = {}
    for c in classes:
        first = next((p for p in points if c in p.per_class), None)
        if first is None:
            raise ConfigError(f"class {c} never appears in the curve")
        just = float(first.per_class[c])
        last = float(final.per_class.get(c, np.nan))
        if np.isnan(last):
            raise ConfigError(f"class {c} missing from the final exposure")
        out[c] = {"just_learned": just, "final": last, "drop": just - last}
    return out
