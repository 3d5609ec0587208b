"""Loss functions. Each returns (scalar loss, gradient wrt the input).

Per-sample weights enter the classification loss multiplicatively, so
scaling a sample's weight scales its gradient contribution identically;
callers normalize weights (see the class-balance helper).
"""

from __future__ import annotations

import numpy as np

from flab.errors import ConfigError, DegenerateBatchError

# Surface band half-width and inside-band weight of the reconstruction L1
# loss: errors at points within 0.01 of the surface count 4x.
SDF_NEAR_BAND = 0.01
SDF_NEAR_WEIGHT = 4.0


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise ConfigError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def weighted_softmax_cross_entropy(logits, labels, weights):
    """Mean of per-sample weighted cross-entropy: (1/B) sum_i w_i * CE_i."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=logits.dtype)
    if logits.ndim != 2:
        raise ConfigError(f"logits must be (B, C), got {logits.shape}")
    b, c = logits.shape
    if labels.shape != (b,) or weights.shape != (b,):
        raise ConfigError("labels/weights must be 1-D of batch length")
    if np.any(weights < 0):
        raise ConfigError("weights must be >= 0")
    if not np.any(weights > 0):
        raise DegenerateBatchError("all-zero sample weights")
    if np.any(labels < 0) or np.any(labels >= c):
        raise ConfigError(f"labels must lie in [0, {c})")

    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    ce = logz - shifted[np.arange(b), labels]
    loss = float((weights * ce).sum() / b)

    probs = np.exp(shifted - logz[:, None])
    grad = probs
    grad[np.arange(b), labels] -= 1.0
    grad *= (weights / b)[:, None]
    return loss, grad


def stable_sigmoid(x):
    """Overflow-safe logistic function."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(
        x >= 0,
        1.0 / (1.0 + np.exp(-np.clip(x, 0, None))),
        np.exp(np.clip(x, None, 0)) / (1.0 + np.exp(np.clip(x, None, 0))),
    )


def bce_elements(logits, targets):
    """Unreduced binary cross-entropy on sigmoid(logits).

    Returns (per-element loss, per-element d(loss)/d(logit)) so callers
    can pick their own reduction. Targets may be hard {0,1} or soft
    probabilities (distillation). Stable at large |logits|.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=logits.dtype if logits.dtype.kind == "f"
                         else np.float64)
    _check_same_shape(logits, targets, "bce_elements")
    # max(z,0) - z*t + log(1 + exp(-|z|))
    per_elt = np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    return per_elt, stable_sigmoid(logits) - targets


def sigmoid_bce(logits, targets):
    """Elementwise binary cross-entropy on sigmoid(logits), mean-reduced."""
    per_elt, per_grad = bce_elements(logits, targets)
    n = per_elt.size
    return float(per_elt.sum() / n), per_grad / n


def mse_loss(pred, target):
    """Mean squared error over all elements; grad = 2(pred-target)/N."""
    pred = np.asarray(pred)
    target = np.asarray(target, dtype=pred.dtype)
    _check_same_shape(pred, target, "mse_loss")
    diff = pred - target
    n = pred.size
    loss = float((diff * diff).sum() / n)
    return loss, 2.0 * diff / n


def weighted_l1_sdf_loss(pred_sdf, gt_sdf):
    """Surface-weighted L1 on signed distances.

    Per-point term is |s - s_hat|, scaled by 4 when the ground-truth
    point lies within 0.01 of the surface (|s| <= 0.01); mean-reduced.
    Subgradient at s == s_hat is 0.
    """
    pred_sdf = np.asarray(pred_sdf)
    gt_sdf = np.asarray(gt_sdf, dtype=pred_sdf.dtype)
    _check_same_shape(pred_sdf, gt_sdf, "weighted_l1_sdf_loss")
    w = np.where(np.abs(gt_sdf) > SDF_NEAR_BAND, 1.0, SDF_NEAR_WEIGHT)
    diff = pred_sdf - gt_sdf
    n = pred_sdf.size
    loss = float((w * np.abs(diff)).sum() / n)
    grad = w * np.sign(diff) / n
    return loss, grad
