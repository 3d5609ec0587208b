"""Representation-level forgetting analysis.

Three probes into what a snapshot's features still encode: kernel CKA
against a reference model, linear probes predicting binarized
reference activations (visual factors), and retraining just the final
classifier over frozen features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from flab.errors import ConfigError, DegenerateBatchError, NumericError
from flab.nn.layers import Linear, Sequential
from flab.nn.losses import sigmoid_bce, weighted_softmax_cross_entropy
from flab.nn.optim import Adam
from flab.rng import ANALYSIS, RngStream

DEFAULT_VF_THETA = 1.0
DEFAULT_PROBE_EPOCHS = 20
DEFAULT_PROBE_LR = 1e-3


def extract_features(model, inputs, batch_size=256):
    """Feature-tap activations for a stack of inputs, row-aligned."""
    chunks = []
    for start in range(0, len(inputs), batch_size):
        res = model.forward(inputs[start:start + batch_size])
        chunks.append(res.features)
    return np.concatenate(chunks)


def gram(X, kernel="linear", sigma_fraction=1.0):
    """Gram matrix of feature rows under a linear or RBF kernel.

    RBF bandwidth follows the median heuristic: sigma equals
    sigma_fraction times the median pairwise distance.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 4:
        raise ConfigError(f"gram needs a 2D matrix with n >= 4 rows, got {X.shape}")
    if kernel == "linear":
        return X @ X.T
    if kernel != "rbf":
        raise ConfigError(f"kernel must be 'linear' or 'rbf', got {kernel!r}")
    sq = np.sum(X * X, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (X @ X.T), 0.0)
    iu = np.triu_indices(len(X), k=1)
    median = float(np.median(np.sqrt(d2[iu])))
    if median == 0.0:
        raise NumericError("degenerate RBF kernel: median pairwise distance is zero")
    sigma = sigma_fraction * median
    return np.exp(-d2 / (2.0 * sigma * sigma))


def hsic_biased(K, L):
    """Biased HSIC estimate tr(KHLH)/(n-1)^2 via double centering."""
    K = np.asarray(K, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    if K.shape != L.shape or K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ConfigError(f"HSIC needs matching square matrices, got {K.shape}, {L.shape}")
    n = K.shape[0]
    if n < 2:
        raise ConfigError(f"HSIC needs n >= 2, got {n}")
    if not (np.allclose(K, K.T, atol=1e-8) and np.allclose(L, L.T, atol=1e-8)):
        raise ConfigError("HSIC inputs must be symmetric")
    Kc = K - K.mean(axis=0)[None, :] - K.mean(axis=1)[:, None] + K.mean()
    return float(np.sum(Kc * L) / (n - 1) ** 2)


def cka(X, Y, kernel="rbf", sigma_fraction=1.0):
    """Centered kernel alignment between two row-aligned feature sets."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if len(X) != len(Y):
        raise ConfigError(f"CKA rows must align, got {len(X)} vs {len(Y)}")
    Kx = gram(X, kernel, sigma_fraction)
    Ky = gram(Y, kernel, sigma_fraction)
    xx = hsic_biased(Kx, Kx)
    yy = hsic_biased(Ky, Ky)
    if xx <= 0.0 or yy <= 0.0:
        raise NumericError("degenerate features: zero self-HSIC")
    return float(hsic_biased(Kx, Ky) / np.sqrt(xx * yy))


@dataclass
class VfTargets:
    """Binarized reference activations used as probe targets."""

    Y: np.ndarray
    theta: float
    positive_rates: np.ndarray
    degenerate: np.ndarray

    @property
    def num_degenerate(self):
        return int(self.degenerate.sum())


def vf_targets(batch_features, theta=DEFAULT_VF_THETA):
    """Threshold reference activations at theta (non-strict >=).

    Columns constant across all rows are flagged degenerate; probes
    exclude them from accuracy means.
    """
    A = np.asarray(batch_features, dtype=np.float64)
    if A.ndim != 2:
        raise ConfigError(f"features must be 2D, got shape {A.shape}")
    Y = (A >= theta).astype(np.float64)
    rates = Y.mean(axis=0)
    degenerate = (rates == 0.0) | (rates == 1.0)
    return VfTargets(Y=Y, theta=float(theta), positive_rates=rates, degenerate=degenerate)


def _train_linear(in_dim, out_dim, X, loss_fn, epochs, lr, batch_size, rng):
    probe = Sequential([Linear(in_dim, out_dim, rng=rng.split(0))], feature_tap=0)
    opt = Adam(lr=lr)
    n = len(X)
    order_rng = rng.split(1)
    for _ in range(epochs):
        order = order_rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            res = probe.forward(X[idx])
            _, grad = loss_fn(res.outputs, idx)
            grads = probe.backward(res, grad)
            opt.step(probe.parameters(), grads)
    return probe


def train_vf_probes(features_train, targets_train, features_test, targets_test,
                    epochs=DEFAULT_PROBE_EPOCHS, lr=DEFAULT_PROBE_LR,
                    batch_size=64, rng=None):
    """Fit linear probes from features to every binarized target unit.

    One weight matrix trained jointly under elementwise BCE, which
    decouples into independent per-unit logistic probes. Returns
    held-out per-unit accuracy and the mean over units whose training
    targets are not constant.
    """
    X = np.asarray(features_train, dtype=np.float64)
    Y = np.asarray(targets_train.Y if isinstance(targets_train, VfTargets)
                   else targets_train, dtype=np.float64)
    Xt = np.asarray(features_test, dtype=np.float64)
    Yt = np.asarray(targets_test.Y if isinstance(targets_test, VfTargets)
                    else targets_test, dtype=np.float64)
    if rng is None:
        rng = RngStream(0, (ANALYSIS, 1))
    degenerate = (Y.mean(axis=0) == 0.0) | (Y.mean(axis=0) == 1.0)
    if degenerate.all():
        raise DegenerateBatchError("every probe unit has constant training targets")

    def loss_fn(logits, idx):
        return sigmoid_bce(logits, Y[idx])

    probe = _train_linear(X.shape[1], Y.shape[1], X, loss_fn, epochs, lr,
                          batch_size, rng)
    logits = probe.forward(Xt).outputs
    preds = (logits > 0.0).astype(np.float64)
    per_unit = (preds == Yt).mean(axis=0)
    return {
        "per_unit_accuracy": per_unit,
        "mean_accuracy": float(per_unit[~degenerate].mean()),
        "degenerate": degenerate,
        "num_degenerate": int(degenerate.sum()),
    }


def finetune_fc(features_train, labels_train, features_test, labels_test,
                num_classes, epochs=30, lr=1e-3, batch_size=64, rng=None,
                features_val=None, labels_val=None):
    """Retrain a softmax head over frozen features on all classes.

    With a validation set, the epoch with the best val accuracy wins;
    otherwise the final epoch's head is used. Returns test accuracy.
    """
    X = np.asarray(features_train, dtype=np.float64)
    y = np.asarray(labels_train, dtype=np.int64)
    if rng is None:
        rng = RngStream(0, (ANALYSIS, 2))
    head = Sequential([Linear(X.shape[1], num_classes, rng=rng.split(0))], feature_tap=0)
    opt = Adam(lr=lr)
    ones = np.ones(len(X))
    order_rng = rng.split(1)
    best = None
    for _ in range(epochs):
        order = order_rng.permutation(len(X))
        for start in range(0, len(X), batch_size):
            idx = order[start:start + batch_size]
            res = head.forward(X[idx])
            _, grad = weighted_softmax_cross_entropy(res.outputs, y[idx], ones[idx])
            grads = head.backward(res, grad)
            opt.step(head.parameters(), grads)
        if features_val is not None:
            preds = head.forward(np.asarray(features_val, dtype=np.float64)).outputs
            acc = float(np.mean(np.argmax(preds, axis=1) == labels_val))
            if best is None or acc > best[0]:
                best = (acc, head.copy_parameters())
    if best is not None:
        head.set_parameters(best[1])
    logits = head.forward(np.asarray(features_test, dtype=np.float64)).outputs
    preds = np.argmax(logits, axis=1)
    return float(np.mean(preds == np.asarray(labels_test)))
