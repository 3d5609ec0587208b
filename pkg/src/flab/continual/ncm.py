"""Nearest-class-mean classification over feature vectors."""

from __future__ import annotations

import numpy as np

from flab.errors import ConfigError, NumericError


def class_means(features_by_class):
    """Mean feature vector per class from {class: (n, d) array}."""
    means = {}
    for c in sorted(features_by_class):
        feats = np.asarray(features_by_class[c], dtype=np.float64)
        if feats.ndim != 2 or len(feats) == 0:
            raise ConfigError(f"class {c} needs a nonempty (n, d) feature array")
        means[c] = feats.mean(axis=0)
    return means


def ncm_classify(features, means):
    """Label each feature row by smallest cosine distance to a class mean.

    Exact ties resolve to the lowest class id. Zero-norm rows cannot
    be compared under cosine distance and raise, naming the sample.
    """
    features = np.asarray(features, dtype=np.float64)
    if not means:
        raise ConfigError("ncm_classify needs at least one class mean")
    classes = sorted(means)
    mean_mat = np.stack([np.asarray(means[c], dtype=np.float64) for c in classes])
    mean_norms = np.linalg.norm(mean_mat, axis=1)
    if np.any(mean_norms == 0.0):
        bad = classes[int(np.argmax(mean_norms == 0.0))]
        raise NumericError(f"class {bad} has a zero-norm mean feature")
    feat_norms = np.linalg.norm(features, axis=1)
    if np.any(feat_norms == 0.0):
        bad = int(np.argmax(feat_norms == 0.0))
        raise NumericError(f"sample {bad} has a zero-norm feature vector")
    cos = (features @ mean_mat.T) / (feat_norms[:, None] * mean_norms[None, :])
    # argmin of (1 - cos) over classes in ascending id order; first hit wins ties.
    picks = np.argmin(1.0 - cos, axis=1)
    class_arr = np.array(classes)
    return class_arr[picks]
