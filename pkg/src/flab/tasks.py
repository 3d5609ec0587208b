"""Task definitions: model shape, minibatch assembly, loss, evaluation.

A task knows nothing about exposure order or memory; learners drive
it. Classification scores through a caller-supplied predictor so
softmax heads and nearest-mean inference share one evaluation path.
"""

from __future__ import annotations

import numpy as np

from flab.errors import ConfigError
from flab.data.sprites import extract_boundary_points, pixel_centers
from flab.metrics import DEFAULT_FS_TAU, FS_GT_POINTS, FS_PRED_POINTS, fscore_at_tau, iou_mask, mse_image
from flab.models import (
    build_autoencoder,
    build_classifier,
    build_conv_classifier,
    build_sdf_net,
    build_silhouette_net,
    grow_classifier_head,
)
from flab.nn.losses import mse_loss, sigmoid_bce, weighted_l1_sdf_loss, weighted_softmax_cross_entropy

TASK_NAMES = ("classification", "autoencoder", "silhouette", "sdf_recon")


def stack_images(examples):
    return np.stack([e.image for e in examples])


class ClassificationTask:
    name = "classification"
    metric = "accuracy"
    higher_is_better = True

    def __init__(self, input_dim=1024, hidden=(256, 128), eval_batch=256,
                 arch="mlp"):
        if arch not in ("mlp", "conv"):
            raise ConfigError(f"unknown classifier architecture {arch!r}")
        self.input_dim = input_dim
        self.hidden = tuple(hidden)
        self.eval_batch = eval_batch
        self.arch = arch

    def build_model(self, rng, num_outputs=None):
        if not num_outputs:
            raise ConfigError("classification model needs num_outputs >= 1")
        if self.arch == "conv":
            res = int(round(self.input_dim ** 0.5))
            return build_conv_classifier(num_outputs, rng, resolution=res)
        return build_classifier(num_outputs, rng, self.input_dim, self.hidden)

    def grow(self, model, num_outputs, rng):
        return grow_classifier_head(model, num_outputs, rng)

    def make_batch(self, examples, rng):
        labels = np.array([e.label for e in examples], dtype=np.int64)
        return stack_images(examples), labels

    def loss(self, outputs, targets, weights):
        return weighted_softmax_cross_entropy(outputs, targets, weights)

    def evaluate_predictor(self, predict_fn, test_by_class):
        """Per-class exact-match accuracy from a labels = f(images) oracle."""
        out = {}
        for c in sorted(test_by_class):
            exs = test_by_class[c]
            if not exs:
                raise ConfigError(f"class {c} has no test examples")
            preds = []
            for start in range(0, len(exs), self.eval_batch):
                preds.append(predict_fn(stack_images(exs[start:start + self.eval_batch])))
            preds = np.concatenate(preds)
            out[c] = float(np.mean(preds == c))
        return out


class AutoencoderTask:
    name = "autoencoder"
    metric = "mse"
    higher_is_better = False

    def __init__(self, input_dim=1024, hidden=256, bottleneck=64, eval_batch=256):
        self.input_dim = input_dim
        self.hidden = hidden
        self.bottleneck = bottleneck
        self.eval_batch = eval_batch

    def build_model(self, rng, num_outputs=None):
        return build_autoencoder(rng, self.input_dim, self.hidden, self.bottleneck)

    def make_batch(self, examples, rng):
        images = stack_images(examples)
        return images, images.reshape(len(images), -1)

    def loss(self, outputs, targets, weights):
        if weights is not None:
            raise ConfigError("per-sample weights are a classification-only option")
        return mse_loss(outputs, targets)

    def evaluate(self, model, test_by_class):
        out = {}
        for c in sorted(test_by_class):
            exs = test_by_class[c]
            vals = []
            for start in range(0, len(exs), self.eval_batch):
                chunk = exs[start:start + self.eval_batch]
                images = stack_images(chunk)
                res = model.forward(images)
                flat = images.reshape(len(chunk), -1)
                vals.extend(mse_image(res.outputs[i], flat[i]) for i in range(len(chunk)))
            out[c] = float(np.mean(vals))
        return out


class SilhouetteTask:
    name = "silhouette"
    metric = "iou"
    higher_is_better = True

    def __init__(self, input_dim=1024, hidden=256, bottleneck=64, eval_batch=256):
        self.input_dim = input_dim
        self.hidden = hidden
        self.bottleneck = bottleneck
        self.eval_batch = eval_batch

    def build_model(self, rng, num_outputs=None):
        return build_silhouette_net(rng, self.input_dim, self.hidden, self.bottleneck)

    def make_batch(self, examples, rng):
        images = stack_images(examples)
        sils = np.stack([e.silhouette for e in examples]).astype(np.float64)
        return images, sils.reshape(len(images), -1)

    def loss(self, outputs, targets, weights):
        if weights is not None:
            raise ConfigError("per-sample weights are a classification-only option")
        return sigmoid_bce(outputs, targets)

    def evaluate(self, model, test_by_class):
        out = {}
        for c in sorted(test_by_class):
            exs = test_by_class[c]
            vals = []
            for start in range(0, len(exs), self.eval_batch):
                chunk = exs[start:start + self.eval_batch]
                res = model.forward(stack_images(chunk))
                for i, ex in enumerate(chunk):
                    pred = (res.outputs[i] > 0.0).reshape(ex.silhouette.shape)
                    vals.append(iou_mask(pred, ex.silhouette))
            out[c] = float(np.mean(vals))
        return out


class SdfTask:
    """Image-conditioned SDF regression scored by boundary F-score."""

    name = "sdf_recon"
    metric = "fscore"
    higher_is_better = True

    def __init__(self, frame="viewer", points_per_batch=64, input_dim=1024,
                 enc_hidden=(256, 128), feat_dim=64, dec_hidden=(128, 128),
                 tau=DEFAULT_FS_TAU, eval_resolution=64, eval_per_class=12,
                 gt_resolution=256, gt_count=FS_GT_POINTS, pred_count=FS_PRED_POINTS,
                 eval_image_chunk=8):
        if frame not in ("viewer", "canonical"):
            raise ConfigError(f"frame must be 'viewer' or 'canonical', got {frame!r}")
        self.frame = frame
        self.points_per_batch = points_per_batch
        self.input_dim = input_dim
        self.enc_hidden = tuple(enc_hidden)
        self.feat_dim = feat_dim
        self.dec_hidden = tuple(dec_hidden)
        self.tau = tau
        self.eval_resolution = eval_resolution
        self.eval_per_class = eval_per_class
        self.gt_resolution = gt_resolution
        self.gt_count = gt_count
        self.pred_count = pred_count
        self.eval_image_chunk = eval_image_chunk
        self._grid = pixel_centers(eval_resolution).reshape(-1, 2)

    def build_model(self, rng, num_outputs=None):
        return build_sdf_net(rng, self.input_dim, self.enc_hidden, self.feat_dim,
                             self.dec_hidden)

    def make_batch(self, examples, rng):
        images = stack_images(examples)
        pts, vals = [], []
        for ex in examples:
            if ex.points is None:
                raise ConfigError(
                    "sdf task needs presampled points; set dataset.points_per_example")
            idx = rng.integers(0, len(ex.points), self.points_per_batch)
            pts.append(ex.points[idx])
            vals.append(ex.sdf[idx])
        return (images, np.stack(pts)), np.stack(vals)

    def loss(self, outputs, targets, weights):
        if weights is not None:
            raise ConfigError("per-sample weights are a classification-only option")
        return weighted_l1_sdf_loss(outputs, targets)

    def gt_boundary(self, example):
        cached = getattr(example, "_gt_boundary", None)
        if cached is None:
            cached = extract_boundary_points(
                example.shape, resolution=self.gt_resolution, count=self.gt_count,
                frame=self.frame)
            example._gt_boundary = cached
        return cached

    def predict_grids(self, model, examples):
        """Predicted SDF grids (one eval_resolution^2 image each)."""
        grids = []
        res = self.eval_resolution
        for start in range(0, len(examples), self.eval_image_chunk):
            chunk = examples[start:start + self.eval_image_chunk]
            images = stack_images(chunk)
            pts = np.broadcast_to(self._grid, (len(chunk),) + self._grid.shape)
            out = model.forward((images, np.ascontiguousarray(pts))).outputs
            grids.extend(out[i].reshape(res, res) for i in range(len(chunk)))
        return grids

    def fscore_example(self, grid, example):
        pred = extract_boundary_points(grid, count=self.pred_count)
        gt = self.gt_boundary(example)
        return fscore_at_tau(pred, gt, self.tau)["fscore"]

    def evaluate(self, model, test_by_class):
        out = {}
        for c in sorted(test_by_class):
            exs = test_by_class[c][: self.eval_per_class]
            if not exs:
                raise ConfigError(f"class {c} has no test examples")
            grids = self.predict_grids(model, exs)
            out[c] = float(np.mean([self.fscore_example(g, ex)
                                    for g, ex in zip(grids, exs)]))
        return out


def make_task(name, **kwargs):
    table = {
        "classification": ClassificationTask,
        "autoencoder": AutoencoderTask,
        "silhouette": SilhouetteTask,
        "sdf_recon": SdfTask,
    }
    if name not in table:
        raise ConfigError(f"unknown task {name!r}; choose from {sorted(table)}")
    return table[name](**kwargs)
