"""Dataset assembly, a versioned on-disk cache, and an IDX loader.

Sprite datasets are generated deterministically from a seed, with one
RNG stream per (class, split, index) so generation order never
matters. The cache file is a small self-describing container: a magic
line, a JSON manifest, then raw little-endian array bytes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from flab.errors import ConfigError, DataFormatError
from flab.rng import DATA, RngStream
from flab.data.shapes import NUM_SHAPE_CLASSES, ShapeSpec, sample_shape
from flab.data.sprites import (
    DEFAULT_BRIGHTNESS,
    DEFAULT_NOISE_SIGMA,
    IMAGE_SIZE,
    Example,
    render_example,
    sample_sdf_points,
)

CACHE_MAGIC = b"FLAB-DS v1\n"

_SPLIT_IDS = {"train": 0, "val": 1, "test": 2}

_DATASET_DEFAULTS = {
    "num_classes": NUM_SHAPE_CLASSES,
    "per_class_train": 200,
    "per_class_val": None,
    "per_class_test": 50,
    "seed": 0,
    "points_per_example": 0,
    "sdf_frame": "viewer",
    "resolution": IMAGE_SIZE,
    "antialias": True,
    "brightness": DEFAULT_BRIGHTNESS,
    "noise_sigma": DEFAULT_NOISE_SIGMA,
}


@dataclass
class DatasetSplit:
    """Per-class train/val/test examples plus the seed that made them."""

    train: dict = field(default_factory=dict)
    val: dict = field(default_factory=dict)
    test: dict = field(default_factory=dict)
    seed: int = 0
    config: dict = field(default_factory=dict)

    @property
    def classes(self):
        return sorted(self.train)

    def split(self, name):
        if name not in _SPLIT_IDS:
            raise ConfigError(f"unknown split {name!r}")
        return getattr(self, name)

    def examples(self, name, classes=None):
        """Flat example list for a split, optionally restricted by class."""
        per_class = self.split(name)
        keys = sorted(per_class) if classes is None else list(classes)
        out = []
        for c in keys:
            out.extend(per_class.get(c, []))
        return out

    def stack(self, name, classes=None):
        """(images, labels) arrays for a split in class-then-index order."""
        exs = self.examples(name, classes)
        if not exs:
            raise ConfigError(f"split {name!r} has no examples for {classes}")
        images = np.stack([e.image for e in exs])
        labels = np.array([e.label for e in exs], dtype=np.int64)
        return images, labels


def resolve_config(config):
    cfg = dict(_DATASET_DEFAULTS)
    unknown = set(config) - set(cfg)
    if unknown:
        raise ConfigError(f"unknown dataset config keys: {sorted(unknown)}")
    cfg.update(config)
    # Keep the config JSON-stable so a cached copy compares equal.
    cfg["brightness"] = list(cfg["brightness"])
    if cfg["per_class_val"] is None:
        # Default val share mirrors a 0.7/0.1 train/val proportion.
        cfg["per_class_val"] = max(1, round(cfg["per_class_train"] / 7))
    if not 1 <= cfg["num_classes"] <= NUM_SHAPE_CLASSES:
        raise ConfigError(
            f"num_classes must be in [1, {NUM_SHAPE_CLASSES}], got {cfg['num_classes']}")
    for key in ("per_class_train", "per_class_val", "per_class_test"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be >= 1, got {cfg[key]}")
    return cfg


def make_dataset(config):
    """Generate a sprite DatasetSplit from a config dict.

    Deterministic under config["seed"]; every example gets its own
    stream keyed by (class, split, index).
    """
    cfg = resolve_config(config)
    counts = {"train": cfg["per_class_train"], "val": cfg["per_class_val"],
              "test": cfg["per_class_test"]}
    ds = DatasetSplit(seed=cfg["seed"], config=cfg)
    for c in range(cfg["num_classes"]):
        for split_name, split_id in _SPLIT_IDS.items():
            bucket = ds.split(split_name).setdefault(c, [])
            for i in range(counts[split_name]):
                r = RngStream(cfg["seed"], (DATA, c, split_id, i))
                shape = sample_shape(c, r)
                ex = render_example(
                    shape, r, resolution=cfg["resolution"], antialias=cfg["antialias"],
                    brightness=tuple(cfg["brightness"]), noise_sigma=cfg["noise_sigma"])
                if cfg["points_per_example"]:
                    ex.points, ex.sdf = sample_sdf_points(
                        shape, cfg["points_per_example"], r, frame=cfg["sdf_frame"])
                bucket.append(ex)
    return ds


def _split_arrays(name, examples):
    arrays = {}
    if not examples:
        return arrays
    arrays[f"{name}_images"] = np.stack([e.image for e in examples]).astype("<f8")
    arrays[f"{name}_labels"] = np.array([e.label for e in examples], dtype="<i8")
    if examples[0].silhouette is not None:
        arrays[f"{name}_silhouettes"] = np.stack(
            [e.silhouette for e in examples]).astype("u1")
    if examples[0].shape is not None:
        arrays[f"{name}_shapes"] = np.array(
            [[e.shape.class_id, e.shape.tx, e.shape.ty, e.shape.theta, e.shape.scale]
             for e in examples], dtype="<f8")
    if examples[0].points is not None:
        arrays[f"{name}_points"] = np.stack([e.points for e in examples]).astype("<f8")
        arrays[f"{name}_sdf"] = np.stack([e.sdf for e in examples]).astype("<f8")
    return arrays


def save_dataset(ds, path):
    """Write a DatasetSplit to a FLAB-DS v1 container, atomically."""
    arrays = {}
    for split_name in _SPLIT_IDS:
        arrays.update(_split_arrays(split_name, ds.examples(split_name)))
    manifest = {
        "seed": ds.seed,
        "config": _jsonable(ds.config),
        "arrays": [{"name": k, "dtype": str(v.dtype), "shape": list(v.shape)}
                   for k, v in arrays.items()],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for v in arrays.values():
            f.write(np.ascontiguousarray(v).tobytes())
    os.replace(tmp, path)
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def load_dataset(path):
    """Read a FLAB-DS v1 container back into a DatasetSplit."""
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(CACHE_MAGIC):
        raise DataFormatError(
            f"not a FLAB-DS v1 file: {path}", offset=0)
    nl = blob.find(b"\n", len(CACHE_MAGIC))
    if nl < 0:
        raise DataFormatError("missing manifest line", offset=len(CACHE_MAGIC))
    try:
        manifest = json.loads(blob[len(CACHE_MAGIC):nl].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"bad manifest: {exc}", offset=len(CACHE_MAGIC)) from exc
    offset = nl + 1
    arrays = {}
    for entry in manifest["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape))
        if offset + nbytes > len(blob):
            raise DataFormatError(
                f"array {entry['name']!r} truncated", offset=offset)
        arrays[entry["name"]] = np.frombuffer(
            blob, dtype=dtype, count=int(np.prod(shape)), offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise DataFormatError(
            f"{len(blob) - offset} trailing bytes after arrays", offset=offset)

    ds = DatasetSplit(seed=manifest["seed"], config=manifest["config"])
    for split_name in _SPLIT_IDS:
        if f"{split_name}_images" not in arrays:
            continue
        images = arrays[f"{split_name}_images"]
        labels = arrays[f"{split_name}_labels"]
        sils = arrays.get(f"{split_name}_silhouettes")
        shapes = arrays.get(f"{split_name}_shapes")
        points = arrays.get(f"{split_name}_points")
        sdf = arrays.get(f"{split_name}_sdf")
        bucket = ds.split(split_name)
        for i in range(len(images)):
            spec = None
            if shapes is not None:
                row = shapes[i]
                spec = ShapeSpec(int(row[0]), row[1], row[2], row[3], row[4])
            ex = Example(
                image=images[i],
                silhouette=None if sils is None else sils[i],
                label=int(labels[i]),
                shape=spec,
                points=None if points is None else points[i],
                sdf=None if sdf is None else sdf[i],
            )
            bucket.setdefault(ex.label, []).append(ex)
    return ds


def _read_be_u32(blob, offset, what):
    if offset + 4 > len(blob):
        raise DataFormatError(f"truncated reading {what}", offset=offset)
    return int.from_bytes(blob[offset:offset + 4], "big"), offset + 4


IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


def load_idx(images_path, labels_path):
    """Load an IDX image/label file pair into a DatasetSplit.

    All examples land in the train split grouped by label; silhouette
    and shape fields stay None since no geometry exists for external
    images. Pixels are scaled to [0,1].
    """
    with open(images_path, "rb") as f:
        img_blob = f.read()
    with open(labels_path, "rb") as f:
        lab_blob = f.read()

    magic, off = _read_be_u32(img_blob, 0, "image magic")
    if magic != IDX_IMAGE_MAGIC:
        raise DataFormatError(
            f"bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}", offset=0)
    n, off = _read_be_u32(img_blob, off, "image count")
    rows, off = _read_be_u32(img_blob, off, "image rows")
    cols, off = _read_be_u32(img_blob, off, "image cols")
    need = n * rows * cols
    if len(img_blob) - off < need:
        raise DataFormatError(
            f"image data truncated: need {need} bytes, have {len(img_blob) - off}",
            offset=off)
    images = np.frombuffer(img_blob, dtype=np.uint8, count=need, offset=off)
    images = images.reshape(n, rows, cols).astype(np.float64) / 255.0

    magic, off = _read_be_u32(lab_blob, 0, "label magic")
    if magic != IDX_LABEL_MAGIC:
        raise DataFormatError(
            f"bad label magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}", offset=0)
    n_lab, off = _read_be_u32(lab_blob, off, "label count")
    if n_lab != n:
        raise DataFormatError(
            f"label count {n_lab} does not match image count {n}", offset=4)
    if len(lab_blob) - off < n_lab:
        raise DataFormatError(
            f"label data truncated: need {n_lab} bytes, have {len(lab_blob) - off}",
            offset=off)
    labels = np.frombuffer(lab_blob, dtype=np.uint8, count=n_lab, offset=off)

    ds = DatasetSplit(seed=0, config={"source": "idx", "images": str(images_path),
                                      "labels": str(labels_path)})
    for i in range(n):
        ex = Example(image=images[i], silhouette=None, label=int(labels[i]))
        ds.train.setdefault(ex.label, []).append(ex)
    return ds
