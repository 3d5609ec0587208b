"""Analytic 2D signed distance fields for the sprite shape classes.

All primitives are exact Euclidean SDFs (negative inside, Lipschitz
constant 1) in a canonical frame: centered, upright, sized to fit the
unit disk of radius ~0.55. A pose (translation, rotation, uniform
scale) maps them into the [-1,1]^2 scene; the posed field stays an
exact SDF because the transform is a similarity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from flab.errors import ConfigError

SHAPE_CLASS_NAMES = (
    "disk", "ring", "square", "diamond", "triangle", "cross", "capsule", "star5",
)
NUM_SHAPE_CLASSES = len(SHAPE_CLASS_NAMES)

# Default pose ranges: translations within the scene, free rotation,
# scale as a fraction of canonical size.
TRANSLATION_RANGE = 0.4
SCALE_RANGE = (0.5, 1.0)


@dataclass(frozen=True)
class ShapeSpec:
    """One posed shape instance. Pose maps canonical -> scene frame."""

    class_id: int
    tx: float = 0.0
    ty: float = 0.0
    theta: float = 0.0
    scale: float = 1.0


def _split(p):
    return p[..., 0], p[..., 1]


def _length(x, y):
    return np.hypot(x, y)


def _sd_disk(p):
    x, y = _split(p)
    return _length(x, y) - 0.55


def _sd_ring(p):
    x, y = _split(p)
    return np.abs(_length(x, y) - 0.42) - 0.13


def _sd_square(p):
    x, y = _split(p)
    qx, qy = np.abs(x) - 0.39, np.abs(y) - 0.39
    outer = _length(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
    inner = np.minimum(np.maximum(qx, qy), 0.0)
    return outer + inner


def _sd_diamond(p):
    bx, by = 0.55, 0.32
    x, y = np.abs(p[..., 0]), np.abs(p[..., 1])
    h = np.clip(((bx - 2.0 * x) * bx - (by - 2.0 * y) * by) / (bx * bx + by * by), -1.0, 1.0)
    d = _length(x - 0.5 * bx * (1.0 - h), y - 0.5 * by * (1.0 + h))
    return d * np.sign(x * by + y * bx - bx * by)


def _sd_triangle(p):
    # Equilateral triangle, half side r.
    r = 0.45
    k = np.sqrt(3.0)
    x = np.abs(p[..., 0]) - r
    y = p[..., 1] + r / k
    flip = x + k * y > 0.0
    x2 = (x - k * y) / 2.0
    y2 = (-k * x - y) / 2.0
    x = np.where(flip, x2, x)
    y = np.where(flip, y2, y)
    x = x - np.clip(x, -2.0 * r, 0.0)
    return -_length(x, y) * np.sign(y)


def _sd_cross(p):
    bx, by = 0.52, 0.16
    x, y = np.abs(p[..., 0]), np.abs(p[..., 1])
    swap = y > x
    x, y = np.where(swap, y, x), np.where(swap, x, y)
    qx, qy = x - bx, y - by
    k = np.maximum(qy, qx)
    wx = np.where(k > 0.0, qx, by - x)
    wy = np.where(k > 0.0, qy, -k)
    return np.sign(k) * _length(np.maximum(wx, 0.0), np.maximum(wy, 0.0))


def _sd_capsule(p):
    a, r = 0.36, 0.18
    x, y = _split(p)
    cx = np.clip(x, -a, a)
    return _length(x - cx, y) - r


def _sd_star5(p):
    r, rf = 0.55, 0.5
    k1x, k1y = 0.809016994375, -0.587785252292
    k2x, k2y = -k1x, k1y
    x, y = np.abs(p[..., 0]), p[..., 1]
    d1 = 2.0 * np.maximum(k1x * x + k1y * y, 0.0)
    x, y = x - d1 * k1x, y - d1 * k1y
    d2 = 2.0 * np.maximum(k2x * x + k2y * y, 0.0)
    x, y = x - d2 * k2x, y - d2 * k2y
    x = np.abs(x)
    y = y - r
    bax, bay = rf * -k1y, rf * k1x - 1.0
    h = np.clip((x * bax + y * bay) / (bax * bax + bay * bay), 0.0, r)
    return _length(x - bax * h, y - bay * h) * np.sign(y * bax - x * bay)


_SDF_BY_CLASS = (
    _sd_disk, _sd_ring, _sd_square, _sd_diamond,
    _sd_triangle, _sd_cross, _sd_capsule, _sd_star5,
)

# Canonical circumradius per class, used for the scene-containment check.
_CIRCUMRADIUS = (
    0.55,
    0.55,
    0.39 * np.sqrt(2.0),
    0.55,
    2.0 * 0.45 / np.sqrt(3.0),
    np.hypot(0.52, 0.16),
    0.36 + 0.18,
    0.55,
)


def canonical_sdf(class_id, points):
    if not 0 <= class_id < NUM_SHAPE_CLASSES:
        raise ConfigError(f"class_id {class_id} outside [0, {NUM_SHAPE_CLASSES})")
    return _SDF_BY_CLASS[class_id](np.asarray(points, dtype=np.float64))


def sdf_oracle(shape: ShapeSpec, frame: str, points) -> np.ndarray:
    """Exact signed distance at each query point (negative inside).

    frame "viewer": queries are scene coordinates of the posed shape.
    frame "canonical": queries address the unposed, centered shape.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.shape[-1] != 2:
        raise ConfigError(f"points must have trailing dim 2, got {points.shape}")
    if frame == "canonical":
        return canonical_sdf(shape.class_id, points)
    if frame != "viewer":
        raise ConfigError(f"frame must be 'viewer' or 'canonical', got {frame!r}")
    c, s = np.cos(shape.theta), np.sin(shape.theta)
    x = points[..., 0] - shape.tx
    y = points[..., 1] - shape.ty
    # Inverse rotation, then inverse scale.
    q = np.stack([(c * x + s * y) / shape.scale, (-s * x + c * y) / shape.scale], axis=-1)
    return shape.scale * canonical_sdf(shape.class_id, q)


def fits_in_scene(shape: ShapeSpec) -> bool:
    reach = shape.scale * _CIRCUMRADIUS[shape.class_id]
    return max(abs(shape.tx), abs(shape.ty)) + reach <= 1.0


def sample_shape(class_id, rng, translation=TRANSLATION_RANGE, scale=SCALE_RANGE,
                 max_tries=1000) -> ShapeSpec:
    """Draw a pose, rejection-resampling until the shape fits the scene."""
    for _ in range(max_tries):
        spec = ShapeSpec(
            class_id=int(class_id),
            tx=float(rng.uniform(-translation, translation)),
            ty=float(rng.uniform(-translation, translation)),
            theta=float(rng.uniform(0.0, 2.0 * np.pi)),
            scale=float(rng.uniform(scale[0], scale[1])),
        )
        if fits_in_scene(spec):
            return spec
    raise ConfigError("could not pose shape inside the scene; check pose ranges")
