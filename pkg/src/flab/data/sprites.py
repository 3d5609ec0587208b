"""Rendering and point sampling for sprite shapes.

Turns a posed :class:`ShapeSpec` into training material: a grayscale
image on a pixel grid, its binary silhouette, banded SDF supervision
points, and boundary points on the zero level set for surface metrics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from flab.errors import ConfigError
from flab.data.shapes import ShapeSpec, sdf_oracle

logger = logging.getLogger("flab.data")

IMAGE_SIZE = 32
DEFAULT_BRIGHTNESS = (0.7, 1.0)
DEFAULT_NOISE_SIGMA = 0.05

# SDF sampling bands: half the points hug the surface, the rest
# spread over a mid shell and the remaining scene.
SDF_BANDS = ((0.0, 0.03), (0.03, 0.1), (0.1, 1.1))
SDF_BAND_FRACTIONS = (0.5, 0.3, 0.2)
REJECTION_CAP = 10_000


@dataclass(eq=False)
class Example:
    """One rendered training instance.

    shape is kept so evaluation can query the exact SDF anywhere;
    it is None for externally loaded images. points/sdf hold
    presampled SDF supervision when the task wants them.
    """

    image: np.ndarray
    silhouette: Optional[np.ndarray]
    label: int
    shape: Optional[ShapeSpec] = None
    points: Optional[np.ndarray] = field(default=None, repr=False)
    sdf: Optional[np.ndarray] = field(default=None, repr=False)


def pixel_centers(resolution=IMAGE_SIZE):
    """(R, R, 2) array of pixel-center coordinates covering [-1,1]^2.

    grid[i, j] holds (x_j, y_i); x varies along columns, y along rows.
    """
    h = 2.0 / resolution
    coords = -1.0 + (np.arange(resolution) + 0.5) * h
    xs, ys = np.meshgrid(coords, coords)
    return np.stack([xs, ys], axis=-1)


def occupancy_from_sdf(sdf, isosurface=0.0):
    """Binary occupancy 1{sdf <= i}; the level set itself counts as inside."""
    return (np.asarray(sdf) <= isosurface).astype(np.uint8)


def render_example(shape, rng, resolution=IMAGE_SIZE, antialias=True,
                   brightness=DEFAULT_BRIGHTNESS, noise_sigma=DEFAULT_NOISE_SIGMA):
    """Render a posed shape to an image plus exact silhouette.

    The silhouette thresholds the SDF at pixel centers. The image is
    the silhouette shaded with a per-example brightness draw and
    additive Gaussian pixel noise, clipped to [0,1]; with antialias
    on, coverage ramps linearly across one pixel width at the
    boundary instead of stepping.
    """
    grid = pixel_centers(resolution)
    sdf = sdf_oracle(shape, "viewer", grid.reshape(-1, 2)).reshape(resolution, resolution)
    silhouette = occupancy_from_sdf(sdf)
    if antialias:
        h = 2.0 / resolution
        coverage = np.clip(0.5 - sdf / h, 0.0, 1.0)
    else:
        coverage = silhouette.astype(np.float64)
    level = float(rng.uniform(brightness[0], brightness[1]))
    image = level * coverage
    if noise_sigma > 0.0:
        image = image + rng.normal(0.0, noise_sigma, image.shape)
    image = np.clip(image, 0.0, 1.0)
    return Example(image=image, silhouette=silhouette, label=shape.class_id, shape=shape)


def band_counts(n):
    """Points per band for a draw of n: round each share, remainder to near."""
    mid = int(round(n * SDF_BAND_FRACTIONS[1]))
    far = int(round(n * SDF_BAND_FRACTIONS[2]))
    return (n - mid - far, mid, far)


def _fill_band(shape, lo, hi, want, rng, frame):
    """Rejection-sample up to `want` scene points with |sdf| in [lo, hi)."""
    pts, vals, tried = [], [], 0
    got = 0
    while got < want and tried < REJECTION_CAP:
        m = min(max(4 * (want - got), 256), REJECTION_CAP - tried)
        cand = rng.uniform(-1.0, 1.0, (m, 2))
        tried += m
        s = sdf_oracle(shape, frame, cand)
        keep = (np.abs(s) >= lo) & (np.abs(s) < hi)
        # The near band is open at 0.03 but closed at 0 so |s|=0 lands somewhere.
        if lo == 0.0:
            keep = (np.abs(s) < hi)
        if keep.any():
            pts.append(cand[keep])
            vals.append(s[keep])
            got += int(keep.sum())
    if got == 0:
        return np.empty((0, 2)), np.empty(0)
    pts = np.concatenate(pts)[:want]
    vals = np.concatenate(vals)[:want]
    return pts, vals


def sample_sdf_points(shape, n, rng, frame="viewer"):
    """Draw n (point, sdf) pairs banded by distance to the surface.

    Counts follow band_counts(n). A band that cannot be filled within
    the rejection cap is topped up from the nearest band that can,
    with a logged warning.
    """
    if n < 10:
        raise ConfigError(f"sample_sdf_points needs n >= 10, got {n}")
    counts = band_counts(n)
    filled = []
    for (lo, hi), want in zip(SDF_BANDS, counts):
        filled.append(_fill_band(shape, lo, hi, want, rng, frame))
    # Top up shortfalls from adjacent bands, nearest first.
    fallback_order = {0: (1, 2), 1: (0, 2), 2: (1, 0)}
    for idx, want in enumerate(counts):
        short = want - len(filled[idx][1])
        if short <= 0:
            continue
        logger.warning(
            "sdf band %s short by %d points for class %d; using nearest band",
            SDF_BANDS[idx], short, shape.class_id)
        for alt in fallback_order[idx]:
            if short <= 0:
                break
            lo, hi = SDF_BANDS[alt]
            extra = _fill_band(shape, lo, hi, short, rng, frame)
            if len(extra[1]):
                filled[idx] = (np.concatenate([filled[idx][0], extra[0]]),
                               np.concatenate([filled[idx][1], extra[1]]))
                short = want - len(filled[idx][1])
    points = np.concatenate([f[0] for f in filled])
    values = np.concatenate([f[1] for f in filled])
    if len(values) != n:
        raise ConfigError(
            f"could not sample {n} sdf points for class {shape.class_id}")
    return points, values


def extract_boundary_points(source, resolution=256, count=None, frame="viewer"):
    """Points near the zero level set of a shape or a predicted SDF grid.

    source is a ShapeSpec (the exact field is sampled on a
    resolution x resolution pixel grid) or a 2D SDF grid laid out as
    pixel_centers. Crossings are found by linear interpolation along
    sign-changing grid edges, then strided down to `count` in scan
    order. Returns an (m, 2) array, or None when the level set is
    empty (a degenerate prediction; metrics score it as no surface).
    """
    if isinstance(source, ShapeSpec):
        if resolution < 64:
            raise ConfigError(f"boundary grid resolution must be >= 64, got {resolution}")
        grid = sdf_oracle(
            source, frame, pixel_centers(resolution).reshape(-1, 2)
        ).reshape(resolution, resolution)
    else:
        grid = np.asarray(source, dtype=np.float64)
        if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:
            raise ConfigError(f"sdf grid must be square 2D, got shape {grid.shape}")
        resolution = grid.shape[0]
        if resolution < 64:
            raise ConfigError(f"boundary grid resolution must be >= 64, got {resolution}")
    h = 2.0 / resolution
    coords = -1.0 + (np.arange(resolution) + 0.5) * h

    chunks = []
    zi, zj = np.nonzero(grid == 0.0)
    if len(zi):
        chunks.append(np.stack([coords[zj], coords[zi]], axis=-1))
    s1, s2 = grid[:, :-1], grid[:, 1:]
    ii, jj = np.nonzero(s1 * s2 < 0.0)
    if len(ii):
        a, b = s1[ii, jj], s2[ii, jj]
        t = a / (a - b)
        chunks.append(np.stack([coords[jj] + t * h, coords[ii]], axis=-1))
    s1, s2 = grid[:-1, :], grid[1:, :]
    ii, jj = np.nonzero(s1 * s2 < 0.0)
    if len(ii):
        a, b = s1[ii, jj], s2[ii, jj]
        t = a / (a - b)
        chunks.append(np.stack([coords[jj], coords[ii] + t * h], axis=-1))

    if not chunks:
        return None
    pts = np.concatenate(chunks)
    if count is None or count >= len(pts):
        return pts
    idx = np.floor(np.arange(count) * len(pts) / count).astype(int)
    return pts[idx]
