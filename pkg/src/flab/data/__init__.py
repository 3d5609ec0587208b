"""Procedural 2D shape-sprite tasks with analytic SDF ground truth."""

from flab.data.shapes import (
    NUM_SHAPE_CLASSES,
    SHAPE_CLASS_NAMES,
    ShapeSpec,
    sample_shape,
    sdf_oracle,
)
from flab.data.sprites import (
    Example,
    extract_boundary_points,
    occupancy_from_sdf,
    pixel_centers,
    render_example,
    sample_sdf_points,
)
from flab.data.dataset import (
    DatasetSplit,
    load_dataset,
    load_idx,
    make_dataset,
    save_dataset,
)

__all__ = [
    "ShapeSpec", "SHAPE_CLASS_NAMES", "NUM_SHAPE_CLASSES",
    "sample_shape", "sdf_oracle",
    "Example", "render_example", "sample_sdf_points", "occupancy_from_sdf",
    "extract_boundary_points", "pixel_centers",
    "DatasetSplit", "make_dataset", "save_dataset", "load_dataset", "load_idx",
]
