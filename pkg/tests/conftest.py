"""Shared fixtures and hypothesis settings."""

import pytest
from hypothesis import HealthCheck, settings

from flab.data.dataset import make_dataset

settings.register_profile(
    "default",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def tiny_dataset():
    """3 classes, a handful of examples, with presampled SDF points."""
    return make_dataset({
        "num_classes": 3,
        "per_class_train": 12,
        "per_class_val": 3,
        "per_class_test": 6,
        "seed": 0,
        "points_per_example": 32,
    })
