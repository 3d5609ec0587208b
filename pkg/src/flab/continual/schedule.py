"""Learning-exposure schedules.

An exposure is a small set of classes shown together. Single mode
walks a shuffled class list once; repeated mode concatenates several
passes over the same shuffled list, chunks them, and permutes the
resulting exposure order, so each class recurs `repetitions` times at
scattered positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from flab.errors import ConfigError
from flab.rng import SCHEDULE, RngStream


@dataclass(frozen=True)
class Exposure:
    index: int
    class_ids: tuple
    sample_rule: str = "all"        # "all" | "with_replacement"
    sample_k: Optional[int] = None  # draws per class under with_replacement


@dataclass
class ExposureSchedule:
    exposures: list = field(default_factory=list)
    repetitions: int = 1
    seed: int = 0

    def __len__(self):
        return len(self.exposures)

    def __iter__(self):
        return iter(self.exposures)

    def class_multiset(self):
        out = {}
        for exp in self.exposures:
            for c in exp.class_ids:
                out[c] = out.get(c, 0) + 1
        return out


def _chunk(seq, size):
    return [tuple(seq[i:i + size]) for i in range(0, len(seq), size)]


def schedule_single(classes, per_exposure, seed=0):
    """Each class exactly once: shuffle, then chunk into exposures."""
    classes = list(classes)
    if not classes:
        raise ConfigError("schedule needs at least one class")
    if per_exposure < 1:
        raise ConfigError(f"per_exposure must be >= 1, got {per_exposure}")
    rng = RngStream(seed, (SCHEDULE, 0))
    order = [classes[i] for i in rng.permutation(len(classes))]
    exposures = [Exposure(index=i, class_ids=ids)
                 for i, ids in enumerate(_chunk(order, per_exposure))]
    return ExposureSchedule(exposures=exposures, repetitions=1, seed=seed)


def schedule_repeated(classes, per_exposure, repetitions, seed=0, sample_k=None):
    """Each class `repetitions` times, exposure order permuted.

    The pool is `repetitions` copies of one shuffled class order;
    chunking that never puts a class twice in one exposure as long as
    per_exposure <= |classes|. sample_k switches every exposure to
    drawing that many examples per class with replacement.
    """
    classes = list(classes)
    if not classes:
        raise ConfigError("schedule needs at least one class")
    if repetitions < 1:
        raise ConfigError(f"repetitions must be >= 1, got {repetitions}")
    if per_exposure < 1 or per_exposure > len(classes):
        raise ConfigError(
            f"per_exposure must be in [1, {len(classes)}], got {per_exposure}")
    order_rng = RngStream(seed, (SCHEDULE, 0))
    order = [classes[i] for i in order_rng.permutation(len(classes))]
    pool = order * repetitions
    chunks = _chunk(pool, per_exposure)
    perm_rng = RngStream(seed, (SCHEDULE, 1))
    perm = perm_rng.permutation(len(chunks))
    rule = "all" if sample_k is None else "with_replacement"
    exposures = [Exposure(index=i, class_ids=chunks[j], sample_rule=rule,
                          sample_k=sample_k)
                 for i, j in enumerate(perm)]
    return ExposureSchedule(exposures=exposures, repetitions=repetitions, seed=seed)
