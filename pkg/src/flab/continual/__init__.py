"""Exposure scheduling, exemplar memory, and the continual learners."""

from flab.continual.schedule import Exposure, ExposureSchedule, schedule_repeated, schedule_single
from flab.continual.memory import ExemplarMemory, herding_order, slot_quota
from flab.continual.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from flab.continual.ncm import class_means, ncm_classify
from flab.continual.learners import (
    LEARNER_KINDS,
    ContinualLearner,
    class_balance_weights,
    make_learner,
)

__all__ = [
    "Exposure", "ExposureSchedule", "schedule_single", "schedule_repeated",
    "ExemplarMemory", "slot_quota", "herding_order",
    "save_checkpoint", "load_checkpoint", "read_checkpoint",
    "class_means", "ncm_classify",
    "ContinualLearner", "make_learner", "LEARNER_KINDS", "class_balance_weights",
]
