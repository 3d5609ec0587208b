"""Minimal deterministic neural-network core.

Dense layers with explicit forward caches and hand-written backward
passes, per-sample-weighted losses, SGD/Adam optimizers, and a
finite-difference gradient checker. Fixed layer menu, CPU only.
"""

from flab.nn.layers import (
    Conv2d,
    Flatten,
    ForwardResult,
    Layer,
    Linear,
    ReLU,
    Sequential,
    Sigmoid,
    Tanh,
)
from flab.nn.losses import (
    bce_elements,
    mse_loss,
    sigmoid_bce,
    weighted_l1_sdf_loss,
    weighted_softmax_cross_entropy,
)
from flab.nn.optim import SGD, Adam, make_optimizer
from flab.nn.gradcheck import grad_check

__all__ = [
    "Layer", "Linear", "ReLU", "Sigmoid", "Tanh", "Flatten", "Conv2d",
    "Sequential", "ForwardResult",
    "weighted_softmax_cross_entropy", "sigmoid_bce", "bce_elements", "mse_loss",
    "weighted_l1_sdf_loss",
    "SGD", "Adam", "make_optimizer", "grad_check",
]
