"""Loss values on hand-computed fixtures plus gradient verification."""

import time

import numpy as np
import pytest

from flab.errors import ConfigError, DegenerateBatchError
from flab.nn.gradcheck import grad_check
from flab.nn.layers import Linear, Sequential
from flab.nn.losses import (SDF_NEAR_BAND, SDF_NEAR_WEIGHT, bce_elements,
                            mse_loss, sigmoid_bce, stable_sigmoid,
                            weighted_l1_sdf_loss,
                            weighted_softmax_cross_entropy)
from flab.rng import RngStream


def test_cross_entropy_uniform_logits():
    loss, grad = weighted_softmax_cross_entropy(
        np.zeros((1, 2)), np.array([0]), np.ones(1))
    assert loss == pytest.approx(np.log(2.0), abs=1e-15)
    assert np.allclose(grad, [[-0.5, 0.5]])


def test_cross_entropy_weights_scale_per_sample_terms():
    logits = RngStream(0).normal(size=(4, 3))
    labels = np.array([0, 1, 2, 1])
    base, gbase = weighted_softmax_cross_entropy(logits, labels, np.ones(4))
    dbl, gdbl = weighted_softmax_cross_entropy(logits, labels, 2 * np.ones(4))
    assert dbl == pytest.approx(2 * base, rel=1e-12)
    assert np.allclose(gdbl, 2 * gbase)


def test_cross_entropy_rejects_bad_inputs():
    with pytest.raises(ConfigError):
        weighted_softmax_cross_entropy(np.zeros((2, 2)), np.array([0, 2]), np.ones(2))
    with pytest.raises(ConfigError):
        weighted_softmax_cross_entropy(np.zeros((2, 2)), np.array([0, 1]),
                                       np.array([1.0, -1.0]))
    with pytest.raises(DegenerateBatchError):
        weighted_softmax_cross_entropy(np.zeros((2, 2)), np.array([0, 1]), np.zeros(2))


def test_mse_fixture():
    loss, _ = mse_loss(np.zeros((2, 2)), 0.5 * np.ones((2, 2)))
    assert loss == pytest.approx(0.25, abs=1e-15)


def test_sigmoid_bce_fixture():
    # logit 0 vs any target gives ln 2.
    loss, grad = sigmoid_bce(np.zeros((1, 1)), np.array([[1.0]]))
    assert loss == pytest.approx(np.log(2.0), abs=1e-15)
    assert grad[0, 0] == pytest.approx(-0.5, abs=1e-15)


def test_bce_elements_gradient_is_sigmoid_minus_target():
    logits = np.array([[-3.0, 0.5, 40.0]])
    targets = np.array([[0.2, 1.0, 0.0]])
    _, grad = bce_elements(logits, targets)
    assert np.allclose(grad, stable_sigmoid(logits) - targets, atol=1e-12)


def test_bce_elements_soft_target_value():
    # Distillation fixture: p = q = 0.8 -> the BCE equals the entropy of 0.8.
    z = np.log(4.0)  # sigmoid(z) = 0.8
    per_elt, _ = bce_elements(np.array([[z]]), np.array([[0.8]]))
    want = -(0.8 * np.log(0.8) + 0.2 * np.log(0.2))
    assert per_elt[0, 0] == pytest.approx(want, abs=1e-12)
    assert per_elt[0, 0] == pytest.approx(0.5004, abs=5e-5)


def test_bce_is_stable_at_huge_logits():
    loss, grad = sigmoid_bce(np.array([[800.0, -800.0]]), np.array([[1.0, 0.0]]))
    assert np.isfinite(loss) and loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(grad))


def test_weighted_l1_band_boundary_weights():
    # |s| = 0.01 sits inside the near band (weight 4); just outside is 1.
    pred = np.zeros(3)
    gt = np.array([SDF_NEAR_BAND, np.nextafter(SDF_NEAR_BAND, 1.0), 0.5])
    loss, _ = weighted_l1_sdf_loss(pred, gt)
    want = (SDF_NEAR_WEIGHT * gt[0] + 1.0 * gt[1] + 1.0 * gt[2]) / 3
    assert loss == pytest.approx(want, rel=1e-12)


def test_weighted_l1_inside_band_scales_by_four():
    pred = np.array([0.02])
    near, _ = weighted_l1_sdf_loss(pred, np.array([0.005]))
    far, _ = weighted_l1_sdf_loss(pred, np.array([0.035]))
    assert near == pytest.approx(SDF_NEAR_WEIGHT * abs(0.02 - 0.005), rel=1e-12)
    assert far == pytest.approx(abs(0.02 - 0.035), rel=1e-12)


def _loss_model(out_dim):
    return Sequential([Linear(5, 4, rng=RngStream(20)),
                       Linear(4, out_dim, rng=RngStream(21))], feature_tap=0)


def test_all_losses_gradcheck_under_budget():
    """Finite-difference check of every loss through a small model."""
    t0 = time.monotonic()
    x = RngStream(22).normal(size=(4, 5))
    rng = RngStream(23)
    labels = np.array([0, 2, 1, 0])
    weights = np.array([0.5, 2.0, 1.0, 1.5])
    mse_target = rng.normal(size=(4, 3))
    bce_target = (rng.uniform(size=(4, 3)) > 0.4).astype(float)
    # Keep L1 targets away from the kink and the band edge.
    l1_target = rng.normal(0, 0.2, size=(4, 3))

    cases = {
        "weighted_ce": lambda out: weighted_softmax_cross_entropy(out, labels, weights),
        "mse": lambda out: mse_loss(out, mse_target),
        "sigmoid_bce": lambda out: sigmoid_bce(out, bce_target),
        "weighted_l1": lambda out: weighted_l1_sdf_loss(out, l1_target),
    }
    for name, fn in cases.items():
        report = grad_check(_loss_model(3), fn, x)
        assert report.passed, (name, report.max_rel_error, report.per_param)
        assert report.max_rel_error <= 1e-4, name
    assert time.monotonic() - t0 < 30.0
