"""Continual learners: weighting, memory flows, distillation, bias fixes.

Exposure data dicts come from the shared tiny dataset so every
learner trains on real rendered sprites, just very few of them.
"""

from types import SimpleNamespace

import numpy as np
import pytest

from flab.continual.learners import (DEFAULT_HYPER, class_balance_weights,
                                     make_learner)
from flab.errors import ConfigError
from flab.rng import RngStream
from flab.tasks import AutoencoderTask, ClassificationTask

HYPER = {"epochs": 2, "batch_size": 8, "memory_budget": 12, "lr": 0.05,
         "finetune_epochs": 1, "proxy_exemplars_per_class": 4}


def _task():
    return ClassificationTask(hidden=(24, 16))


def _exposures(ds):
    """Three single-class exposures in id order."""
    return [{c: list(ds.train[c])} for c in ds.classes]


def _params(learner):
    return {k: v.copy() for k, v in learner.model.parameters().items()}


def test_class_balance_weights_fixture():
    labels = [0] * 3 + [1] * 2
    w = class_balance_weights(labels, {0: 90, 1: 10})
    assert np.allclose(w[:3], 100 / (2 * 90))
    assert np.allclose(w[3:], 100 / (2 * 10))
    assert w[3] == pytest.approx(5.0)
    # Balanced pool: all ones.
    assert np.allclose(class_balance_weights([0, 1], {0: 5, 1: 5}), 1.0)
    with pytest.raises(ConfigError):
        class_balance_weights([0], {})
    with pytest.raises(ConfigError):
        class_balance_weights([0], {0: 0})
    with pytest.raises(ConfigError):
        class_balance_weights([7], {0: 5})


def test_make_learner_validation():
    with pytest.raises(ConfigError):
        make_learner("sgd_only", _task(), rng=RngStream(0))
    with pytest.raises(ConfigError):
        make_learner("naive", _task())  # rng is required
    with pytest.raises(ConfigError):
        make_learner("yass", AutoencoderTask(), rng=RngStream(0))
    with pytest.raises(ConfigError):
        make_learner("ncm_proxy", _task(), rng=RngStream(0))


def test_naive_tracks_seen_in_first_seen_order(tiny_dataset):
    learner = make_learner("naive", _task(), HYPER, rng=RngStream(3))
    learner.observe(0, {2: tiny_dataset.train[2]})
    learner.observe(1, {0: tiny_dataset.train[0]})
    assert learner.seen == [2, 0]
    assert learner.model.layers[-1].out_features == 2
    assert learner.metric_name == "accuracy"
    out = learner.eval_per_class({c: tiny_dataset.test[c] for c in (0, 2)})
    assert set(out) == {0, 2}
    assert all(0.0 <= v <= 1.0 for v in out.values())
    assert learner.total_steps == 2 * (2 * 2)  # 2 exposures x 2 epochs x 2 batches


def test_predict_labels_maps_columns_to_class_ids():
    learner = make_learner("naive", _task(), HYPER, rng=RngStream(4))
    learner.seen = [5, 2]
    logits = np.array([[0.1, 3.0], [4.0, -1.0]])
    learner.model = SimpleNamespace(forward=lambda X: SimpleNamespace(outputs=logits))
    assert learner.predict_labels(np.zeros((2, 32, 32))).tolist() == [2, 5]


def test_budget_zero_exemplars_matches_naive(tiny_dataset):
    """With no memory slots the exemplar learner is exactly Naive."""
    hyper = dict(HYPER, memory_budget=0)
    a = make_learner("naive", _task(), hyper, rng=RngStream(7))
    b = make_learner("classifier_exemplars", _task(), hyper, rng=RngStream(7))
    for t, data in enumerate(_exposures(tiny_dataset)):
        a.observe(t, data)
        b.observe(t, data)
        pa, pb = _params(a), _params(b)
        assert all(np.array_equal(pa[k], pb[k]) for k in pa)


def test_yass_weighting_changes_training(tiny_dataset):
    a = make_learner("classifier_exemplars", _task(), HYPER, rng=RngStream(8))
    b = make_learner("yass", _task(), HYPER, rng=RngStream(8))
    assert b.use_wg and not a.use_wg
    # 5 new examples vs 12 memory exemplars: an unbalanced pool, so
    # the weighted-gradient trajectory diverges from the plain one.
    first = {0: tiny_dataset.train[0]}
    second = {1: tiny_dataset.train[1][:5]}
    for t, data in enumerate([first, second]):
        a.observe(t, data)
        b.observe(t, data)
    pa, pb = _params(a), _params(b)
    assert any(not np.array_equal(pa[k], pb[k]) for k in pa)


def test_exemplar_memory_fills_after_training(tiny_dataset):
    learner = make_learner("classifier_exemplars", _task(), HYPER, rng=RngStream(9))
    learner.observe(0, {0: tiny_dataset.train[0]})
    assert learner.memory.sizes() == {0: 12}
    learner.observe(1, {1: tiny_dataset.train[1]})
    assert learner.memory.sizes() == {0: 6, 1: 6}
    assert len(learner.memory) == 12


def test_gdumb_is_episodic(tiny_dataset):
    """Corrupting carried parameters must not affect the next exposure."""
    a = make_learner("gdumb", _task(), HYPER, rng=RngStream(10))
    b = make_learner("gdumb", _task(), HYPER, rng=RngStream(10))
    data = _exposures(tiny_dataset)
    a.observe(0, data[0])
    b.observe(0, data[0])
    for v in a.model.parameters().values():
        v += 100.0  # stale parameters; episodic retrain must erase this
    a.observe(1, data[1])
    b.observe(1, data[1])
    pa, pb = _params(a), _params(b)
    assert all(np.array_equal(pa[k], pb[k]) for k in pa)


def test_gdumbpp_carries_parameters(tiny_dataset):
    a = make_learner("gdumbpp", _task(), HYPER, rng=RngStream(11))
    b = make_learner("gdumbpp", _task(), HYPER, rng=RngStream(11))
    data = _exposures(tiny_dataset)
    a.observe(0, data[0])
    b.observe(0, data[0])
    for v in a.model.parameters().values():
        v += 0.5
    a.observe(1, data[1])
    b.observe(1, data[1])
    pa, pb = _params(a), _params(b)
    assert any(not np.array_equal(pa[k], pb[k]) for k in pa)


def test_gdumb_needs_nonzero_budget(tiny_dataset):
    learner = make_learner("gdumb", _task(), dict(HYPER, memory_budget=0),
                           rng=RngStream(12))
    with pytest.raises(ConfigError, match="empty exemplar memory"):
        learner.observe(0, {0: tiny_dataset.train[0]})


def test_icarl_distillation_fixture():
    """Matched sigmoids at p=q=0.8 give the textbook BCE value per sample."""
    learner = make_learner("icarl", _task(), HYPER, rng=RngStream(13))
    learner.seen = [0, 1]
    z = np.log(4.0)  # sigmoid(z) = 0.8
    prev = SimpleNamespace(forward=lambda X: SimpleNamespace(outputs=np.array([[z]])))
    loss_fn = learner._distill_loss_fn(1, prev, classification="sigmoid")
    outputs = np.array([[z, 800.0]])  # new-class logit saturated: zero cls loss
    loss, grad = loss_fn(outputs, np.array([1]), np.array([0]), None)
    want = -(0.8 * np.log(0.8) + 0.2 * np.log(0.2))
    assert loss == pytest.approx(want, abs=1e-6)
    assert grad.shape == (1, 2)
    assert grad[0, 0] == pytest.approx(0.0, abs=1e-12)  # sigmoid matches target


def test_icarl_runs_and_uses_ncm(tiny_dataset):
    learner = make_learner("icarl", _task(), HYPER, rng=RngStream(14))
    data = _exposures(tiny_dataset)
    learner.observe(0, data[0])
    learner.observe(1, data[1])
    assert learner.memory.sizes() == {0: 6, 1: 6}
    preds = learner.predict_labels(np.stack([e.image for e in tiny_dataset.test[0][:4]]))
    assert set(preds.tolist()) <= {0, 1}
    out = learner.eval_per_class({c: tiny_dataset.test[c] for c in (0, 1)})
    assert set(out) == {0, 1}


def test_bic_fold_is_exact(tiny_dataset):
    learner = make_learner("bic", _task(), HYPER, rng=RngStream(15))
    learner.seen = [0, 1, 2]
    learner.model = learner.task.build_model(RngStream(1, (1, 0)), num_outputs=3)
    X = np.stack([e.image for e in tiny_dataset.test[0][:5]])
    before = learner.model.forward(X).outputs.copy()
    alpha, beta = 1.7, -0.3
    learner.fold_bias(alpha, beta, old_count=1)
    after = learner.model.forward(X).outputs
    assert np.allclose(after[:, :1], before[:, :1], atol=1e-12)
    assert np.allclose(after[:, 1:], alpha * before[:, 1:] + beta, atol=1e-9)


def test_bic_correction_deflates_inflated_new_logits():
    learner = make_learner("bic", _task(), dict(HYPER, bic_steps=400),
                           rng=RngStream(16))
    learner.seen = [0, 1, 2]
    rng = np.random.default_rng(5)
    n = 40
    labels = rng.integers(0, 2, size=n)  # all old classes
    logits = np.full((n, 3), -1.0)
    logits[np.arange(n), labels] = 2.0
    logits[:, 2] = 5.0  # new class always wins before correction
    val = [SimpleNamespace(image=np.zeros((2, 2)), label=int(l)) for l in labels]
    learner.model = SimpleNamespace(
        forward=lambda X: SimpleNamespace(outputs=logits[:len(X)]))
    alpha, beta = learner.fit_bias_correction(val, old_count=2)
    assert alpha * 5.0 + beta < 2.0  # corrected new logit loses to true class
    with pytest.raises(ConfigError):
        learner.fit_bias_correction([], old_count=2)


def test_bic_end_to_end(tiny_dataset):
    learner = make_learner("bic", _task(), HYPER, rng=RngStream(17))
    data = _exposures(tiny_dataset)
    for t, d in enumerate(data):
        learner.observe(t, d)
    assert learner.seen == [0, 1, 2]
    assert len(learner.memory) == 12
    out = learner.eval_per_class({c: tiny_dataset.test[c] for c in (0, 1, 2)})
    assert set(out) == {0, 1, 2}


def test_e2eil_finetunes_after_first_exposure(tiny_dataset):
    learner = make_learner("e2eil", _task(), HYPER, rng=RngStream(18))
    data = _exposures(tiny_dataset)
    learner.observe(0, data[0])
    first = learner.total_steps
    assert first == 2 * 2  # no finetune on the first exposure
    learner.observe(1, data[1])
    # 12 new + 12 memory = 24 -> 3 batches x 2 epochs, then a 1-epoch
    # finetune over the 12 rebalanced exemplars (2 batches).
    assert learner.total_steps == first + 6 + 2


def test_e2eil_finetune_can_be_disabled(tiny_dataset):
    hyper = dict(HYPER, finetune_epochs=0)
    learner = make_learner("e2eil", _task(), hyper, rng=RngStream(19))
    data = _exposures(tiny_dataset)
    learner.observe(0, data[0])
    learner.observe(1, data[1])
    assert learner.total_steps == 4 + 6


def test_proxy_never_reads_labels(tiny_dataset):
    task_a, task_b = AutoencoderTask(), AutoencoderTask()
    a = make_learner("ncm_proxy", task_a, HYPER, rng=RngStream(20))
    b = make_learner("ncm_proxy", task_b, HYPER, rng=RngStream(20))
    assert a.predicts_labels and a.metric_name == "accuracy"

    data = _exposures(tiny_dataset)
    relabeled = []
    for d in data:
        swapped = {}
        for c, exs in d.items():
            clones = [SimpleNamespace(image=e.image, label=(e.label + 1) % 3)
                      for e in exs]
            swapped[c] = clones
        relabeled.append(swapped)
    for t in range(3):
        a.observe(t, data[t])
        b.observe(t, relabeled[t])
    pa, pb = _params(a), _params(b)
    assert all(np.array_equal(pa[k], pb[k]) for k in pa)


def test_proxy_store_is_fixed_at_first_sight(tiny_dataset):
    learner = make_learner("ncm_proxy", AutoencoderTask(), HYPER, rng=RngStream(21))
    data = _exposures(tiny_dataset)
    learner.observe(0, data[0])
    stored = list(learner.store[0])
    assert len(stored) == 4
    learner.observe(1, {0: tiny_dataset.train[0], 1: tiny_dataset.train[1]})
    assert learner.store[0] == stored  # never re-picked
    preds = learner.predict_labels(np.stack([e.image for e in tiny_dataset.test[1][:3]]))
    assert set(preds.tolist()) <= {0, 1}


def test_proxy_replay_pool_arithmetic(tiny_dataset):
    hyper = dict(HYPER, batch_size=4, proxy_replay=True)
    learner = make_learner("ncm_proxy", AutoencoderTask(), hyper, rng=RngStream(24))
    plain = make_learner("ncm_proxy", AutoencoderTask(), dict(hyper, proxy_replay=False),
                         rng=RngStream(24))
    data = _exposures(tiny_dataset)
    # Pools: 12, then 12 + one stored pack (4), then 12 + two packs (8).
    learner.observe(0, data[0])
    assert learner.total_steps == 6
    learner.observe(1, data[1])
    assert learner.total_steps == 6 + 8
    learner.observe(2, data[2])
    assert learner.total_steps == 6 + 8 + 10
    # Re-exposed classes contribute current data only, not their pack too.
    learner.observe(3, {0: tiny_dataset.train[0]})
    assert learner.total_steps == 6 + 8 + 10 + 10
    for t in range(3):
        plain.observe(t, data[t])
    assert plain.total_steps == 18


def test_proxy_short_class_warns(tiny_dataset, caplog):
    import logging
    learner = make_learner("ncm_proxy", AutoencoderTask(),
                           dict(HYPER, proxy_exemplars_per_class=99),
                           rng=RngStream(22))
    with caplog.at_level(logging.WARNING, logger="flab.continual"):
        learner.observe(0, {0: tiny_dataset.train[0]})
    assert any("exemplar candidates" in rec.message for rec in caplog.records)
    assert len(learner.store[0]) == 12


def test_default_hyper_keys_are_complete():
    learner = make_learner("naive", _task(), None, rng=RngStream(23))
    assert learner.hyper == DEFAULT_HYPER
    assert learner.hyper["epochs"] == 5 and learner.hyper["lr"] == 0.05


def test_training_rejects_unseen_labels(tiny_dataset):
    learner = make_learner("naive", _task(), HYPER, rng=RngStream(24))
    learner.observe(0, {0: tiny_dataset.train[0]})
    mixed = tiny_dataset.train[0][:2] + tiny_dataset.train[2][:2]
    loss_fn = learner._default_loss_fn(mixed)
    logits = np.zeros((4, 1))
    with pytest.raises(ConfigError, match="never exposed"):
        loss_fn(logits, np.array([0, 0, 2, 2]), np.arange(4), None)
