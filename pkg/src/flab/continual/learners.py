"""The continual learners.

Every learner consumes one exposure at a time through observe() and
can then score itself on the seen-class test split. Classifier heads
grow as classes appear; column order is first-seen order. GDumb is
episodic (fresh parameters every exposure, trained on memory alone);
everything else carries parameters forward.
"""

from __future__ import annotations

import logging

import numpy as np

from flab.analysis import extract_features
from flab.continual.memory import ExemplarMemory, slot_quota
from flab.continual.ncm import class_means, ncm_classify
from flab.errors import ConfigError
from flab.nn.losses import bce_elements, stable_sigmoid, weighted_softmax_cross_entropy
from flab.nn.optim import make_optimizer
from flab.rng import INIT, MEMORY, TRAIN
from flab.tasks import stack_images

logger = logging.getLogger("flab.continual")

DEFAULT_HYPER = {
    "epochs": 5,
    "lr": 0.05,
    "optimizer": "sgd",
    "momentum": 0.9,
    "weight_decay": 0.0,
    "batch_size": 32,
    "memory_budget": 200,
    "finetune_epochs": 5,
    "finetune_lr_scale": 0.1,
    "bic_val_fraction": 0.1,
    "bic_steps": 200,
    "bic_lr": 0.01,
    "proxy_exemplars_per_class": 20,
    "proxy_replay": False,
}


def _lut_columns(lut, targets):
    """Map raw labels to head columns; anything unseen is an error."""
    t = np.asarray(targets)
    if np.any(t < 0) or np.any(t >= len(lut)) or np.any(lut[np.clip(t, 0, len(lut) - 1)] < 0):
        raise ConfigError("batch contains a label never exposed")
    return lut[t]


def class_balance_weights(labels, pool_counts):
    """Per-sample weights equalizing each class's total gradient mass.

    w_i = N / (C * n_c(i)) with counts over the full training pool of
    the exposure, so a balanced pool yields all-ones.
    """
    labels = np.asarray(labels)
    if not pool_counts:
        raise ConfigError("class_balance_weights needs a nonempty pool")
    for c, n in pool_counts.items():
        if n < 1:
            raise ConfigError(f"class {c} has no samples in the pool")
    total = float(sum(pool_counts.values()))
    num_classes = len(pool_counts)
    try:
        w = np.array([total / (num_classes * pool_counts[int(lab)]) for lab in labels])
    except KeyError as exc:
        raise ConfigError(f"label {exc} outside the training pool") from exc
    return w


def run_epochs(model, task, pool, epochs, batch_size, opt, rng, loss_fn):
    """Shuffled minibatch epochs; returns optimizer steps taken."""
    if not pool:
        raise ConfigError("cannot train on an empty pool")
    n = len(pool)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            batch = [pool[int(i)] for i in idx]
            inputs, targets = task.make_batch(batch, rng)
            res = model.forward(inputs)
            _, grad = loss_fn(res.outputs, targets, idx, inputs)
            grads = model.backward(res, grad)
            opt.step(model.parameters(), grads)
    return opt.step_count


class ContinualLearner:
    """Shared plumbing: seen-class tracking, head growth, training loop."""

    kind = "naive"
    needs_classification = False
    has_memory = False

    def __init__(self, task, hyper=None, rng=None):
        if rng is None:
            raise ConfigError("learner needs an RngStream")
        if self.needs_classification and task.name != "classification":
            raise ConfigError(f"{self.kind} requires the classification task")
        self.task = task
        self.hyper = {**DEFAULT_HYPER, **(hyper or {})}
        self.rng = rng
        self.model = None
        self.seen = []      # class ids, first-seen order == head column order
        self.total_steps = 0
        self.memory = ExemplarMemory(self.hyper["memory_budget"]) if self.has_memory else None

    # -- bookkeeping ----------------------------------------------------
    @property
    def is_classifier(self):
        return self.task.name == "classification"

    @property
    def predicts_labels(self):
        """Whether evaluation goes through label prediction."""
        return self.is_classifier

    @property
    def metric_name(self):
        return "accuracy" if self.predicts_labels else self.task.metric

    def _register(self, data_by_class):
        for c in sorted(data_by_class):
            if c not in self.seen:
                self.seen.append(c)

    def _label_lut(self):
        lut = np.full(max(self.seen) + 1, -1, dtype=np.int64)
        for col, c in enumerate(self.seen):
            lut[c] = col
        return lut

    def _ensure_model(self, exposure_index):
        init_rng = self.rng.split(INIT, exposure_index)
        if self.is_classifier:
            if self.model is None:
                self.model = self.task.build_model(init_rng, num_outputs=len(self.seen))
            else:
                self.task.grow(self.model, len(self.seen), init_rng)
        elif self.model is None:
            self.model = self.task.build_model(init_rng)

    def _flat(self, data_by_class):
        return [e for c in sorted(data_by_class) for e in data_by_class[c]]

    def _default_loss_fn(self, pool, weights=None):
        if self.is_classifier:
            lut = self._label_lut()
            if weights is None:
                weights = np.ones(len(pool))

            def loss_fn(outputs, targets, idx, inputs):
                cols = _lut_columns(lut, targets)
                return self.task.loss(outputs, cols, weights[idx])
        else:
            def loss_fn(outputs, targets, idx, inputs):
                return self.task.loss(outputs, targets, None)
        return loss_fn

    def _train(self, pool, exposure_index, *, weights=None, loss_fn=None,
               epochs=None, lr_scale=1.0, stream_tag=0):
        hy = self.hyper
        if epochs is None:
            epochs = hy["epochs"]
        if loss_fn is None:
            loss_fn = self._default_loss_fn(pool, weights)
        opt = make_optimizer(hy["optimizer"], hy["lr"] * lr_scale,
                             momentum=hy["momentum"], weight_decay=hy["weight_decay"])
        rng = self.rng.split(TRAIN, exposure_index, stream_tag)
        self.total_steps += run_epochs(self.model, self.task, pool, epochs,
                                       hy["batch_size"], opt, rng, loss_fn)

    def _feature_fn(self):
        return lambda exs: extract_features(self.model, stack_images(exs))

    # -- inference and evaluation ----------------------------------------
    def predict_labels(self, images):
        """Softmax argmax mapped back to real class ids."""
        if not self.is_classifier:
            raise ConfigError("label prediction needs the classification task")
        res = self.model.forward(images)
        return np.array(self.seen)[np.argmax(res.outputs, axis=1)]

    def eval_per_class(self, test_by_class):
        if self.predicts_labels:
            out = {}
            for c in sorted(test_by_class):
                exs = test_by_class[c]
                if not exs:
                    raise ConfigError(f"class {c} has no test examples")
                preds = []
                for start in range(0, len(exs), 256):
                    preds.append(self.predict_labels(stack_images(exs[start:start + 256])))
                out[c] = float(np.mean(np.concatenate(preds) == c))
            return out
        return self.task.evaluate(self.model, test_by_class)

    def observe(self, exposure_index, data_by_class):
        raise NotImplementedError


class NaiveLearner(ContinualLearner):
    """Continuous training on each exposure's data alone."""

    kind = "naive"

    def observe(self, exposure_index, data_by_class):
        self._register(data_by_class)
        self._ensure_model(exposure_index)
        self._train(self._flat(data_by_class), exposure_index)


class ClassifierWithExemplarsLearner(ContinualLearner):
    """Continuous training on new data plus a random exemplar memory."""

    kind = "classifier_exemplars"
    needs_classification = True
    has_memory = True
    use_wg = False

    def observe(self, exposure_index, data_by_class):
        self._register(data_by_class)
        self._ensure_model(exposure_index)
        pool = self._flat(data_by_class) + self.memory.all_examples()
        weights = None
        if self.use_wg:
            counts = {}
            for e in pool:
                counts[e.label] = counts.get(e.label, 0) + 1
            weights = class_balance_weights([e.label for e in pool], counts)
        self._train(pool, exposure_index, weights=weights)
        self.memory.update_random(data_by_class, self.rng.split(MEMORY, exposure_index),
                                  exposure_index)


class YassLearner(ClassifierWithExemplarsLearner):
    """Random exemplars + weighted gradients over a continuous model."""

    kind = "yass"
    use_wg = True


class GDumbLearner(ContinualLearner):
    """Episodic: refresh memory, reinitialize, train on memory only.

    Init and batch-order streams do not depend on the exposure index,
    so the post-training parameters are a function of the memory
    content alone.
    """

    kind = "gdumb"
    has_memory = True

    def observe(self, exposure_index, data_by_class):
        self._register(data_by_class)
        self.memory.update_random(data_by_class, self.rng.split(MEMORY, exposure_index),
                                  exposure_index)
        pool = self.memory.all_examples()
        if not pool:
            raise ConfigError("gdumb has an empty exemplar memory")
        init_rng = self.rng.split(INIT, 0)
        if self.is_classifier:
            self.model = self.task.build_model(init_rng, num_outputs=len(self.seen))
        else:
            self.model = self.task.build_model(init_rng)
        self._train(pool, 0)


class GDumbPlusPlusLearner(ContinualLearner):
    """GDumb's data budget with a continuously carried representation."""

    kind = "gdumbpp"
    has_memory = True

    def observe(self, exposure_index, data_by_class):
        self._register(data_by_class)
        self.memory.update_random(data_by_class, self.rng.split(MEMORY, exposure_index),
                                  exposure_index)
        pool = self.memory.all_examples()
        if not pool:
            raise ConfigError("gdumbpp has an empty exemplar memory")
        self._ensure_model(exposure_index)
        self._train(pool, exposure_index)


class ICaRLLearner(ContinualLearner):
    """Sigmoid classification + distillation, herded exemplars, NCM inference."""

    kind = "icarl"
    needs_classification = True
    has_memory = True

    def _clone_frozen(self, exposure_index):
        frozen = self.task.build_model(self.rng.split(INIT, exposure_index, 99),
                                       num_outputs=len(self.seen))
        frozen.set_parameters(self.model.copy_parameters())
        return frozen

    def _distill_loss_fn(self, old_count, prev_model, classification="sigmoid"):
        lut = self._label_lut()

        def loss_fn(outputs, targets, idx, inputs):
            b, c = outputs.shape
            cols = _lut_columns(lut, targets)
            if classification == "sigmoid":
                # Per-class BCE over the new columns; old-class samples
                # carry all-zero new targets.
                new_cols = np.arange(old_count, c)
                t_new = (cols[:, None] == new_cols[None, :]).astype(np.float64)
                elems, g = bce_elements(outputs[:, old_count:], t_new)
                loss = float(elems.sum(axis=1).mean())
                grad = np.zeros_like(outputs)
                grad[:, old_count:] = g / b
            else:
                loss, grad = weighted_softmax_cross_entropy(outputs, cols, np.ones(b))
            if old_count:
                prev_logits = prev_model.forward(inputs).outputs
                soft = stable_sigmoid(prev_logits)
                elems, g = bce_elements(outputs[:, :old_count], soft)
                loss += float(elems.sum(axis=1).mean())
                grad = grad.copy()
                grad[:, :old_count] += g / b
            return loss, grad
        return loss_fn

    def observe(self, exposure_index, data_by_class):
        old_count = len(self.seen)
        prev_model = self._clone_frozen(exposure_index) if self.model is not None else None
        self._register(data_by_class)
        self._ensure_model(exposure_index)
        pool = self._flat(data_by_class) + self.memory.all_examples()
        self._train(pool, exposure_index,
                    loss_fn=self._distill_loss_fn(old_count, prev_model))
        self.memory.update_herding(data_by_class, self._feature_fn(), exposure_index)

    def predict_labels(self, images):
        feats = {}
        for c in self.memory.classes:
            exs = self.memory.per_class[c]
            if not exs:
                logger.warning("class %d has no exemplars; excluded from NCM", c)
                continue
            feats[c] = extract_features(self.model, stack_images(exs))
        if not feats:
            raise ConfigError("no exemplars available for NCM inference")
        means = class_means(feats)
        return ncm_classify(extract_features(self.model, images), means)


class BiCLearner(ICaRLLearner):
    """CE + distillation, then a two-parameter bias fix on new-class logits.

    The correction is fit on a held-out balanced validation slice and
    folded into the head's new columns, which is exact for an affine
    head.
    """

    kind = "bic"

    def _prospective_quotas(self):
        q = slot_quota(self.hyper["memory_budget"], len(self.seen))
        return {c: int(q[r]) for r, c in enumerate(self.seen)}

    def observe(self, exposure_index, data_by_class):
        old_count = len(self.seen)
        prev_model = self._clone_frozen(exposure_index) if self.model is not None else None
        self._register(data_by_class)
        self._ensure_model(exposure_index)

        # Hold out ~bic_val_fraction of each class's quota for stage 2.
        frac = self.hyper["bic_val_fraction"]
        quotas = self._prospective_quotas()
        val_rng = self.rng.split(MEMORY, exposure_index, 1)
        val = []

        def split_out(pool_c, quota):
            if not old_count or len(pool_c) < 2:
                return pool_c, []
            n_val = min(len(pool_c) - 1, max(1, round(frac * max(quota, 1))))
            idx = set(int(i) for i in val_rng.choice(len(pool_c), size=n_val, replace=False))
            held = [pool_c[i] for i in sorted(idx)]
            kept = [pool_c[i] for i in range(len(pool_c)) if i not in idx]
            return kept, held

        pool = []
        for c in sorted(data_by_class):
            kept, held = split_out(list(data_by_class[c]), quotas[c])
            pool.extend(kept)
            val.extend(held)
        for c in self.memory.classes:
            kept, held = split_out(list(self.memory.per_class[c]), quotas[c])
            pool.extend(kept)
            val.extend(held)

        self._train(pool, exposure_index,
                    loss_fn=self._distill_loss_fn(old_count, prev_model,
                                                  classification="softmax"))
        if old_count and val:
            alpha, beta = self.fit_bias_correction(val, old_count)
            self.fold_bias(alpha, beta, old_count)
        self.memory.update_herding(data_by_class, self._feature_fn(), exposure_index)

    def fit_bias_correction(self, val_examples, old_count):
        """Fit (alpha, beta) on new-class logits by CE over the held-out split."""
        if not val_examples:
            raise ConfigError("bias correction needs a nonempty validation split")
        images = stack_images(val_examples)
        lut = self._label_lut()
        labels = lut[np.array([e.label for e in val_examples])]
        logits = self.model.forward(images).outputs
        alpha, beta = 1.0, 0.0
        m = np.zeros(2)
        v = np.zeros(2)
        lr = self.hyper["bic_lr"]
        b1, b2, eps = 0.9, 0.999, 1e-8
        n = len(val_examples)
        onehot = np.zeros_like(logits)
        onehot[np.arange(n), labels] = 1.0
        for step in range(1, self.hyper["bic_steps"] + 1):
            z = logits.copy()
            z[:, old_count:] = alpha * z[:, old_count:] + beta
            z -= z.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            dz = (p - onehot) / n
            g = np.array([np.sum(dz[:, old_count:] * logits[:, old_count:]),
                          np.sum(dz[:, old_count:])])
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mh = m / (1 - b1 ** step)
            vh = v / (1 - b2 ** step)
            upd = lr * mh / (np.sqrt(vh) + eps)
            alpha -= upd[0]
            beta -= upd[1]
        return float(alpha), float(beta)

    def fold_bias(self, alpha, beta, old_count):
        head = self.model.layers[-1]
        head.params["W"][:, old_count:] *= alpha
        if head.has_bias:
            head.params["b"][old_count:] = alpha * head.params["b"][old_count:] + beta

    def predict_labels(self, images):
        res = self.model.forward(images)
        return np.array(self.seen)[np.argmax(res.outputs, axis=1)]


class E2EILLearner(ICaRLLearner):
    """CE + distillation with a balanced low-LR finetune and re-herding."""

    kind = "e2eil"

    def observe(self, exposure_index, data_by_class):
        old_count = len(self.seen)
        prev_model = self._clone_frozen(exposure_index) if self.model is not None else None
        self._register(data_by_class)
        self._ensure_model(exposure_index)
        pool = self._flat(data_by_class) + self.memory.all_examples()
        self._train(pool, exposure_index,
                    loss_fn=self._distill_loss_fn(old_count, prev_model,
                                                  classification="softmax"))
        self.memory.update_herding(data_by_class, self._feature_fn(), exposure_index)
        if old_count and self.hyper["finetune_epochs"]:
            balanced = self.memory.all_examples()
            self._train(balanced, exposure_index,
                        epochs=self.hyper["finetune_epochs"],
                        lr_scale=self.hyper["finetune_lr_scale"], stream_tag=1)
            # Exemplars are re-chosen under the finetuned features.
            self.memory.update_herding(data_by_class, self._feature_fn(), exposure_index)

    def predict_labels(self, images):
        res = self.model.forward(images)
        return np.array(self.seen)[np.argmax(res.outputs, axis=1)]


class NCMProxyLearner(ContinualLearner):
    """Label-free reconstruction backbone probed by an NCM classifier.

    Training never sees labels; a fixed per-class pack of exemplar
    images (default 20) provides class means at inference time. With
    proxy_replay the stored images (never their labels) of previously
    seen classes join each exposure's reconstruction pool, which keeps
    the encoder from collapsing onto the current class.
    """

    kind = "ncm_proxy"

    def __init__(self, task, hyper=None, rng=None):
        super().__init__(task, hyper, rng)
        if task.name == "classification":
            raise ConfigError("ncm_proxy wraps a reconstruction task, not classification")
        self.store = {}

    @property
    def predicts_labels(self):
        return True

    def observe(self, exposure_index, data_by_class):
        self._register(data_by_class)
        self._ensure_model(exposure_index)
        pool = self._flat(data_by_class)
        if self.hyper["proxy_replay"]:
            pool = pool + [e for c in sorted(self.store)
                           if c not in data_by_class for e in self.store[c]]
        self._train(pool, exposure_index)
        per_class = self.hyper["proxy_exemplars_per_class"]
        store_rng = self.rng.split(MEMORY, exposure_index)
        for c in sorted(data_by_class):
            if c in self.store:
                continue
            pool_c = data_by_class[c]
            take = min(per_class, len(pool_c))
            if take < per_class:
                logger.warning("class %d has only %d exemplar candidates", c, take)
            idx = sorted(store_rng.choice(len(pool_c), size=take, replace=False))
            self.store[c] = [pool_c[i] for i in idx]

    def predict_labels(self, images):
        feats = {}
        for c in sorted(self.store):
            if self.store[c]:
                feats[c] = extract_features(self.model, stack_images(self.store[c]))
            else:
                logger.warning("class %d has no proxy exemplars; excluded", c)
        if not feats:
            raise ConfigError("no exemplars available for NCM inference")
        means = class_means(feats)
        return ncm_classify(extract_features(self.model, images), means)


LEARNER_KINDS = {
    "naive": NaiveLearner,
    "classifier_exemplars": ClassifierWithExemplarsLearner,
    "yass": YassLearner,
    "gdumb": GDumbLearner,
    "gdumbpp": GDumbPlusPlusLearner,
    "icarl": ICaRLLearner,
    "bic": BiCLearner,
    "e2eil": E2EILLearner,
    "ncm_proxy": NCMProxyLearner,
}


def make_learner(kind, task, hyper=None, rng=None):
    if kind not in LEARNER_KINDS:
        raise ConfigError(f"unknown learner {kind!r}; choose from {sorted(LEARNER_KINDS)}")
    return LEARNER_KINDS[kind](task, hyper, rng)
