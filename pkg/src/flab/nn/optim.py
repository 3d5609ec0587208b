"""SGD and Adam over flat parameter dicts.

Moment buffers are keyed like the parameters and updates happen in
place, so a model and its optimizer stay in sync across exposures.
"""

from __future__ import annotations

import numpy as np

from flab.errors import ConfigError, NumericError


class Optimizer:
    def __init__(self, lr):
        if lr <= 0:
            raise ConfigError(f"lr must be > 0, got {lr}")
        self.lr = float(lr)
        self.step_count = 0

    def step(self, params, grads):
        raise NotImplementedError

    @staticmethod
    def _check_finite(name, update):
        if not np.all(np.isfinite(update)):
            raise NumericError(f"non-finite update for {name}")


class SGD(Optimizer):
    def __init__(self, lr, momentum=0.0, weight_decay=0.0):
        super().__init__(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.buffers: dict[str, np.ndarray] = {}

    def step(self, params, grads):
        self.step_count += 1
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ConfigError(f"gradient shape mismatch for {name}")
            if self.weight_decay:
                g = g + self.weight_decay * p
            if self.momentum:
                buf = self.buffers.get(name)
                if buf is None or buf.shape != p.shape:
                    buf = np.zeros_like(p)
                buf = self.momentum * buf + g
                self.buffers[name] = buf
                g = buf
            update = self.lr * g
            self._check_finite(name, update)
            p -= update


class Adam(Optimizer):
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        super().__init__(lr)
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(eps)
        self.weight_decay = float(weight_decay)
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params, grads):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ConfigError(f"gradient shape mismatch for {name}")
            if self.weight_decay:
                g = g + self.weight_decay * p
            m = self.m.get(name)
            if m is None or m.shape != p.shape:
                m = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self.m[name], self.v[name] = m, v
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            self._check_finite(name, update)
            p -= update


def make_optimizer(kind, lr, momentum=0.0, weight_decay=0.0):
    if kind == "sgd":
        return SGD(lr, momentum=momentum, weight_decay=weight_decay)
    if kind == "adam":
        return Adam(lr, weight_decay=weight_decay)
    raise ConfigError(f"unknown optimizer {kind!r}")
