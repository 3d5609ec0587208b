"""Layers and the sequential model container.

Forward passes are pure: each layer returns (output, cache) and backward
consumes the cache, so a frozen model can serve concurrent read-only
passes. Parameters live in per-layer dicts and are addressed by
"layers.<i>.<name>" in the flat model view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from flab.errors import ConfigError, NumericError, UsageError


class Layer:
    """Base layer: stateless forward with explicit cache."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, grad_out):
        """Returns (grad_input, param_grads)."""
        raise NotImplementedError

    def out_dim(self, in_dim):
        return in_dim

    def describe(self) -> str:
        return type(self).__name__


def he_uniform(rng, fan_in, shape, dtype):
    """Fan-in-scaled uniform init (He-style, suits ReLU stacks)."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Layer):
    def __init__(self, in_dim, out_dim, bias=True, rng=None, dtype=np.float64):
        super().__init__()
        self.in_dim = int(in_dim)
        self.out_features = int(out_dim)
        self.has_bias = bool(bias)
        if rng is None:
            w = np.zeros((self.in_dim, self.out_features), dtype=dtype)
        else:
            w = he_uniform(rng, self.in_dim, (self.in_dim, self.out_features), dtype)
        self.params["W"] = w
        if self.has_bias:
            self.params["b"] = np.zeros(self.out_features, dtype=dtype)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ConfigError(
                f"Linear expects (B, {self.in_dim}) input, got {x.shape}"
            )
        y = x @ self.params["W"]
        if self.has_bias:
            y = y + self.params["b"]
        return y, x

    def backward(self, cache, grad_out):
        x = cache
        grads = {"W": x.T @ grad_out}
        if self.has_bias:
            grads["b"] = grad_out.sum(axis=0)
        return grad_out @ self.params["W"].T, grads

    def out_dim(self, in_dim):
        return self.out_features

    def describe(self):
        return f"Linear({self.in_dim},{self.out_features},bias={self.has_bias})"


class ReLU(Layer):
    # Subgradient at 0 is 0 (strict mask).
    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, cache, grad_out):
        return grad_out * cache, {}


class Sigmoid(Layer):
    def forward(self, x):
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        return y, y

    def backward(self, cache, grad_out):
        y = cache
        return grad_out * y * (1.0 - y), {}


class Tanh(Layer):
    def forward(self, x):
        y = np.tanh(x)
        return y, y

    def backward(self, cache, grad_out):
        y = cache
        return grad_out * (1.0 - y * y), {}


class Flatten(Layer):
    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, grad_out):
        return grad_out.reshape(cache), {}


class Conv2d(Layer):
    """Small same-dtype 2D convolution via im2col. Input (B, C, H, W)."""

    def __init__(self, in_ch, out_ch, ksize, stride=1, pad=0, rng=None, dtype=np.float64):
        super().__init__()
        self.in_ch, self.out_ch = int(in_ch), int(out_ch)
        self.k, self.stride, self.pad = int(ksize), int(stride), int(pad)
        fan_in = self.in_ch * self.k * self.k
        if rng is None:
            w = np.zeros((self.out_ch, fan_in), dtype=dtype)
        else:
            w = he_uniform(rng, fan_in, (self.out_ch, fan_in), dtype)
        self.params["W"] = w
        self.params["b"] = np.zeros(self.out_ch, dtype=dtype)

    def _col_geometry(self, h, w):
        ho = (h + 2 * self.pad - self.k) // self.stride + 1
        wo = (w + 2 * self.pad - self.k) // self.stride + 1
        return ho, wo

    def _im2col(self, x):
        b, c, h, w = x.shape
        if self.pad:
            x = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad), (self.pad, self.pad)))
        ho, wo = self._col_geometry(h, w)
        s = x.strides
        view = np.lib.stride_tricks.as_strided(
            x,
            shape=(b, c, self.k, self.k, ho, wo),
            strides=(s[0], s[1], s[2], s[3], s[2] * self.stride, s[3] * self.stride),
            writeable=False,
        )
        return view.reshape(b, c * self.k * self.k, ho * wo), (b, c, h, w, ho, wo)

    def forward(self, x):
        if x.ndim == 3 and self.in_ch == 1:
            x = x[:, None]  # single-channel images may arrive as (B, H, W)
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ConfigError(f"Conv2d expects (B,{self.in_ch},H,W), got {x.shape}")
        cols, geom = self._im2col(x)
        b, _, h, w, ho, wo = geom
        fan_in = self.in_ch * self.k * self.k
        # Flatten to one big matmul; the reshape materializes the strided view.
        flat = cols.transpose(0, 2, 1).reshape(b * ho * wo, fan_in)
        y = flat @ self.params["W"].T + self.params["b"]
        y = y.reshape(b, ho * wo, self.out_ch).transpose(0, 2, 1)
        return y.reshape(b, self.out_ch, ho, wo), (flat, geom)

    def backward(self, cache, grad_out):
        flat, geom = cache
        b, c, h, w, ho, wo = geom
        p = ho * wo
        g = grad_out.reshape(b, self.out_ch, p).transpose(0, 2, 1).reshape(b * p, -1)
        grads = {
            "W": g.T @ flat,
            "b": g.sum(axis=0),
        }
        dcols = (g @ self.params["W"]).reshape(b, p, -1).transpose(0, 2, 1)
        # col2im: scatter-add the column gradients back onto the image.
        hp, wp = h + 2 * self.pad, w + 2 * self.pad
        dx = np.zeros((b, c, hp, wp), dtype=grad_out.dtype)
        dcols = dcols.reshape(b, c, self.k, self.k, ho, wo)
        for ki in range(self.k):
            for kj in range(self.k):
                dx[:, :, ki : ki + ho * self.stride : self.stride,
                   kj : kj + wo * self.stride : self.stride] += dcols[:, :, ki, kj]
        if self.pad:
            dx = dx[:, :, self.pad : hp - self.pad, self.pad : wp - self.pad]
        return dx, grads

    def describe(self):
        return f"Conv2d({self.in_ch},{self.out_ch},k={self.k},s={self.stride},p={self.pad})"


@dataclass
class ForwardResult:
    outputs: np.ndarray
    features: np.ndarray
    caches: list
    token: int  # identity of the producing forward call


class Sequential:
    """Ordered layer stack with a designated feature tap.

    `feature_tap` is the index of the layer whose output is the feature
    representation; it must precede the final head layer.
    """

    def __init__(self, layers, feature_tap=None):
        self.layers = list(layers)
        if feature_tap is None:
            feature_tap = max(len(self.layers) - 2, 0)
        if not (0 <= feature_tap < len(self.layers) - 1) and len(self.layers) > 1:
            raise ConfigError(
                f"feature tap {feature_tap} must precede the final layer "
                f"(model has {len(self.layers)} layers)"
            )
        self.feature_tap = feature_tap
        self._token = 0

    def parameters(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                out[f"layers.{i}.{name}"] = value
        return out

    def set_parameters(self, values):
        for name, value in values.items():
            _, idx, pname = name.split(".")
            current = self.layers[int(idx)].params[pname]
            if current.shape != value.shape:
                raise ConfigError(f"parameter {name}: shape {value.shape} != {current.shape}")
            self.layers[int(idx)].params[pname] = value.astype(current.dtype)

    def copy_parameters(self):
        return {k: v.copy() for k, v in self.parameters().items()}

    def param_count(self):
        return sum(v.size for v in self.parameters().values())

    def topology(self) -> str:
        return "|".join(l.describe() for l in self.layers) + f"|tap={self.feature_tap}"

    def forward(self, batch) -> ForwardResult:
        x = batch
        caches = []
        features = None
        for i, layer in enumerate(self.layers):
            x, cache = layer.forward(x)
            caches.append(cache)
            if i == self.feature_tap:
                features = x
        if features is None:
            features = x
        if not np.all(np.isfinite(x)):
            bad = self._first_bad_layer(batch)
            raise NumericError(f"non-finite output at layer {bad}", layer_index=bad)
        self._token += 1
        return ForwardResult(outputs=x, features=features, caches=caches, token=self._token)

    def _first_bad_layer(self, batch):
        x = batch
        for i, layer in enumerate(self.layers):
            x, _ = layer.forward(x)
            if not np.all(np.isfinite(x)):
                return i
        return len(self.layers) - 1

    def backward(self, result: ForwardResult, grad_outputs, return_input_grad=False):
        """Gradients for all parameters given d(loss)/d(outputs).

        With return_input_grad, also returns d(loss)/d(batch) so a
        wrapping model can continue the chain upstream.
        """
        if not isinstance(result, ForwardResult) or len(result.caches) != len(self.layers):
            raise UsageError("backward needs the ForwardResult of a matching forward call")
        if result.token != self._token:
            raise UsageError("stale forward cache: another forward pass ran since")
        grads = {}
        g = grad_outputs
        for i in range(len(self.layers) - 1, -1, -1):
            g, layer_grads = self.layers[i].backward(result.caches[i], g)
            for name, value in layer_grads.items():
                grads[f"layers.{i}.{name}"] = value
        for name, value in grads.items():
            if not np.all(np.isfinite(value)):
                raise NumericError(f"non-finite gradient for {name}")
        if return_input_grad:
            return grads, g
        return grads
