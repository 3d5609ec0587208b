"""Model builders for the sprite tasks, plus the encoder/decoder SDF net.

All models are small dense stacks sized for 32x32 inputs on one CPU
core. The classifier's head can grow as new classes arrive; old
columns are preserved and new ones drawn from the given stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from flab.errors import ConfigError, UsageError
from flab.nn.layers import Conv2d, Flatten, Linear, ReLU, Sequential, Sigmoid


def build_classifier(num_classes, rng, input_dim=1024, hidden=(256, 128)):
    """MLP image classifier; features tapped after the last hidden ReLU."""
    layers = [Flatten()]
    prev = input_dim
    for i, width in enumerate(hidden):
        layers.append(Linear(prev, width, rng=rng.split(i)))
        layers.append(ReLU())
        prev = width
    layers.append(Linear(prev, num_classes, rng=rng.split(len(hidden))))
    return Sequential(layers, feature_tap=len(layers) - 2)


def build_conv_classifier(num_classes, rng, resolution=32,
                          channels=(16, 32, 64), head=128):
    """Strided-conv classifier; features tapped after the head ReLU.

    Three stride-2 stages halve the map each time, so the flatten
    width is channels[-1] * (resolution // 8) ** 2. Same 128-wide
    feature interface as the MLP, so probes and NCM don't care which
    architecture produced the run.
    """
    if resolution % 8 != 0:
        raise ConfigError(f"conv classifier needs resolution % 8 == 0, got {resolution}")
    kernels = (7, 5, 3)
    layers = []
    prev = 1
    for i, (ch, k) in enumerate(zip(channels, kernels)):
        layers.append(Conv2d(prev, ch, k, stride=2, pad=k // 2, rng=rng.split(i)))
        layers.append(ReLU())
        prev = ch
    flat = channels[-1] * (resolution // 8) ** 2
    layers += [Flatten(),
               Linear(flat, head, rng=rng.split(len(channels))), ReLU(),
               Linear(head, num_classes, rng=rng.split(len(channels) + 1))]
    return Sequential(layers, feature_tap=len(layers) - 2)


def grow_classifier_head(model, num_classes, rng):
    """Widen the final Linear to num_classes outputs, keeping old columns."""
    head = model.layers[-1]
    if not isinstance(head, Linear):
        raise UsageError("model head is not a Linear layer")
    old = head.out_features
    if num_classes < old:
        raise ConfigError(f"cannot shrink head from {old} to {num_classes}")
    if num_classes == old:
        return model
    new = Linear(head.in_dim, num_classes, bias=head.has_bias, rng=rng)
    new.params["W"][:, :old] = head.params["W"]
    if head.has_bias:
        new.params["b"][:old] = head.params["b"]
    model.layers[-1] = new
    return model


def build_autoencoder(rng, input_dim=1024, hidden=256, bottleneck=64):
    """Dense autoencoder with a sigmoid pixel head; features = bottleneck."""
    layers = [
        Flatten(),
        Linear(input_dim, hidden, rng=rng.split(0)), ReLU(),
        Linear(hidden, bottleneck, rng=rng.split(1)), ReLU(),
        Linear(bottleneck, hidden, rng=rng.split(2)), ReLU(),
        Linear(hidden, input_dim, rng=rng.split(3)), Sigmoid(),
    ]
    return Sequential(layers, feature_tap=4)


def build_silhouette_net(rng, input_dim=1024, hidden=256, bottleneck=64):
    """Mask predictor emitting per-pixel logits; features = bottleneck."""
    layers = [
        Flatten(),
        Linear(input_dim, hidden, rng=rng.split(0)), ReLU(),
        Linear(hidden, bottleneck, rng=rng.split(1)), ReLU(),
        Linear(bottleneck, hidden, rng=rng.split(2)), ReLU(),
        Linear(hidden, input_dim, rng=rng.split(3)),
    ]
    return Sequential(layers, feature_tap=4)


@dataclass
class SdfForwardResult:
    outputs: np.ndarray
    features: np.ndarray
    enc_result: object
    dec_result: object
    batch_shape: tuple


class SdfNet:
    """Image encoder + coordinate decoder predicting SDF values.

    forward((images, points)) evaluates the decoder at every query
    point, conditioning on the image feature by concatenation;
    forward(images) runs the encoder alone (feature extraction).
    """

    def __init__(self, encoder: Sequential, decoder: Sequential, feat_dim: int):
        self.encoder = encoder
        self.decoder = decoder
        self.feat_dim = int(feat_dim)

    def parameters(self):
        out = {}
        for prefix, part in (("encoder", self.encoder), ("decoder", self.decoder)):
            for name, value in part.parameters().items():
                out[f"{prefix}.{name}"] = value
        return out

    def set_parameters(self, values):
        enc, dec = {}, {}
        for name, value in values.items():
            prefix, rest = name.split(".", 1)
            if prefix == "encoder":
                enc[rest] = value
            elif prefix == "decoder":
                dec[rest] = value
            else:
                raise ConfigError(f"unknown parameter prefix in {name!r}")
        self.encoder.set_parameters(enc)
        self.decoder.set_parameters(dec)

    def copy_parameters(self):
        return {k: v.copy() for k, v in self.parameters().items()}

    def param_count(self):
        return self.encoder.param_count() + self.decoder.param_count()

    def topology(self) -> str:
        return f"enc[{self.encoder.topology()}]+dec[{self.decoder.topology()}]"

    def forward(self, batch):
        if not isinstance(batch, tuple):
            enc_res = self.encoder.forward(batch)
            return SdfForwardResult(
                outputs=enc_res.outputs, features=enc_res.outputs,
                enc_result=enc_res, dec_result=None, batch_shape=None)
        images, points = batch
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 3 or points.shape[-1] != 2:
            raise ConfigError(f"points must be (B, P, 2), got {points.shape}")
        enc_res = self.encoder.forward(images)
        feats = enc_res.outputs
        b, p = points.shape[0], points.shape[1]
        if len(feats) != b:
            raise ConfigError(f"{len(feats)} images vs {b} point sets")
        tiled = np.repeat(feats, p, axis=0)
        dec_in = np.concatenate([tiled, points.reshape(b * p, 2)], axis=1)
        dec_res = self.decoder.forward(dec_in)
        outputs = dec_res.outputs.reshape(b, p)
        return SdfForwardResult(outputs=outputs, features=feats,
                                enc_result=enc_res, dec_result=dec_res,
                                batch_shape=(b, p))

    def backward(self, result: SdfForwardResult, grad_outputs):
        if result.dec_result is None:
            raise UsageError("cannot backprop through an encode-only forward pass")
        b, p = result.batch_shape
        g = np.asarray(grad_outputs).reshape(b * p, 1)
        dec_grads, din = self.decoder.backward(result.dec_result, g,
                                               return_input_grad=True)
        dfeat = din[:, :self.feat_dim].reshape(b, p, self.feat_dim).sum(axis=1)
        enc_grads = self.encoder.backward(result.enc_result, dfeat)
        out = {f"decoder.{k}": v for k, v in dec_grads.items()}
        out.update({f"encoder.{k}": v for k, v in enc_grads.items()})
        return out


def build_sdf_net(rng, input_dim=1024, enc_hidden=(256, 128), feat_dim=64,
                  dec_hidden=(128, 128)):
    enc_layers = [Flatten()]
    prev = input_dim
    for i, width in enumerate(list(enc_hidden) + [feat_dim]):
        enc_layers.append(Linear(prev, width, rng=rng.split(0, i)))
        enc_layers.append(ReLU())
        prev = width
    encoder = Sequential(enc_layers, feature_tap=len(enc_layers) - 2)
    dec_layers = []
    prev = feat_dim + 2
    for i, width in enumerate(dec_hidden):
        dec_layers.append(Linear(prev, width, rng=rng.split(1, i)))
        dec_layers.append(ReLU())
        prev = width
    dec_layers.append(Linear(prev, 1, rng=rng.split(1, len(dec_hidden))))
    decoder = Sequential(dec_layers, feature_tap=len(dec_layers) - 2)
    return SdfNet(encoder, decoder, feat_dim)
