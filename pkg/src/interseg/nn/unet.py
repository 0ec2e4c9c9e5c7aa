"""Encoder-decoder segmentation network with hand-written backprop.

Standard U-Net layout: 4 down-stages and 4 up-stages, two 3x3 convolutions
with batch norm and ReLU per stage, max-pool downsampling, learned 2x2
upsampling, skip connections by channel concatenation (upsampled features
first, encoder features second) and a 1x1 softmax head.  Dropout sits at
the two deepest stages.

Inputs must have height and width divisible by 16 (four halvings).  The
same architecture serves both network roles: the base segmenter (image
only) and the editor (image + previous prediction + scribbles).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import layers

DOWN_FACTOR = 16  # 4 pooling stages


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture hyperparameters; width doubles at each of the 4 stages."""

    in_channels: int
    num_classes: int
    base_channels: int = 32
    dropout_rate: float = 0.2
    batch_norm: bool = True

    def __post_init__(self):
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "num_classes": self.num_classes,
            "base_channels": self.base_channels,
            "dropout_rate": self.dropout_rate,
            "batch_norm": self.batch_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**d)


def _stage_channels(spec: NetworkSpec):
    f = spec.base_channels
    enc = [(spec.in_channels, f), (f, 2 * f), (2 * f, 4 * f), (4 * f, 8 * f)]
    bott = (8 * f, 16 * f)
    ups = [(16 * f, 8 * f), (8 * f, 4 * f), (4 * f, 2 * f), (2 * f, f)]
    dec = [(16 * f, 8 * f), (8 * f, 4 * f), (4 * f, 2 * f), (2 * f, f)]
    return enc, bott, ups, dec


_ENC = ("enc1", "enc2", "enc3", "enc4")
_UPS = ("up4", "up3", "up2", "up1")
_DEC = ("dec4", "dec3", "dec2", "dec1")


class UNet:
    """Model handle: architecture spec plus parameter and BN-stat arrays.

    ``params`` holds the trainable arrays, ``stats`` the batch-norm running
    buffers, ``step`` counts optimizer updates.  Evaluation-mode forwards
    never mutate the handle, so they are safe to run concurrently; training
    needs exclusive access.
    """

    def __init__(self, spec: NetworkSpec, params: dict, stats: dict, step: int = 0):
        self.spec = spec
        self.params = params
        self.stats = stats
        self.step = step

    # ---------------------------------------------------------------- init

    @classmethod
    def initialize(cls, spec: NetworkSpec, rng: np.random.Generator,
                   dtype=np.float32) -> "UNet":
        params: dict[str, np.ndarray] = {}
        stats: dict[str, np.ndarray] = {}
        enc, bott, ups, dec = _stage_channels(spec)

        def he_conv(ci, co):
            std = np.sqrt(2.0 / (ci * 9))
            return (rng.standard_normal((co, ci, 3, 3)) * std).astype(dtype)

        def add_block(name, ci, co):
            for i, (a, b) in enumerate(((ci, co), (co, co)), start=1):
                params[f"{name}.conv{i}.w"] = he_conv(a, b)
                if spec.batch_norm:
                    params[f"{name}.bn{i}.gamma"] = np.ones(b, dtype=dtype)
                    params[f"{name}.bn{i}.beta"] = np.zeros(b, dtype=dtype)
                    stats[f"{name}.bn{i}.mean"] = np.zeros(b, dtype=dtype)
                    stats[f"{name}.bn{i}.var"] = np.ones(b, dtype=dtype)
                else:
                    params[f"{name}.conv{i}.b"] = np.zeros(b, dtype=dtype)

        for name, (ci, co) in zip(_ENC, enc):
            add_block(name, ci, co)
        add_block("bott", *bott)
        for name, (ci, co) in zip(_UPS, ups):
            std = np.sqrt(2.0 / ci)
            params[f"{name}.w"] = (rng.standard_normal((ci, co, 2, 2)) * std).astype(dtype)
            params[f"{name}.b"] = np.zeros(co, dtype=dtype)
        for name, (ci, co) in zip(_DEC, dec):
            add_block(name, ci, co)
        f = spec.base_channels
        params["head.w"] = (rng.standard_normal((spec.num_classes, f))
                            * np.sqrt(2.0 / f)).astype(dtype)
        params["head.b"] = np.zeros(spec.num_classes, dtype=dtype)
        return cls(spec, params, stats)

    # ------------------------------------------------------------- helpers

    def manifest(self) -> dict[str, tuple[int, ...]]:
        """Shapes of every array in the handle; checkpoints verify this."""
        out = {k: tuple(v.shape) for k, v in self.params.items()}
        out.update({k: tuple(v.shape) for k, v in self.stats.items()})
        return out

    @property
    def num_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "UNet":
        return UNet(self.spec,
                    {k: v.copy() for k, v in self.params.items()},
                    {k: v.copy() for k, v in self.stats.items()},
                    self.step)

    def astype(self, dtype) -> "UNet":
        return UNet(self.spec,
                    {k: v.astype(dtype) for k, v in self.params.items()},
                    {k: v.astype(dtype) for k, v in self.stats.items()},
                    self.step)

    def _check_input(self, x):
        if x.ndim != 4:
            raise ValueError(f"expected (N, C, H, W) input, got shape {x.shape}")
        n, c, h, w = x.shape
        if c != self.spec.in_channels:
            raise ValueError(f"expected {self.spec.in_channels} input channels, got {c}")
        if h % DOWN_FACTOR or w % DOWN_FACTOR:
            raise ValueError(f"input height/width must be divisible by {DOWN_FACTOR}, "
                             f"got {h}x{w}")

    # ------------------------------------------------------------- forward

    def _block_forward(self, name, x, train, cache):
        p = self.params
        for i in (1, 2):
            x, c_conv = layers.conv3x3_forward(x, p[f"{name}.conv{i}.w"],
                                               p.get(f"{name}.conv{i}.b"))
            if self.spec.batch_norm:
                x, c_bn = layers.batchnorm_forward(
                    x, p[f"{name}.bn{i}.gamma"], p[f"{name}.bn{i}.beta"],
                    self.stats[f"{name}.bn{i}.mean"], self.stats[f"{name}.bn{i}.var"],
                    train=train)
            else:
                c_bn = None
            x, c_relu = layers.relu_forward(x)
            if cache is not None:
                cache[f"{name}.{i}"] = (c_conv, c_bn, c_relu)
        return x

    def forward_logits(self, x, *, train=False, rng=None, want_cache=False):
        """Raw per-class scores; optionally the cache needed for backward."""
        x = np.ascontiguousarray(x)
        self._check_input(x)
        if train and self.spec.dropout_rate > 0 and rng is None:
            raise ValueError("training-mode forward with dropout needs an rng")
        cache: dict | None = {} if want_cache else None
        rate = self.spec.dropout_rate

        skips = {}
        a = x
        for name in _ENC:
            e = self._block_forward(name, a, train, cache)
            if name == "enc4":
                e, m4 = layers.dropout_forward(e, rate, train=train, rng=rng)
                if cache is not None:
                    cache["drop.enc4"] = m4
            skips[name] = e
            a, idx = layers.maxpool_forward(e)
            if cache is not None:
                cache[f"pool.{name}"] = idx

        a = self._block_forward("bott", a, train, cache)
        a, mb = layers.dropout_forward(a, rate, train=train, rng=rng)
        if cache is not None:
            cache["drop.bott"] = mb

        for up, dec, skip in zip(_UPS, _DEC, reversed(_ENC)):
            u, c_up = layers.tconv2x2_forward(a, self.params[f"{up}.w"],
                                              self.params[f"{up}.b"])
            cat = np.concatenate((u, skips[skip]), axis=1)
            a = self._block_forward(dec, cat, train, cache)
            if cache is not None:
                cache[f"tconv.{up}"] = c_up

        logits, c_head = layers.conv1x1_forward(a, self.params["head.w"],
                                                self.params["head.b"])
        if cache is not None:
            cache["head"] = c_head
        return (logits, cache) if want_cache else logits

    def forward(self, x, *, train=False, rng=None):
        """Per-pixel class probabilities (softmax over channels)."""
        return layers.softmax(self.forward_logits(x, train=train, rng=rng))

    # ------------------------------------------------------------ backward

    def _block_backward(self, name, dy, cache, grads):
        with_bias = not self.spec.batch_norm
        for i in (2, 1):
            c_conv, c_bn, c_relu = cache[f"{name}.{i}"]
            dy = layers.relu_backward(dy, c_relu)
            if self.spec.batch_norm:
                dy, dgamma, dbeta = layers.batchnorm_backward(dy, c_bn)
                grads[f"{name}.bn{i}.gamma"] = dgamma
                grads[f"{name}.bn{i}.beta"] = dbeta
            dy, dw, db = layers.conv3x3_backward(dy, c_conv, with_bias=with_bias)
            grads[f"{name}.conv{i}.w"] = dw
            if db is not None:
                grads[f"{name}.conv{i}.b"] = db
        return dy

    def backward(self, dlogits, cache):
        """Gradients of the loss w.r.t. every trainable parameter.

        ``dlogits`` is the loss gradient at the head output (see
        :func:`interseg.nn.layers.softmax_cross_entropy`); ``cache`` comes
        from ``forward_logits(..., train=True, want_cache=True)``.
        """
        grads: dict[str, np.ndarray] = {}
        dy, dw, db = layers.conv1x1_backward(dlogits, cache["head"])
        grads["head.w"] = dw
        grads["head.b"] = db

        d_skip = {}
        for up, dec, skip in zip(reversed(_UPS), reversed(_DEC), _ENC):
            dcat = self._block_backward(dec, dy, cache, grads)
            n_up = self.params[f"{up}.w"].shape[1]
            du, d_skip[skip] = dcat[:, :n_up], dcat[:, n_up:]
            dy, dw, db = layers.tconv2x2_backward(np.ascontiguousarray(du),
                                                  cache[f"tconv.{up}"])
            grads[f"{up}.w"] = dw
            grads[f"{up}.b"] = db

        dy = layers.dropout_backward(dy, cache["drop.bott"])
        dy = self._block_backward("bott", dy, cache, grads)

        for name in reversed(_ENC):
            dy = layers.maxpool_backward(dy, cache[f"pool.{name}"])
            dy = dy + d_skip[name]
            if name == "enc4":
                dy = layers.dropout_backward(dy, cache["drop.enc4"])
            dy = self._block_backward(name, dy, cache, grads)
        return grads


def build_network(spec: NetworkSpec, rng=None, dtype=np.float32) -> UNet:
    """Freshly initialized model handle for the given architecture."""
    if rng is None:
        rng = np.random.default_rng(0)
    elif isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    return UNet.initialize(spec, rng, dtype=dtype)


def forward(model: UNet, batch, *, train=False, rng=None):
    """Probability batch for an input batch (thin wrapper over the handle)."""
    return model.forward(batch, train=train, rng=rng)


def scratch_spec(spec: NetworkSpec) -> NetworkSpec:
    """Same architecture with the prediction channels removed (image +
    scribble one-hot only), for the from-scratch interactive baseline."""
    return replace(spec, in_channels=1 + spec.num_classes + 1)
