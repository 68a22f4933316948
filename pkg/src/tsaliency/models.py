"""Forecasters: per-feature linear autoregression plus one pluggable neural
component, combined additively.

All forward passes run on batched (B, w, D) nodes and return (B, D)
predictions, so graph size is independent of batch size. Parameters are
float64 autodiff leaves initialized uniform(-a, a) with a = 1/sqrt(fan_in).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .data import SeriesImage
from .mask import PerturbedImage

CHECKPOINT_MAGIC = "SSAL1"


class ModelError(ValueError):
    pass


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    a = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-a, a, size=shape)


def _row_bias(b: Node, rows: int) -> Node:
    # (H,) -> (rows, H)
    return ad.tile(ad.reshape(b, (1, b.shape[0])), 0, rows)


def _plane_bias(b: Node, bsz: int, steps: int) -> Node:
    # (C,) -> (B, steps, C)
    return ad.tile(ad.tile(ad.reshape(b, (1, 1, b.shape[0])), 0, bsz), 1, steps)


def _layer_norm(x: Node, gain: Node, bias: Node, eps: float = 1e-6) -> Node:
    bsz, steps, m = x.shape
    mu = ad.tile(ad.mean(x, axis=2, keepdims=True), 2, m)
    xc = x - mu
    var = ad.mean(ad.power(xc, 2.0), axis=2, keepdims=True)
    norm = xc / ad.tile(ad.sqrt(var + ad.constant(eps)), 2, m)
    return norm * _plane_bias(gain, bsz, steps) + _plane_bias(bias, bsz, steps)


class ARModel:
    """AR(p): each output feature is a linear function of its own last p+1
    values plus a bias. weights[d, k] multiplies the value k steps before the
    window's newest row."""

    def __init__(self, n_features: int, order: int,
                 rng: np.random.Generator | None = None):
        if order < 0:
            raise ModelError(f"AR order must be >= 0, got {order}")
        self.n_features = n_features
        self.order = order
        rng = rng or np.random.default_rng(0)
        self.weights = ad.parameter(_uniform(rng, (n_features, order + 1), order + 1))
        self.bias = ad.parameter(np.zeros(n_features))
        self.params = {"weights": self.weights, "bias": self.bias}
        self.decay = {"weights"}

    def forward(self, x: Node) -> Node:
        bsz, w, d = x.shape
        p = self.order
        if w < p + 1:
            raise ModelError(f"window {w} shorter than AR order + 1 = {p + 1}")
        lag = ad.slice_node(x, (slice(None), slice(w - p - 1, w), slice(None)))
        lagrev = ad.flip(lag, axis=1)                        # row k is lag k
        wt = ad.tile(ad.reshape(ad.transpose(self.weights), (1, p + 1, d)), 0, bsz)
        yr = ad.tensor_sum(lagrev * wt, axis=1)
        return yr + _row_bias(self.bias, bsz)


class MLPForecaster:
    variant = "mlp"

    def __init__(self, window: int, n_features: int, hidden: int = 64,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        d_in = window * n_features
        self.window = window
        self.n_features = n_features
        self.hidden = hidden
        self.w1 = ad.parameter(_uniform(rng, (d_in, hidden), d_in))
        self.b1 = ad.parameter(_uniform(rng, (hidden,), d_in))
        self.w2 = ad.parameter(_uniform(rng, (hidden, n_features), hidden))
        self.b2 = ad.parameter(_uniform(rng, (n_features,), hidden))
        self.params = {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}
        self.decay = {"w1", "w2"}

    def forward(self, x: Node) -> Node:
        bsz, w, d = x.shape
        if (w, d) != (self.window, self.n_features):
            raise ModelError(
                f"mlp expects ({self.window}, {self.n_features}) images, got ({w}, {d})")
        flat = ad.reshape(x, (bsz, w * d))
        h = ad.relu(flat @ self.w1 + _row_bias(self.b1, bsz))
        return h @ self.w2 + _row_bias(self.b2, bsz)


class TemporalCNNForecaster:
    """Stacked causal 1-D convolutions; the head reads the last time step, so
    every output only sees inputs at or before the window end."""

    variant = "cnn"

    def __init__(self, window: int, n_features: int, channels: int = 16,
                 kernel: int = 3, layers: int = 2,
                 rng: np.random.Generator | None = None):
        if layers < 1:
            raise ModelError("cnn needs at least one layer")
        rng = rng or np.random.default_rng(0)
        self.window = window
        self.n_features = n_features
        self.channels = channels
        self.kernel = kernel
        self.layers = layers
        self.params: dict[str, Node] = {}
        self.decay: set[str] = set()
        c_in = n_features
        for i in range(layers):
            fan = c_in * kernel
            self.params[f"conv{i}"] = ad.parameter(
                _uniform(rng, (channels, c_in, kernel), fan))
            self.params[f"cbias{i}"] = ad.parameter(_uniform(rng, (channels,), fan))
            self.decay.add(f"conv{i}")
            c_in = channels
        self.params["head_w"] = ad.parameter(_uniform(rng, (channels, n_features), channels))
        self.params["head_b"] = ad.parameter(_uniform(rng, (n_features,), channels))
        self.decay.add("head_w")

    def forward(self, x: Node) -> Node:
        bsz, w, d = x.shape
        if d != self.n_features:
            raise ModelError(f"cnn expects {self.n_features} features, got {d}")
        h = x
        for i in range(self.layers):
            h = ad.relu(ad.conv1d_causal(h, self.params[f"conv{i}"])
                        + _plane_bias(self.params[f"cbias{i}"], bsz, w))
        last = ad.slice_node(h, (slice(None), w - 1, slice(None)))   # (B, C)
        return last @ self.params["head_w"] + _row_bias(self.params["head_b"], bsz)


class GRUForecaster:
    """Single-layer GRU consuming rows oldest to newest; the final hidden
    state goes through a linear head."""

    variant = "gru"

    def __init__(self, window: int, n_features: int, hidden: int = 32,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.window = window
        self.n_features = n_features
        self.hidden = hidden
        d, hsz = n_features, hidden
        self.params = {
            "wz": ad.parameter(_uniform(rng, (d, hsz), d)),
            "wr": ad.parameter(_uniform(rng, (d, hsz), d)),
            "wh": ad.parameter(_uniform(rng, (d, hsz), d)),
            "uz": ad.parameter(_uniform(rng, (hsz, hsz), hsz)),
            "ur": ad.parameter(_uniform(rng, (hsz, hsz), hsz)),
            "uh": ad.parameter(_uniform(rng, (hsz, hsz), hsz)),
            "bz": ad.parameter(_uniform(rng, (hsz,), hsz)),
            "br": ad.parameter(_uniform(rng, (hsz,), hsz)),
            "bh": ad.parameter(_uniform(rng, (hsz,), hsz)),
            "head_w": ad.parameter(_uniform(rng, (hsz, d), hsz)),
            "head_b": ad.parameter(_uniform(rng, (d,), hsz)),
        }
        self.decay = {"wz", "wr", "wh", "uz", "ur", "uh", "head_w"}

    def _step(self, x_t: Node, h: Node, bsz: int) -> Node:
        p = self.params
        z = ad.sigmoid(x_t @ p["wz"] + h @ p["uz"] + _row_bias(p["bz"], bsz))
        r = ad.sigmoid(x_t @ p["wr"] + h @ p["ur"] + _row_bias(p["br"], bsz))
        hh = ad.tanh(x_t @ p["wh"] + (r * h) @ p["uh"] + _row_bias(p["bh"], bsz))
        one = ad.constant(1.0)
        return (one - z) * h + z * hh

    def hidden_states(self, x: Node) -> list[Node]:
        bsz, w, d = x.shape
        if d != self.n_features:
            raise ModelError(f"gru expects {self.n_features} features, got {d}")
        h = ad.constant(np.zeros((bsz, self.hidden)))
        states = []
        for t in range(w):
            x_t = ad.slice_node(x, (slice(None), t, slice(None)))
            h = self._step(x_t, h, bsz)
            states.append(h)
        return states

    def forward(self, x: Node) -> Node:
        h = self.hidden_states(x)[-1]
        bsz = x.shape[0]
        return h @ self.params["head_w"] + _row_bias(self.params["head_b"], bsz)


def sinusoidal_positions(steps: int, dim: int) -> np.ndarray:
    pos = np.arange(steps)[:, None].astype(np.float64)
    i = np.arange(dim)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    pe = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return pe


class AttentionForecaster:
    """One pre-norm encoder block (single-head self-attention + position-wise
    feed-forward) over rows with sinusoidal position encodings, mean-pooled
    into a linear head."""

    variant = "attention"

    def __init__(self, window: int, n_features: int, dim: int = 32,
                 ff: int = 64, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.window = window
        self.n_features = n_features
        self.dim = dim
        self.ff = ff
        d, m = n_features, dim
        self.params = {
            "in_w": ad.parameter(_uniform(rng, (d, m), d)),
            "in_b": ad.parameter(_uniform(rng, (m,), d)),
            "ln1_g": ad.parameter(np.ones(m)),
            "ln1_b": ad.parameter(np.zeros(m)),
            "wq": ad.parameter(_uniform(rng, (m, m), m)),
            "wk": ad.parameter(_uniform(rng, (m, m), m)),
            "wv": ad.parameter(_uniform(rng, (m, m), m)),
            "wo": ad.parameter(_uniform(rng, (m, m), m)),
            "ln2_g": ad.parameter(np.ones(m)),
            "ln2_b": ad.parameter(np.zeros(m)),
            "ff_w1": ad.parameter(_uniform(rng, (m, ff), m)),
            "ff_b1": ad.parameter(_uniform(rng, (ff,), m)),
            "ff_w2": ad.parameter(_uniform(rng, (ff, m), ff)),
            "ff_b2": ad.parameter(_uniform(rng, (m,), ff)),
            "head_w": ad.parameter(_uniform(rng, (m, d), m)),
            "head_b": ad.parameter(_uniform(rng, (d,), m)),
        }
        self.decay = {"in_w", "wq", "wk", "wv", "wo", "ff_w1", "ff_w2", "head_w"}

    def attention_weights(self, x: Node) -> Node:
        """Softmax attention matrix (B, w, w) for the (pre-normed) input."""
        p = self.params
        e = self._embed(x)
        n1 = _layer_norm(e, p["ln1_g"], p["ln1_b"])
        q, k = n1 @ p["wq"], n1 @ p["wk"]
        scores = (q @ ad.transpose(k, (0, 2, 1))) * ad.constant(1.0 / math.sqrt(self.dim))
        return ad.softmax(scores, axis=2)

    def _embed(self, x: Node) -> Node:
        bsz, w, d = x.shape
        e = x @ self.params["in_w"] + _plane_bias(self.params["in_b"], bsz, w)
        pe = ad.constant(sinusoidal_positions(w, self.dim)[None])
        return e + ad.tile(pe, 0, bsz)

    def forward(self, x: Node) -> Node:
        bsz, w, d = x.shape
        if d != self.n_features:
            raise ModelError(f"attention expects {self.n_features} features, got {d}")
        p = self.params
        e = self._embed(x)
        n1 = _layer_norm(e, p["ln1_g"], p["ln1_b"])
        q, k, v = n1 @ p["wq"], n1 @ p["wk"], n1 @ p["wv"]
        scores = (q @ ad.transpose(k, (0, 2, 1))) * ad.constant(1.0 / math.sqrt(self.dim))
        attn = ad.softmax(scores, axis=2)
        e = e + (attn @ v) @ p["wo"]
        n2 = _layer_norm(e, p["ln2_g"], p["ln2_b"])
        f = ad.relu(n2 @ p["ff_w1"] + _plane_bias(p["ff_b1"], bsz, w)) @ p["ff_w2"]
        e = e + f + _plane_bias(p["ff_b2"], bsz, w)
        pooled = ad.mean(e, axis=1)
        return pooled @ p["head_w"] + _row_bias(p["head_b"], bsz)


NEURAL_VARIANTS = ("mlp", "cnn", "gru", "attention", "none")


@dataclass
class ModelConfig:
    variant: str = "mlp"
    ar_enabled: bool = True
    ar_order: int = 8
    mlp_hidden: int = 64
    cnn_channels: int = 16
    cnn_kernel: int = 3
    cnn_layers: int = 2
    gru_hidden: int = 32
    attn_dim: int = 32
    attn_ff: int = 64

    def __post_init__(self):
        if self.variant not in NEURAL_VARIANTS:
            raise ModelError(f"unknown neural variant {self.variant!r}")


def build_neural(cfg: ModelConfig, window: int, n_features: int,
                 rng: np.random.Generator):
    if cfg.variant == "none":
        return None
    if cfg.variant == "mlp":
        return MLPForecaster(window, n_features, cfg.mlp_hidden, rng)
    if cfg.variant == "cnn":
        return TemporalCNNForecaster(window, n_features, cfg.cnn_channels,
                                     cfg.cnn_kernel, cfg.cnn_layers, rng)
    if cfg.variant == "gru":
        return GRUForecaster(window, n_features, cfg.gru_hidden, rng)
    return AttentionForecaster(window, n_features, cfg.attn_dim, cfg.attn_ff, rng)


class Forecaster:
    """Additive combination y = y_r + y_o of the AR component and the neural
    component; either may be absent (ablations)."""

    def __init__(self, ar: ARModel | None, neural=None,
                 config: ModelConfig | None = None):
        if ar is None and neural is None:
            raise ModelError("forecaster needs at least one component")
        self.ar = ar
        self.neural = neural
        self.config = config

    def forward(self, x: Node) -> Node:
        parts = []
        if self.ar is not None:
            parts.append(self.ar.forward(x))
        if self.neural is not None:
            parts.append(self.neural.forward(x))
        out = parts[0]
        for extra in parts[1:]:
            out = out + extra
        return out

    def predict(self, images: np.ndarray) -> np.ndarray:
        """Plain forecast for a (B, w, D) or (w, D) array."""
        images = np.asarray(images, dtype=np.float64)
        single = images.ndim == 2
        x = ad.constant(images[None] if single else images)
        y = self.forward(x).value
        return y[0] if single else y

    def params(self) -> dict[str, Node]:
        out: dict[str, Node] = {}
        if self.ar is not None:
            for name, node in self.ar.params.items():
                out[f"ar.{name}"] = node
        if self.neural is not None:
            for name, node in self.neural.params.items():
                out[f"neural.{self.neural.variant}.{name}"] = node
        return out

    def decay_names(self) -> set[str]:
        out: set[str] = set()
        if self.ar is not None:
            out |= {f"ar.{n}" for n in self.ar.decay}
        if self.neural is not None:
            out |= {f"neural.{self.neural.variant}.{n}" for n in self.neural.decay}
        return out

    def param_values(self) -> dict[str, np.ndarray]:
        return {name: node.value.copy() for name, node in self.params().items()}


def build_forecaster(cfg: ModelConfig, window: int, n_features: int,
                     seed: int = 0) -> Forecaster:
    rng = np.random.default_rng(seed)
    ar = ARModel(n_features, cfg.ar_order, rng) if cfg.ar_enabled else None
    neural = build_neural(cfg, window, n_features, rng)
    return Forecaster(ar, neural, cfg)


def ar_forecast(model: ARModel, image: SeriesImage) -> np.ndarray:
    """Linear component forecast for one series image."""
    return model.forward(ad.constant(image.values[None])).value[0]


def neural_forecast(model, image) -> np.ndarray:
    """Neural component forecast for a SeriesImage or PerturbedImage."""
    if isinstance(image, PerturbedImage):
        node = ad.reshape(image.node, (1,) + image.node.shape)
        return model.forward(node).value[0]
    return model.forward(ad.constant(image.values[None])).value[0]


def combine(y_r: np.ndarray, y_o: np.ndarray) -> np.ndarray:
    y_r = np.asarray(y_r, dtype=np.float64)
    y_o = np.asarray(y_o, dtype=np.float64)
    if y_r.shape != y_o.shape:
        raise ModelError(f"combine: shapes {y_r.shape} vs {y_o.shape}")
    return y_r + y_o


def save_checkpoint(path, forecaster: Forecaster, window: int,
                    extra: dict | None = None) -> None:
    """Self-describing JSON container: magic + config echo + named tensors.
    float64 values round-trip exactly through repr."""
    cfg = forecaster.config or ModelConfig(
        variant=forecaster.neural.variant if forecaster.neural else "none",
        ar_enabled=forecaster.ar is not None)
    n_features = (forecaster.ar.n_features if forecaster.ar is not None
                  else forecaster.neural.n_features)
    doc = {
        "magic": CHECKPOINT_MAGIC,
        "model": asdict(cfg),
        "window": window,
        "n_features": n_features,
        "extra": extra or {},
        "tensors": {
            name: {"shape": list(value.shape), "data": value.reshape(-1).tolist()}
            for name, value in sorted(forecaster.param_values().items())
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[Forecaster, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("magic") != CHECKPOINT_MAGIC:
        raise ModelError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
    cfg = ModelConfig(**doc["model"])
    forecaster = build_forecaster(cfg, doc["window"], doc["n_features"])
    tensors = doc["tensors"]
    params = forecaster.params()
    if set(tensors) != set(params):
        missing = set(params) ^ set(tensors)
        raise ModelError(f"{path}: tensor names mismatch: {sorted(missing)}")
    for name, node in params.items():
        entry = tensors[name]
        value = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if value.shape != node.value.shape:
            raise ModelError(
                f"{path}: tensor {name} shape {value.shape} != {node.value.shape}")
        node.value[...] = value
    return forecaster, doc
