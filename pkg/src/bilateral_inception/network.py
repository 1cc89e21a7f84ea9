"""A small trainable stack of per-point dense layers with bilateral inception
modules inserted between them, plus the loss and optimizer used to fit it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bilateral import as_float
from .errors import InvalidArgumentError, TrainingDivergedError
from .inception import InceptionParams, inception_backward, inception_forward, init_params
from .superpixel import FeatureKind

REGIMES = ("BI", "BI+FC", "FULL")


@dataclass
class DenseLayer:
    """Per-point affine map ``z @ W.T + b`` followed by an optional ReLU.

    ``group`` tags the layer for regime selection: ``"FC"`` layers train under
    ``BI+FC`` and ``FULL``; ``"backbone"`` layers only under ``FULL``.
    """

    W: np.ndarray
    b: np.ndarray
    activation: str = "none"
    group: str = "FC"
    name: str = "fc"

    def __post_init__(self):
        self.W = as_float(self.W)
        self.b = as_float(self.b).reshape(-1)
        self.activation = self.activation.lower()
        if self.activation not in ("none", "relu"):
            raise InvalidArgumentError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise InvalidArgumentError(f"inconsistent dense shapes W {self.W.shape}, b {self.b.shape}")

    @classmethod
    def init(cls, c_in, c_out, rng, **kwargs) -> "DenseLayer":
        limit = np.sqrt(6.0 / (c_in + c_out))
        return cls(W=rng.uniform(-limit, limit, size=(c_out, c_in)), b=np.zeros(c_out), **kwargs)

    @property
    def c_in(self) -> int:
        return self.W.shape[1]

    @property
    def c_out(self) -> int:
        return self.W.shape[0]

    def params(self) -> dict:
        return {"W": self.W, "b": self.b}

    def forward(self, z, ctx=None):
        z = as_float(z)
        if z.ndim != 2 or z.shape[1] != self.c_in:
            raise InvalidArgumentError(f"{self.name}: expected (P, {self.c_in}) input, got {z.shape}")
        pre = z @ self.W.T + self.b
        out = np.maximum(pre, 0.0) if self.activation == "relu" else pre
        return out, (z, pre)

    def backward(self, cache, d_out, ctx=None):
        z, pre = cache
        if self.activation == "relu":
            d_out = d_out * (pre > 0)
        grads = {"W": d_out.T @ z, "b": d_out.sum(axis=0)}
        return d_out @ self.W, grads


def dense_forward(layer: DenseLayer, z) -> np.ndarray:
    return layer.forward(z)[0]


class InceptionLayer:
    """Inception module reading its point features from the per-image
    context under ``kind``; input and output points coincide unless the
    context supplies separate ``out`` features."""

    def __init__(self, params: InceptionParams, kind=FeatureKind.POSITION_COLOR, name="bi"):
        self.p = params
        self.kind = FeatureKind.parse(kind)
        self.name = name
        self.group = "BI"

    @property
    def c_in(self) -> int:
        return self.p.channels

    c_out = c_in

    def params(self) -> dict:
        return self.p.tensors()

    def _features(self, ctx):
        feats = ctx["features"][self.kind]
        out = ctx.get("out_features", {}).get(self.kind, feats)
        return feats, out

    def forward(self, z, ctx):
        f_in, f_out = self._features(ctx)
        out, cache = inception_forward(z, f_in, f_out, self.p)
        return out, (z, cache)

    def backward(self, cache, d_out, ctx):
        z, inner = cache
        f_in, f_out = self._features(ctx)
        g = inception_backward(inner, z, f_in, f_out, self.p, d_out)
        return g.d_input, g.tensors()


def softmax_xent(logits, targets, weights=None):
    """Weighted mean cross-entropy and its exact gradient.

    ``weights`` (default all ones) are per-row positive weights; the loss is
    normalized by their sum.
    """
    logits = as_float(logits)
    targets = np.asarray(targets)
    p, c = logits.shape
    if targets.shape != (p,) or (p and (targets.min() < 0 or targets.max() >= c)):
        raise InvalidArgumentError(f"targets must be {p} class ids in [0, {c})")
    weights = np.ones(p) if weights is None else as_float(weights)
    if weights.shape != (p,) or np.any(weights <= 0):
        raise InvalidArgumentError("weights must be positive, one per row")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_prob = shifted[np.arange(p), targets] - log_norm
    total = weights.sum()
    loss = -(weights * log_prob).sum() / total
    probs = np.exp(shifted - log_norm[:, None])
    probs[np.arange(p), targets] -= 1.0
    return loss, probs * (weights / total)[:, None]


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict) -> dict:
        """Update ``params`` in place (and return them).

        Raises TrainingDivergedError before touching anything if a gradient is
        not finite.
        """
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingDivergedError(f"non-finite gradient for {k}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params


class ToyNet:
    """Ordered layer stack; parameters are addressed as ``"<layer>.<tensor>"``."""

    def __init__(self, layers, num_classes: int):
        names = [layer.name for layer in layers]
        if len(set(names)) != len(names):
            raise InvalidArgumentError(f"layer names must be unique, got {names}")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.c_out != nxt.c_in:
                raise InvalidArgumentError(
                    f"{prev.name} emits {prev.c_out} channels but {nxt.name} expects {nxt.c_in}")
        if layers and layers[-1].c_out != num_classes:
            raise InvalidArgumentError("last layer must emit one channel per class")
        self.layers = list(layers)
        self.num_classes = num_classes

    @classmethod
    def from_config(cls, layer_specs, in_dims: int, num_classes: int, seed: int,
                    inception_defaults=None) -> "ToyNet":
        """Build from a list of layer dicts.

        Dense: ``{"type": "dense", "out": int | "classes", "activation", "group"}``.
        Inception: ``{"type": "inception", "features": kind, "H": int}``.
        """
        rng = np.random.default_rng(seed)
        inception_defaults = dict(inception_defaults or {})
        layers = []
        channels = in_dims
        n_dense = n_bi = 0
        for spec in layer_specs:
            kind = spec.get("type")
            if kind == "dense":
                out = spec.get("out", "classes")
                out = num_classes if out == "classes" else int(out)
                n_dense += 1
                layers.append(DenseLayer.init(
                    channels, out, rng, activation=spec.get("activation", "none"),
                    group=spec.get("group", "FC"), name=spec.get("name", f"fc{n_dense}")))
                channels = out
            elif kind == "inception":
                n_bi += 1
                feat = FeatureKind.parse(spec.get("features", "POSITION_COLOR"))
                dims = 2 if feat is FeatureKind.POSITION else 5
                h = int(spec.get("H", inception_defaults.get("H", 2)))
                params = init_params(h, dims, channels)
                scale = spec.get("lambdaScale", inception_defaults.get("lambdaScale", 1.0))
                params.lam *= float(scale)
                layers.append(InceptionLayer(params, feat, name=spec.get("name", f"bi{n_bi}")))
            else:
                raise InvalidArgumentError(f"unknown layer type {kind!r}")
        return cls(layers, num_classes)

    def params(self) -> dict:
        out = {}
        for layer in self.layers:
            for k, v in layer.params().items():
                out[f"{layer.name}.{k}"] = v
        return out

    def trainable(self, regime: str) -> list:
        if regime not in REGIMES:
            raise InvalidArgumentError(f"unknown regime {regime!r}; expected one of {REGIMES}")
        allowed = {"BI": {"BI"}, "BI+FC": {"BI", "FC"}, "FULL": None}[regime]
        names = []
        for layer in self.layers:
            if allowed is None or layer.group in allowed:
                names.extend(f"{layer.name}.{k}" for k in layer.params())
        return names

    def has_inception(self) -> bool:
        return any(isinstance(layer, InceptionLayer) for layer in self.layers)

    def forward(self, x, ctx=None):
        caches = []
        z = x
        for layer in self.layers:
            z, cache = layer.forward(z, ctx)
            caches.append(cache)
        return z, caches

    def backward(self, caches, d_out, ctx=None):
        grads = {}
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            d_out, g = layer.backward(cache, d_out, ctx)
            for k, v in g.items():
                grads[f"{layer.name}.{k}"] = v
        return d_out, grads

    def predict(self, x, ctx=None) -> np.ndarray:
        logits, _ = self.forward(x, ctx)
        return logits.argmax(axis=1)


def rel_err(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)))


def numeric_grad(loss_fn, tensor: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``tensor``
    (perturbed in place and restored)."""
    grad = np.zeros_like(tensor)
    flat = tensor.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss_fn()
        flat[i] = orig - step
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def grad_check(loss_fn, tensors: dict, analytic: dict, step: float = 1e-5) -> dict:
    """Max relative error per tensor between ``analytic`` and central
    differences. ``loss_fn`` must read the arrays in ``tensors`` (which are
    perturbed in place)."""
    return {name: rel_err(analytic[name], numeric_grad(loss_fn, t, step))
            for name, t in tensors.items()}


def make_features_ctx(position, color, out_position=None, out_color=None) -> dict:
    ctx = {"features": {FeatureKind.POSITION: position, FeatureKind.POSITION_COLOR: color}}
    if out_position is not None:
        ctx["out_features"] = {FeatureKind.POSITION: out_position,
                               FeatureKind.POSITION_COLOR: out_color}
    return ctx
