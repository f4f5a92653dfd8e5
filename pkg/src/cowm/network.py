"""Multilayer perceptron built from linear and COWM layers, plus losses."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .layer import CowmLayer, LinearLayer, glorot_uniform, layer_from_dict
from .numerics import NonFiniteError, ShapeError, as_matrix

ACTIVATIONS = ("tanh", "relu", "identity")
LOG_2PI = float(np.log(2.0 * np.pi))


class UsageError(RuntimeError):
    pass


def activate(name: str, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(a)
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "identity":
        return a
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name: str, a: np.ndarray) -> np.ndarray:
    """Derivative of the activation evaluated at pre-activation `a`."""
    if name == "tanh":
        t = np.tanh(a)
        return 1.0 - t * t
    if name == "relu":
        return (a > 0).astype(np.float64)
    if name == "identity":
        return np.ones_like(a)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class TrainConfig:
    lr: float = 0.05
    batch_size: int = 32
    steps: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]
    net_id: int
    training: bool


@dataclass
class Mlp:
    layers: list[LinearLayer]
    activations: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.activations:
            self.activations = ["tanh"] * (len(self.layers) - 1) + ["identity"]
        if len(self.activations) != len(self.layers):
            raise ValueError("need exactly one activation per layer")
        for name in self.activations:
            if name not in ACTIVATIONS:
                raise ValueError(f"unknown activation {name!r}")
        for i, (lo, hi) in enumerate(zip(self.layers, self.layers[1:])):
            if lo.d_out != hi.d_in:
                raise ShapeError(f"layer {i} d_out={lo.d_out} does not chain into d_in={hi.d_in}")

    @classmethod
    def build(
        cls,
        sizes: list[int],
        rng: np.random.Generator,
        *,
        cowm: bool = False,
        activation: str = "tanh",
        output_activation: str = "identity",
        bias: bool = False,
        **cowm_kwargs,
    ) -> "Mlp":
        """Stack layers ``sizes[0] -> sizes[1] -> ...`` with Glorot-uniform weights.

        With ``cowm=True`` every layer is a CowmLayer configured by `cowm_kwargs`.
        """
        layers = []
        for d_in, d_out in zip(sizes, sizes[1:]):
            w = glorot_uniform(d_in, d_out, rng)
            b = np.zeros(d_out) if bias else None
            layers.append(CowmLayer(w, b, **cowm_kwargs) if cowm else LinearLayer(w, b))
        acts = [activation] * (len(layers) - 1) + [output_activation]
        return cls(layers, acts)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    @property
    def d_out(self) -> int:
        return self.layers[-1].d_out

    def forward(self, x, training: bool = False) -> tuple[np.ndarray, ForwardCache]:
        x = as_matrix(x, "x")
        if x.shape[0] != self.d_in:
            raise ShapeError(f"input has {x.shape[0]} rows, network expects {self.d_in}")
        inputs, pres = [], []
        h = x
        for layer, act in zip(self.layers, self.activations):
            inputs.append(h)
            a = layer.forward(h, training=training)
            pres.append(a)
            h = activate(act, a)
        return h, ForwardCache(inputs, pres, id(self), training)

    def __call__(self, x) -> np.ndarray:
        return self.forward(x, training=False)[0]

    def backward(self, cache: ForwardCache, grad_output) -> list[np.ndarray]:
        """Return ∂L/∂a for every layer, walking last to first (no updates)."""
        self._check_cache(cache)
        g = as_matrix(grad_output, "grad_output")
        grads = [None] * self.depth
        for i in reversed(range(self.depth)):
            g_pre = g * activation_grad(self.activations[i], cache.pre_activations[i])
            grads[i] = g_pre
            if i > 0:
                g = self.layers[i].backward_input(g_pre)
        return grads

    def weight_gradients(self, cache: ForwardCache, grad_output) -> list[np.ndarray]:
        """Unprojected ∂L/∂W per layer."""
        grads = self.backward(cache, grad_output)
        return [x @ g.T for x, g in zip(cache.inputs, grads)]

    def backward_and_step(self, cache: ForwardCache, grad_output, lr: float) -> None:
        """One SGD step; each layer's delta goes through its own projection rule."""
        self._check_cache(cache)
        if not cache.training:
            raise UsageError("backward_and_step needs a cache from a training-mode forward")
        g = as_matrix(grad_output, "grad_output")
        for i in reversed(range(self.depth)):
            layer = self.layers[i]
            g_pre = g * activation_grad(self.activations[i], cache.pre_activations[i])
            if i > 0:
                g = layer.backward_input(g_pre)
            layer.step(g_pre, cache.inputs[i], lr)
        cache.net_id = -1

    def _check_cache(self, cache: ForwardCache) -> None:
        if cache is None or cache.net_id != id(self):
            raise UsageError("stale or foreign forward cache")
        if len(cache.inputs) != self.depth:
            raise UsageError("cache does not match network depth")

    def state_hash(self) -> str:
        return "".join(layer.state_hash() for layer in self.layers)

    def to_dict(self) -> dict:
        return {
            "format": "cowm-mlp",
            "version": 1,
            "activations": list(self.activations),
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Mlp":
        if doc.get("format") != "cowm-mlp" or doc.get("version") != 1:
            raise ValueError("not a version-1 cowm-mlp document")
        return cls([layer_from_dict(d) for d in doc["layers"]], list(doc["activations"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def copy(self) -> "Mlp":
        return Mlp.from_dict(self.to_dict())


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean over entries of ½(pred−target)² and its gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    r = pred - target
    n = r.size
    with np.errstate(over="ignore", invalid="ignore"):
        loss = 0.5 * float(np.sum(r * r)) / n
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss")
    return loss, r / n


def gaussian_logprob_grad(mean, log_std, action):
    """Diagonal Gaussian log-density per column with analytic gradients.

    Returns ``(logprob, grad_mean, grad_log_std)``; `logprob` has one entry per
    column, the gradients have the shape of `mean`.
    """
    mean = as_matrix(mean, "mean")
    action = as_matrix(action, "action")
    log_std = np.asarray(log_std, dtype=np.float64).ravel()
    if not np.all(np.isfinite(log_std)):
        raise NonFiniteError("log_std must be finite")
    if mean.shape != action.shape or log_std.shape != (mean.shape[0],):
        raise ShapeError(f"mean {mean.shape}, action {action.shape}, log_std {log_std.shape}")
    var = np.exp(2.0 * log_std)[:, None]
    diff = action - mean
    z2 = diff * diff / var
    logprob = np.sum(-0.5 * z2 - log_std[:, None] - 0.5 * LOG_2PI, axis=0)
    return logprob, diff / var, z2 - 1.0
