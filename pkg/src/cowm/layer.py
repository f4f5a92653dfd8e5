"""Fully connected layers: a plain linear layer and the COWM layer.

Shapes follow the column-batch convention: inputs are ``(d_in, b)``, the
weight matrix is ``(d_in, d_out)`` and the pre-activation is ``Wᵀx``.

The COWM layer keeps a ring of normalized batch-mean input directions. On
every training-mode forward it clusters that ring, drops the center closest
to the current batch direction and keeps the rest as preserved directions
``A``. Weight updates then use the input with its component in ``span(A)``
removed, so ``Wᵀv`` is left untouched for every ``v`` in that span.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import deque

import numpy as np

from .clustering import ClusterModel, nearest_center, spherical_kmeans
from .numerics import (
    NonFiniteError,
    ShapeError,
    SingularityError,
    as_matrix,
    column_mean_direction,
    gram_inverse,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
COLLAPSE_TOL = 1e-9
UNIT_TOL = 1e-10


def _hex(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "hex": [float(v).hex() for v in a.ravel()]}


def _unhex(doc: dict | None) -> np.ndarray | None:
    if doc is None:
        return None
    return np.array([float.fromhex(h) for h in doc["hex"]], dtype=np.float64).reshape(doc["shape"])


def glorot_uniform(d_in: int, d_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


class DirectionBuffer:
    """Bounded FIFO of unit vectors; the oldest entry is evicted when full."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.dim = dim
        self._entries: deque[np.ndarray] = deque(maxlen=capacity)

    def push(self, v) -> None:
        v = np.asarray(v, dtype=np.float64).ravel()
        if v.shape != (self.dim,):
            raise ShapeError(f"direction has shape {v.shape}, buffer holds ({self.dim},)")
        if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
            raise ValueError("buffer entries must have unit norm")
        self._entries.append(v.copy())

    def entries(self) -> np.ndarray:
        if not self._entries:
            return np.empty((0, self.dim))
        return np.stack(self._entries)

    def clear(self) -> None:
        self._entries.clear()

    def __len__(self) -> int:
        return len(self._entries)


class LinearLayer:
    """Standard fully connected layer trained by plain gradient descent."""

    kind = "linear"

    def __init__(self, weights, bias=None):
        self.weights = as_matrix(weights, "weights").copy()
        self.bias = None if bias is None else np.asarray(bias, dtype=np.float64).ravel().copy()
        if self.bias is not None and self.bias.shape != (self.d_out,):
            raise ShapeError(f"bias shape {self.bias.shape} does not match d_out={self.d_out}")

    @classmethod
    def initialized(cls, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = False, **kwargs):
        w = glorot_uniform(d_in, d_out, rng)
        return cls(w, np.zeros(d_out) if bias else None, **kwargs)

    @property
    def d_in(self) -> int:
        return self.weights.shape[0]

    @property
    def d_out(self) -> int:
        return self.weights.shape[1]

    def _check_input(self, x) -> np.ndarray:
        x = as_matrix(x, "x")
        if x.shape[0] != self.d_in:
            raise ShapeError(f"input has {x.shape[0]} rows, layer expects d_in={self.d_in}")
        return x

    def _check_grad(self, grad_pre) -> np.ndarray:
        g = as_matrix(grad_pre, "grad_pre")
        if g.shape[0] != self.d_out:
            raise ShapeError(f"gradient has {g.shape[0]} rows, layer has d_out={self.d_out}")
        return g

    def forward(self, x, training: bool = False) -> np.ndarray:
        x = self._check_input(x)
        a = self.weights.T @ x
        if self.bias is not None:
            a = a + self.bias[:, None]
        return a

    def weight_delta(self, grad_pre, x, lr: float) -> np.ndarray:
        g = self._check_grad(grad_pre)
        x = self._check_input(x)
        if g.shape[1] != x.shape[1]:
            raise ShapeError(f"batch mismatch: grad {g.shape} vs input {x.shape}")
        return -lr * (x @ g.T)

    def bias_delta(self, grad_pre, lr: float) -> np.ndarray | None:
        if self.bias is None:
            return None
        return -lr * self._check_grad(grad_pre).sum(axis=1)

    def apply_update(self, delta, bias_delta=None) -> None:
        delta = np.asarray(delta, dtype=np.float64)
        if delta.shape != self.weights.shape:
            raise ShapeError(f"delta shape {delta.shape} != weights shape {self.weights.shape}")
        new = self.weights + delta
        if not np.all(np.isfinite(new)):
            raise NonFiniteError("weight update produced non-finite values")
        self.weights = new
        if bias_delta is not None and self.bias is not None:
            self.bias = self.bias + np.asarray(bias_delta, dtype=np.float64).ravel()

    def step(self, grad_pre, x, lr: float) -> np.ndarray:
        """Compute and apply one gradient-descent update; return the weight delta."""
        delta = self.weight_delta(grad_pre, x, lr)
        self.apply_update(delta, self.bias_delta(grad_pre, lr))
        return delta

    def backward_input(self, grad_pre) -> np.ndarray:
        return self.weights @ self._check_grad(grad_pre)

    def to_dict(self) -> dict:
        return {
            "format": "cowm-layer",
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "weights": _hex(self.weights),
            "bias": None if self.bias is None else _hex(self.bias),
        }

    def state_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def copy(self):
        return layer_from_dict(self.to_dict())


class CowmLayer(LinearLayer):
    """Linear layer whose weight updates avoid clustered historical input directions.

    Parameters
    ----------
    cluster_count:
        Number of k-means centers; ``cluster_count - 1`` of them are preserved.
    cluster_iters:
        Rounds of spherical k-means per refresh.
    capacity:
        Size of the direction buffer.
    ridge:
        Added to the Gram diagonal before inversion. Use 0 for exact projection.
    """

    kind = "cowm"

    def __init__(
        self,
        weights,
        bias=None,
        *,
        cluster_count: int = 2,
        cluster_iters: int = 10,
        capacity: int = 64,
        ridge: float = 1e-8,
        seed: int = 0,
    ):
        super().__init__(weights, bias)
        if cluster_count < 1 or cluster_iters < 1:
            raise ValueError("cluster_count and cluster_iters must be positive")
        if ridge < 0:
            raise ValueError("ridge must be non-negative")
        self.cluster_count = cluster_count
        self.cluster_iters = cluster_iters
        self.ridge = float(ridge)
        self.seed = seed
        self.buffer = DirectionBuffer(capacity, self.d_in)
        self.preserved: np.ndarray | None = None
        self.projection_part: np.ndarray | None = None
        self.clusters: ClusterModel | None = None
        self.frozen = False

    def forward(self, x, training: bool = False) -> np.ndarray:
        x = self._check_input(x)
        a = super().forward(x)
        if training:
            direction = column_mean_direction(x)
            if direction is not None:
                self.buffer.push(direction)
                if not self.frozen:
                    self.refresh_projection(direction)
        return a

    def _clear_projection(self) -> None:
        self.preserved = None
        self.projection_part = None

    def refresh_projection(self, current_direction) -> None:
        """Recluster the buffer and rebuild the preserved directions and projection part."""
        if len(self.buffer) < self.cluster_count:
            self._clear_projection()
            return
        model = spherical_kmeans(self.buffer.entries(), self.cluster_count, self.cluster_iters, self.seed)
        self.clusters = model
        j = nearest_center(current_direction, model)
        keep = [i for i in range(model.n_clusters) if i != j]
        if not keep:
            self._clear_projection()
            return
        centers = model.centers
        sims = centers @ centers.T
        np.fill_diagonal(sims, -np.inf)
        try:
            if sims.max() > 1.0 - COLLAPSE_TOL:
                raise SingularityError("cluster centers collapsed onto each other")
            a = np.ascontiguousarray(centers[keep].T)
            p = a @ gram_inverse(a, self.ridge)
        except (SingularityError, ShapeError) as exc:
            if self.preserved is not None:
                log.warning("degenerate clustering (%s); falling back to plain updates", exc)
            self._clear_projection()
            return
        self.preserved = a
        self.projection_part = p

    def set_preserved(self, a, freeze: bool = True) -> None:
        """Install preserved directions directly, bypassing clustering."""
        a = as_matrix(a, "preserved")
        if a.shape[0] != self.d_in:
            raise ShapeError(f"preserved has {a.shape[0]} rows, layer has d_in={self.d_in}")
        self.preserved = a.copy()
        self.projection_part = a @ gram_inverse(a, self.ridge)
        self.frozen = freeze

    def projector(self) -> np.ndarray:
        """``P·Aᵀ``, the projector onto the preserved span (zero when absent)."""
        if self.preserved is None:
            return np.zeros((self.d_in, self.d_in))
        return self.projection_part @ self.preserved.T

    def weight_delta(self, grad_pre, x, lr: float) -> np.ndarray:
        if self.preserved is None:
            return super().weight_delta(grad_pre, x, lr)
        g = self._check_grad(grad_pre)
        x = self._check_input(x)
        if g.shape[1] != x.shape[1]:
            raise ShapeError(f"batch mismatch: grad {g.shape} vs input {x.shape}")
        x_perp = x - self.projection_part @ (self.preserved.T @ x)
        return -lr * (x_perp @ g.T)

    def to_dict(self) -> dict:
        doc = super().to_dict()
        doc.update(
            cluster_count=self.cluster_count,
            cluster_iters=self.cluster_iters,
            capacity=self.buffer.capacity,
            ridge=self.ridge.hex(),
            seed=self.seed,
            frozen=self.frozen,
            buffer=_hex(self.buffer.entries()) if len(self.buffer) else None,
            preserved=None if self.preserved is None else _hex(self.preserved),
        )
        return doc


def layer_from_dict(doc: dict) -> LinearLayer:
    if doc.get("format") != "cowm-layer":
        raise ValueError("not a cowm-layer document")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported layer format version {doc.get('version')}")
    weights = _unhex(doc["weights"])
    bias = _unhex(doc["bias"])
    if doc["kind"] == "linear":
        return LinearLayer(weights, bias)
    if doc["kind"] != "cowm":
        raise ValueError(f"unknown layer kind {doc['kind']!r}")
    layer = CowmLayer(
        weights,
        bias,
        cluster_count=doc["cluster_count"],
        cluster_iters=doc["cluster_iters"],
        capacity=doc["capacity"],
        ridge=float.fromhex(doc["ridge"]),
        seed=doc["seed"],
    )
    entries = _unhex(doc["buffer"])
    if entries is not None:
        for v in entries:
            layer.buffer._entries.append(v)
    preserved = _unhex(doc["preserved"])
    if preserved is not None:
        layer.set_preserved(preserved, freeze=doc["frozen"])
    return layer
