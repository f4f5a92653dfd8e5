"""Executable invariant checks behind ``cowm verify``.

Each check returns ``(passed, detail)``. They are deliberately small and
seeded so the whole table runs in a few seconds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .clustering import spherical_kmeans
from .continual import ContinualConfig, build_net, make_task_pair, train_phase
from .layer import CowmLayer, LinearLayer, layer_from_dict
from .network import Mlp, gaussian_logprob_grad, mse_loss
from .numerics import column_mean_direction, gram_inverse


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def check_gram_inverse(seed: int, ridge: float) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst_res = worst_sym = 0.0
    for _ in range(50):
        d = int(rng.integers(2, 17))
        s = int(rng.integers(1, min(4, d) + 1))
        a = rng.standard_normal((d, s))
        inv = gram_inverse(a, 0.0)
        worst_res = max(worst_res, np.abs(a.T @ a @ inv - np.eye(s)).max())
        worst_sym = max(worst_sym, np.abs(inv - inv.T).max())
    return worst_res <= 1e-8 and worst_sym <= 1e-10, f"residual {worst_res:.2e}, asymmetry {worst_sym:.2e}"


def check_projector(seed: int, ridge: float) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(2, 17))
        s = int(rng.integers(1, min(4, d) + 1))
        a = rng.standard_normal((d, s))
        q = a @ gram_inverse(a, ridge) @ a.T
        worst = max(worst, np.abs(q @ q - q).max(), np.abs(q @ a - a).max())
    return worst <= 1e-8, f"max |Q²-Q|, |QA-A| = {worst:.2e}"


def check_preservation(seed: int, ridge: float) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    d_in, d_out = 8, 3
    layer = CowmLayer(rng.standard_normal((d_in, d_out)), ridge=ridge)
    a = rng.standard_normal((d_in, 1))
    a /= np.linalg.norm(a)
    layer.set_preserved(a)
    before = layer.weights.T @ a
    for _ in range(1000):
        x = rng.standard_normal((d_in, 8)) + a
        layer.step(rng.standard_normal((d_out, 8)), x, 0.05)
    drift = float(np.abs(layer.weights.T @ a - before).max())
    return drift <= 1e-10, f"max |ΔWᵀv| = {drift:.2e} (ridge={ridge:g})"


def bp_equivalence_gap(seed: int, steps: int = 500, ridge: float = 0.0) -> float:
    """Max weight gap between a COWM net whose buffer never fills and a plain net."""
    rng = np.random.default_rng(seed)
    sizes = [6, 5, 3]
    weights = [rng.standard_normal((i, o)) for i, o in zip(sizes, sizes[1:])]
    # cluster_count above the step count keeps the buffer under-filled throughout
    cowm = Mlp([CowmLayer(w, cluster_count=steps + 1, capacity=steps + 1, ridge=ridge) for w in weights])
    plain = Mlp([LinearLayer(w) for w in weights])
    data = np.random.default_rng(seed + 1)
    worst = 0.0
    for _ in range(steps):
        x, y = data.standard_normal((6, 4)), data.standard_normal((3, 4))
        for net in (cowm, plain):
            pred, cache = net.forward(x, training=True)
            net.backward_and_step(cache, mse_loss(pred, y)[1], 0.01)
        gap = max(np.abs(a.weights - b.weights).max() for a, b in zip(cowm.layers, plain.layers))
        worst = max(worst, gap)
    return float(worst)


def check_bp_equivalence(seed: int, ridge: float) -> tuple[bool, str]:
    worst = bp_equivalence_gap(seed, ridge=ridge)
    return worst <= 1e-12, f"max trajectory gap {worst:.2e}"


def check_forward_purity(seed: int, ridge: float) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    net = Mlp.build([4, 8, 2], rng, cowm=True, bias=True, ridge=ridge)
    for _ in range(5):
        pred, cache = net.forward(rng.standard_normal((4, 6)) + 1.0, training=True)
        net.backward_and_step(cache, pred, 0.01)
    before = net.state_hash()
    net.forward(rng.standard_normal((4, 6)), training=False)
    return net.state_hash() == before, "state hash unchanged" if net.state_hash() == before else "state mutated"


def check_finite_differences(seed: int, ridge: float, n_nets: int = 20) -> tuple[bool, str]:
    worst = 0.0
    h = 1e-6
    for i in range(n_nets):
        rng = np.random.default_rng([seed, i])
        sizes = [int(rng.integers(2, 5)) for _ in range(int(rng.integers(2, 4)))] + [int(rng.integers(1, 3))]
        net = Mlp.build(sizes, rng, activation=str(rng.choice(["tanh", "relu"])), bias=True)
        for layer in net.layers:
            layer.bias = rng.standard_normal(layer.d_out)
        x = rng.standard_normal((sizes[0], 5))
        y = rng.standard_normal((sizes[-1], 5))
        pred, cache = net.forward(x)
        analytic = net.weight_gradients(cache, mse_loss(pred, y)[1])
        for layer, g in zip(net.layers, analytic):
            fd = np.zeros_like(g)
            for idx in np.ndindex(*g.shape):
                orig = layer.weights[idx]
                layer.weights[idx] = orig + h
                lp = mse_loss(net(x), y)[0]
                layer.weights[idx] = orig - h
                lm = mse_loss(net(x), y)[0]
                layer.weights[idx] = orig
                fd[idx] = (lp - lm) / (2 * h)
            scale = max(np.abs(g).max(), np.abs(fd).max(), 1e-12)
            worst = max(worst, np.abs(g - fd).max() / scale)
    return worst <= 1e-5, f"max relative error {worst:.2e} over {n_nets} nets"


def check_gaussian_grad(seed: int, ridge: float) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    mean, action = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    log_std = rng.uniform(-1, 1, 2)
    _, gm, _ = gaussian_logprob_grad(mean, log_std, action)
    h, worst = 1e-6, 0.0
    for i, j in np.ndindex(*mean.shape):
        mp, mm = mean.copy(), mean.copy()
        mp[i, j] += h
        mm[i, j] -= h
        fd = (gaussian_logprob_grad(mp, log_std, action)[0][j] - gaussian_logprob_grad(mm, log_std, action)[0][j]) / (2 * h)
        worst = max(worst, abs(fd - gm[i, j]))
    return worst <= 1e-6, f"max abs error {worst:.2e}"


def check_kmeans_monotone(seed: int, ridge: float) -> tuple[bool, str]:
    worst = 0.0
    for i in range(50):
        rng = np.random.default_rng([seed, i])
        n, d = int(rng.integers(5, 60)), int(rng.integers(2, 8))
        c = int(rng.integers(1, min(6, n) + 1))
        model = spherical_kmeans(_unit_rows(rng, n, d), c, 25, seed=i)
        if len(model.history) > 1:
            worst = max(worst, float(np.max(np.diff(model.history))))
    return worst <= 1e-12, f"largest inertia increase {worst:.2e}"


def check_kmeans_exact(seed: int, ridge: float) -> tuple[bool, str]:
    worst = 0.0
    for i in range(50):
        rng = np.random.default_rng([seed, i, 1])
        c = int(rng.integers(1, 6))
        distinct = _unit_rows(rng, c, 5)
        pts = np.vstack([distinct, distinct[rng.integers(0, c, size=15)]])
        worst = max(worst, spherical_kmeans(pts, c, 10, seed=i).inertia)
    return worst <= 1e-12, f"max inertia {worst:.2e}"


def check_mean_direction(seed: int, ridge: float) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(200):
        v = column_mean_direction(rng.standard_normal((5, int(rng.integers(1, 9)))))
        if v is not None:
            worst = max(worst, abs(np.linalg.norm(v) - 1.0))
    return worst <= 1e-12, f"max norm deviation {worst:.2e}"


def check_round_trip(seed: int, ridge: float) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    layer = CowmLayer(rng.standard_normal((4, 3)), bias=rng.standard_normal(3), ridge=ridge)
    for _ in range(8):
        layer.forward(rng.standard_normal((4, 5)) + 1.0, training=True)
    back = layer_from_dict(json.loads(json.dumps(layer.to_dict())))
    ok = back.state_hash() == layer.state_hash() and np.array_equal(back.weights, layer.weights)
    return ok, "bit-identical" if ok else "round trip lost precision"


def check_two_task_preservation(seed: int, ridge: float) -> tuple[bool, str]:
    cfg = ContinualConfig(kind="cowm", angle=45, spread=0.0, ridge=ridge, F=4096, d_in=8, d_out=3, seed=seed)
    t1, t2 = make_task_pair(cfg.d_in, cfg.d_out, cfg.angle, cfg.spread, seed)
    net = build_net(cfg)
    for _ in range(4):
        net.layers[0].buffer.push(t1.mean_direction)
        net.layers[0].buffer.push(t2.mean_direction)
    probe = t1.mean_direction[:, None]
    before = net(probe)
    train_phase(net, t2, 300, cfg.train, phase=2)
    drift = float(np.abs(net(probe) - before).max())
    return drift <= 1e-9, f"task-1 prediction drift {drift:.2e}"


CHECKS: dict[str, Callable[[int, float], tuple[bool, str]]] = {
    "gram_inverse_residual": check_gram_inverse,
    "projector_idempotence": check_projector,
    "exact_memory_preservation": check_preservation,
    "bp_equivalence": check_bp_equivalence,
    "forward_purity": check_forward_purity,
    "finite_difference_gradients": check_finite_differences,
    "gaussian_logprob_gradient": check_gaussian_grad,
    "kmeans_inertia_monotone": check_kmeans_monotone,
    "kmeans_exact_at_distinct_count": check_kmeans_exact,
    "mean_direction_unit_norm": check_mean_direction,
    "checkpoint_round_trip": check_round_trip,
    "two_task_preservation": check_two_task_preservation,
}


def run_checks(seed: int = 0, ridge: float = 0.0) -> list[CheckResult]:
    results = []
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn(seed, ridge)
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail))
    return results
