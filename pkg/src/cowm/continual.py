"""Two-task sequential regression benchmark measuring forgetting."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .network import Mlp, TrainConfig, mse_loss
from .numerics import NonFiniteError

EVAL_SEED = 2**31 - 1


class RunError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    mean_direction: np.ndarray
    spread: float
    target_map: np.ndarray
    sample_seed: int

    def __post_init__(self):
        if abs(np.linalg.norm(self.mean_direction) - 1.0) > 1e-12:
            raise ValueError("mean_direction must be a unit vector")
        if self.spread < 0:
            raise ValueError("spread must be non-negative")


@dataclass
class ForgettingReport:
    task1_loss_after_task1: float
    task1_loss_after_task2: float
    task2_loss_final: float
    task1_loss_initial: float = math.nan
    task2_loss_after_task1: float = math.nan

    @property
    def forgetting_ratio(self) -> float:
        return self.task1_loss_after_task2 / max(self.task1_loss_after_task1, 1e-12)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["forgetting_ratio"] = self.forgetting_ratio
        return d


@dataclass
class ContinualConfig:
    """Settings for one sequential two-task run.

    `kind` is ``"cowm"`` or ``"bp"``. `hidden` lists hidden-layer widths; the
    default is a single linear layer.
    """

    kind: str = "cowm"
    d_in: int = 16
    d_out: int = 4
    hidden: tuple[int, ...] = ()
    angle: float = 45.0
    spread: float = 0.1
    steps: int = 2000
    lr: float = 0.05
    batch_size: int = 32
    eval_batch: int = 256
    eval_every: int = 100
    c: int = 2
    k: int = 10
    F: int = 64
    ridge: float = 1e-8
    seed: int = 0
    train: TrainConfig = field(init=False)

    def __post_init__(self):
        if self.kind not in ("cowm", "bp"):
            raise ValueError(f"kind must be 'cowm' or 'bp', got {self.kind!r}")
        self.train = TrainConfig(lr=self.lr, batch_size=self.batch_size, steps=self.steps, seed=self.seed)


def make_task_pair(d_in: int, d_out: int, angle_degrees: float, spread: float, seed: int) -> tuple[TaskSpec, TaskSpec]:
    """Two linear-regression tasks whose input means subtend `angle_degrees`."""
    if not 0.0 <= angle_degrees <= 90.0:
        raise ValueError(f"angle must lie in [0, 90], got {angle_degrees}")
    if d_in < 2:
        raise ValueError("d_in must be at least 2")
    rng = np.random.default_rng(seed)
    # orthonormal pair from QR of a Gaussian block
    q, _ = np.linalg.qr(rng.standard_normal((d_in, 2)))
    e1, e2 = q[:, 0], q[:, 1]
    theta = math.radians(angle_degrees)
    m1 = e1
    if angle_degrees == 90.0:
        m2 = e2
    else:
        m2 = math.cos(theta) * e1 + math.sin(theta) * e2
        m2 = m2 / np.linalg.norm(m2)
    maps = rng.standard_normal((2, d_in, d_out)) / math.sqrt(d_in)
    seeds = rng.integers(0, 2**31 - 1, size=2)
    return (
        TaskSpec(m1, spread, maps[0], int(seeds[0])),
        TaskSpec(m2, spread, maps[1], int(seeds[1])),
    )


def sample_batch(task: TaskSpec, b: int, step_seed: int) -> tuple[np.ndarray, np.ndarray]:
    if b < 1:
        raise ValueError("batch size must be >= 1")
    rng = np.random.default_rng([task.sample_seed, step_seed])
    x = task.mean_direction[:, None] + task.spread * rng.standard_normal((task.mean_direction.size, b))
    return x, task.target_map.T @ x


def build_net(cfg: ContinualConfig) -> Mlp:
    rng = np.random.default_rng([cfg.seed, 1])
    sizes = [cfg.d_in, *cfg.hidden, cfg.d_out]
    return Mlp.build(
        sizes,
        rng,
        cowm=cfg.kind == "cowm",
        **(
            dict(cluster_count=cfg.c, cluster_iters=cfg.k, capacity=cfg.F, ridge=cfg.ridge, seed=cfg.seed)
            if cfg.kind == "cowm"
            else {}
        ),
    )


def evaluate(net: Mlp, task: TaskSpec, b: int) -> float:
    x, y = sample_batch(task, b, EVAL_SEED)
    return mse_loss(net(x), y)[0]


def train_phase(net: Mlp, task: TaskSpec, steps: int, cfg: TrainConfig, phase: int, on_step=None) -> None:
    for step in range(steps):
        x, y = sample_batch(task, cfg.batch_size, phase * 10_000_000 + step)
        pred, cache = net.forward(x, training=True)
        try:
            loss, grad = mse_loss(pred, y)
            net.backward_and_step(cache, grad, cfg.lr)
        except NonFiniteError as exc:
            raise RunError(f"divergence in phase {phase} at step {step}: {exc}") from exc
        if on_step is not None:
            on_step(step + 1)


def run_sequential(cfg: ContinualConfig, tasks=None, net: Mlp | None = None, rows: list | None = None) -> ForgettingReport:
    """Train on task 1, then task 2, and report task-1 forgetting.

    When `rows` is a list, ``(step, phase, task1_loss, task2_loss)`` tuples are
    appended every ``cfg.eval_every`` steps.
    """
    if tasks is None:
        tasks = make_task_pair(cfg.d_in, cfg.d_out, cfg.angle, cfg.spread, cfg.seed)
    t1, t2 = tasks
    net = build_net(cfg) if net is None else net

    def record(phase, step):
        if rows is not None and (step % cfg.eval_every == 0 or step == cfg.steps):
            rows.append((step, phase, evaluate(net, t1, cfg.eval_batch), evaluate(net, t2, cfg.eval_batch)))

    initial = evaluate(net, t1, cfg.eval_batch)
    record(1, 0)
    train_phase(net, t1, cfg.steps, cfg.train, 1, lambda s: record(1, s))
    after1 = evaluate(net, t1, cfg.eval_batch)
    t2_after1 = evaluate(net, t2, cfg.eval_batch)
    train_phase(net, t2, cfg.steps, cfg.train, 2, lambda s: record(2, s))
    report = ForgettingReport(
        task1_loss_after_task1=after1,
        task1_loss_after_task2=evaluate(net, t1, cfg.eval_batch),
        task2_loss_final=evaluate(net, t2, cfg.eval_batch),
        task1_loss_initial=initial,
        task2_loss_after_task1=t2_after1,
    )
    for v in asdict(report).values():
        if not np.isfinite(v) or v < 0:
            raise RunError(f"invalid loss in report: {report}")
    return report
