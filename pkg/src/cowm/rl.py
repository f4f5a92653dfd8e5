"""Stand-then-walk point-mass environment and a one-step TD actor-critic.

Phase 1 rewards holding the mass at the origin, phase 2 rewards moving at
unit speed. The phase is not part of the observation, so switching it makes
the return landscape non-stationary for the same policy network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .layer import CowmLayer
from .network import Mlp, gaussian_logprob_grad, mse_loss
from .numerics import NonFiniteError


class RunError(RuntimeError):
    pass


class EnvUsageError(RuntimeError):
    pass


@dataclass
class PointMassEnv:
    phase: int = 1
    dt: float = 0.05
    max_force: float = 1.0
    episode_len: int = 200
    init_scale: float = 0.0
    position: float = 0.0
    velocity: float = 0.0
    t: int = 0

    def __post_init__(self):
        if self.phase not in (1, 2):
            raise ValueError("phase must be 1 or 2")

    def reset(self, rng: np.random.Generator | None = None, start=None) -> np.ndarray:
        """Start a new episode at `start`, or uniformly within ±init_scale when `rng` is given."""
        if start is not None:
            position, velocity = start
        elif rng is not None and self.init_scale > 0:
            position, velocity = rng.uniform(-self.init_scale, self.init_scale, size=2)
        else:
            position, velocity = 0.0, 0.0
        self.position, self.velocity, self.t = float(position), float(velocity), 0
        return self.observation()

    def observation(self) -> np.ndarray:
        return np.array([self.position, self.velocity])

    @property
    def done(self) -> bool:
        return self.t >= self.episode_len

    def reward(self) -> float:
        if self.phase == 1:
            return math.exp(-self.position**2 / 0.25)
        return math.exp(-((self.velocity - 1.0) ** 2) / 0.25)

    def step(self, action: float) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise EnvUsageError("step() called on a finished episode; call reset()")
        a = min(max(float(action), -self.max_force), self.max_force)
        self.velocity += a * self.dt
        self.position += self.velocity * self.dt
        self.t += 1
        if not (math.isfinite(self.position) and math.isfinite(self.velocity)):
            raise RunError("environment state became non-finite")
        return self.observation(), self.reward(), self.done


def env_step(env: PointMassEnv, action: float):
    return env.step(action)


@dataclass
class EpisodeTrace:
    states: np.ndarray  # (2, T)
    actions: np.ndarray  # (1, T), pre-clip samples
    rewards: np.ndarray  # (T,)
    next_states: np.ndarray  # (2, T)
    dones: np.ndarray  # (T,)
    gamma: float = 0.99

    def __len__(self) -> int:
        return self.rewards.size

    def chunks(self, size: int) -> list["EpisodeTrace"]:
        """Split into consecutive sub-traces of at most `size` transitions."""
        if size <= 0 or size >= len(self):
            return [self]
        return [
            EpisodeTrace(
                self.states[:, i : i + size],
                self.actions[:, i : i + size],
                self.rewards[i : i + size],
                self.next_states[:, i : i + size],
                self.dones[i : i + size],
                self.gamma,
            )
            for i in range(0, len(self), size)
        ]

    @property
    def ret(self) -> float:
        return float(np.sum(self.rewards * self.gamma ** np.arange(len(self))))


@dataclass
class ActorCritic:
    actor: Mlp
    critic: Mlp
    log_std: np.ndarray
    gamma: float = 0.99
    lr_actor: float = 3e-4
    lr_critic: float = 1e-3
    log_std_bounds: tuple[float, float] = (-2.0, 0.5)
    allow_cowm_critic: bool = False

    def __post_init__(self):
        if not self.allow_cowm_critic and any(isinstance(layer, CowmLayer) for layer in self.critic.layers):
            raise ValueError("critic must not contain COWM layers")
        if self.actor.d_in != 2 or self.critic.d_in != 2 or self.critic.d_out != 1:
            raise ValueError("actor and critic must take (position, velocity)")
        self.log_std = np.asarray(self.log_std, dtype=np.float64).ravel().copy()

    @property
    def is_cowm(self) -> bool:
        return any(isinstance(layer, CowmLayer) for layer in self.actor.layers)

    def act(self, obs: np.ndarray) -> np.ndarray:
        return self.actor(obs.reshape(-1, 1))[:, 0]

    def state_hash(self) -> str:
        return self.actor.state_hash() + self.critic.state_hash() + self.log_std.tobytes().hex()


def make_agent(
    kind: str,
    seed: int,
    hidden: tuple[int, ...] = (64, 64),
    *,
    gamma: float = 0.99,
    lr_actor: float = 3e-4,
    lr_critic: float = 1e-3,
    log_std_init: float = -0.5,
    c: int = 2,
    k: int = 10,
    F: int = 64,
    ridge: float = 1e-8,
    cowm_critic: bool = False,
) -> ActorCritic:
    """Build an actor-critic; ``kind="cowm"`` swaps every actor linear layer for a COWM layer.

    Both kinds draw identical initial weights for a given seed.
    """
    if kind not in ("cowm", "bp"):
        raise ValueError(f"agent kind must be 'cowm' or 'bp', got {kind!r}")
    cowm_kwargs = dict(cluster_count=c, cluster_iters=k, capacity=F, ridge=ridge, seed=seed)
    actor = Mlp.build(
        [2, *hidden, 1],
        np.random.default_rng([seed, 11]),
        bias=True,
        output_activation="tanh",
        cowm=kind == "cowm",
        **(cowm_kwargs if kind == "cowm" else {}),
    )
    critic = Mlp.build(
        [2, *hidden, 1],
        np.random.default_rng([seed, 12]),
        bias=True,
        cowm=cowm_critic,
        **(cowm_kwargs if cowm_critic else {}),
    )
    return ActorCritic(
        actor, critic, np.full(1, log_std_init), gamma, lr_actor, lr_critic, allow_cowm_critic=cowm_critic
    )


def collect_episode(
    env: PointMassEnv, agent: ActorCritic, seed: int, deterministic: bool = False, start=None
) -> EpisodeTrace:
    """Roll out one episode with inference-mode forwards (no buffer updates)."""
    rng = np.random.default_rng(seed)
    obs = env.reset(rng, start)
    std = np.exp(agent.log_std)
    states, actions, rewards, nexts, dones = [], [], [], [], []
    while not env.done:
        mean = agent.act(obs)
        action = mean if deterministic else mean + std * rng.standard_normal(mean.shape)
        if not np.all(np.isfinite(action)):
            raise RunError(f"non-finite action at t={env.t}")
        nxt, r, done = env.step(action[0])
        states.append(obs)
        actions.append(action)
        rewards.append(r)
        nexts.append(nxt)
        dones.append(done)
        obs = nxt
    return EpisodeTrace(
        np.array(states).T,
        np.array(actions).T,
        np.array(rewards),
        np.array(nexts).T,
        np.array(dones, dtype=bool),
        agent.gamma,
    )


def a2c_update(agent: ActorCritic, trace: EpisodeTrace) -> tuple[float, float]:
    """One actor-critic step on a whole episode using one-step TD advantages.

    The critic regresses V(s) to ``r + γ·V(s')`` (no bootstrap past a terminal
    step). The actor ascends ``δ·log π(a|s)`` averaged over the trace.
    """
    n = len(trace)
    if n == 0:
        raise ValueError("empty trace")
    values, c_cache = agent.critic.forward(trace.states, training=True)
    next_values = agent.critic(trace.next_states)
    target = trace.rewards + agent.gamma * (~trace.dones) * next_values[0]
    delta = target - values[0]

    critic_loss, critic_grad = mse_loss(values, target[None, :])

    mean, a_cache = agent.actor.forward(trace.states, training=True)
    logp, g_mean, g_log_std = gaussian_logprob_grad(mean, agent.log_std, trace.actions)
    actor_loss = -float(np.mean(delta * logp))
    if not (np.isfinite(actor_loss) and np.isfinite(critic_loss)):
        raise RunError("non-finite loss in a2c_update")
    grad_mean = -(delta[None, :] * g_mean) / n
    grad_log_std = -(delta[None, :] * g_log_std).sum(axis=1) / n

    try:
        agent.critic.backward_and_step(c_cache, critic_grad, agent.lr_critic)
        agent.actor.backward_and_step(a_cache, grad_mean, agent.lr_actor)
    except NonFiniteError as exc:
        raise RunError(f"divergence during update: {exc}") from exc
    lo, hi = agent.log_std_bounds
    agent.log_std = np.clip(agent.log_std - agent.lr_actor * grad_log_std, lo, hi)
    return actor_loss, critic_loss


def eval_starts(init_scale: float, n: int = 8) -> np.ndarray:
    """Fixed start states for evaluation: the origin plus a seeded spread."""
    if init_scale <= 0 or n <= 1:
        return np.zeros((1, 2))
    rng = np.random.default_rng(12345)
    return np.vstack([np.zeros((1, 2)), rng.uniform(-init_scale, init_scale, size=(n - 1, 2))])


def evaluate_return(agent: ActorCritic, phase: int, episode_len: int = 200, init_scale: float = 0.0, n_starts: int = 8) -> float:
    """Mean discounted return of the mean-action policy over `eval_starts`."""
    env = PointMassEnv(phase=phase, episode_len=episode_len)
    starts = eval_starts(init_scale, n_starts)
    return float(np.mean([collect_episode(env, agent, 0, deterministic=True, start=s).ret for s in starts]))


@dataclass
class RLConfig:
    seed: int = 0
    n1: int = 300
    n2: int = 300
    hidden: tuple[int, ...] = (64, 64)
    gamma: float = 0.99
    lr_actor: float = 3e-3
    lr_critic: float = 1e-2
    log_std_init: float = -0.5
    episode_len: int = 200
    init_scale: float = 1.0
    eval_starts: int = 8
    update_chunk: int = 20
    c: int = 2
    k: int = 10
    F: int = 64
    ridge: float = 1e-8
    kinds: tuple[str, ...] = field(default=("cowm", "bp"))


@dataclass
class RetentionReport:
    kind: str
    phase1_return_after_phase1: float
    phase1_return_after_phase2: float
    phase2_return_final: float
    phase1_return_initial: float

    @property
    def retention(self) -> float:
        return self.phase1_return_after_phase2 / max(self.phase1_return_after_phase1, 1e-12)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "phase1_return_initial": self.phase1_return_initial,
            "phase1_return_after_phase1": self.phase1_return_after_phase1,
            "phase1_return_after_phase2": self.phase1_return_after_phase2,
            "phase2_return_final": self.phase2_return_final,
            "retention": self.retention,
        }


def hash_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def train_episode(agent: ActorCritic, phase: int, episode: int, cfg: RLConfig) -> tuple[float, float, float]:
    """Collect one seeded episode and update on it; returns (return, actor_loss, critic_loss)."""
    env = PointMassEnv(phase=phase, episode_len=cfg.episode_len, init_scale=cfg.init_scale)
    trace = collect_episode(env, agent, seed=hash_seed(cfg.seed, phase, episode))
    losses = [a2c_update(agent, part) for part in trace.chunks(cfg.update_chunk)]
    actor_loss, critic_loss = np.mean(losses, axis=0)
    return trace.ret, float(actor_loss), float(critic_loss)


def train_agent(agent: ActorCritic, phase: int, episodes: int, cfg: RLConfig, rows=None, kind: str = "", offset: int = 0):
    for ep in range(episodes):
        ret, actor_loss, critic_loss = train_episode(agent, phase, ep, cfg)
        if rows is not None:
            rows.append((kind, offset + ep, phase, ret, actor_loss, critic_loss))


def run_agent(kind: str, cfg: RLConfig, rows=None, agent: ActorCritic | None = None) -> RetentionReport:
    if agent is None:
        agent = make_agent(
            kind,
            cfg.seed,
            cfg.hidden,
            gamma=cfg.gamma,
            lr_actor=cfg.lr_actor,
            lr_critic=cfg.lr_critic,
            log_std_init=cfg.log_std_init,
            c=cfg.c,
            k=cfg.k,
            F=cfg.F,
            ridge=cfg.ridge,
        )

    def score(phase):
        return evaluate_return(agent, phase, cfg.episode_len, cfg.init_scale, cfg.eval_starts)

    initial = score(1)
    train_agent(agent, 1, cfg.n1, cfg, rows, kind)
    after1 = score(1)
    train_agent(agent, 2, cfg.n2, cfg, rows, kind, offset=cfg.n1)
    return RetentionReport(
        kind=kind,
        phase1_return_after_phase1=after1,
        phase1_return_after_phase2=score(1),
        phase2_return_final=score(2),
        phase1_return_initial=initial,
    )


def run_two_phase(cfg: RLConfig, rows=None) -> dict[str, RetentionReport]:
    """Train each agent kind through phase 1 then phase 2 and report phase-1 retention."""
    return {kind: run_agent(kind, cfg, rows) for kind in cfg.kinds}
