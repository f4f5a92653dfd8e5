"""Command-line experiment runner.

    cowm <command> [--config FILE] [--seed N] [--out DIR] [--set key=value ...] [--workers N]

Every run directory receives ``metrics.csv``, ``report.json`` and
``manifest.json``. Only the manifest carries a timestamp, so reruns with the
same resolved config produce byte-identical metrics.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import spherical_kmeans
from .continual import ContinualConfig, run_sequential
from .layer import CowmLayer
from .rl import PointMassEnv, RLConfig, collect_episode, eval_starts, make_agent, run_agent, train_episode
from .verify import run_checks

log = logging.getLogger("cowm")

COMMANDS = ("verify", "bench-continual", "bench-rl", "ablate", "dump-repr")

CONTINUAL_KEYS = {
    "agent": "both",
    "seeds": 9,
    "c": 2,
    "k": 10,
    "F": 64,
    "ridge": 1e-8,
    "lr": 0.05,
    "steps": 2000,
    "angle": 45.0,
    "spread": 0.1,
    "d_in": 16,
    "d_out": 4,
    "batch_size": 32,
    "eval_every": 100,
}

RL_KEYS = {
    "agent": "both",
    "seeds": 5,
    "c": 2,
    "k": 10,
    "F": 64,
    "ridge": 1e-8,
    "n1": 300,
    "n2": 300,
    "lr_actor": 3e-3,
    "lr_critic": 1e-2,
    "init_scale": 1.0,
    "update_chunk": 20,
    "log_std_init": -0.5,
    "hidden": "64,64",
}

DEFAULTS: dict[str, dict] = {
    "verify": {"ridge": 0.0},
    "bench-continual": CONTINUAL_KEYS,
    "bench-rl": RL_KEYS,
    "ablate": {
        **CONTINUAL_KEYS,
        "agent": "cowm",
        "grid_c": "2,3,5",
        "grid_k": "2,10,50",
        "with_rl": False,
        "rl_seeds": 3,
    },
    "dump-repr": {
        **{k: v for k, v in RL_KEYS.items() if k not in ("agent", "seeds")},
        "layer_index": 1,
        "num_snapshots": 5,
    },
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw, default):
    if isinstance(raw, str) and not isinstance(default, str):
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
        try:
            return type(default)(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from exc
    if isinstance(default, float) and isinstance(raw, int) and not isinstance(raw, bool):
        return float(raw)
    if isinstance(default, str) and not isinstance(raw, str):
        return ",".join(str(v) for v in raw) if isinstance(raw, list) else str(raw)
    if type(raw) is not type(default):
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {raw!r}")
    return raw


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    output_dir: Path = Path("runs")
    overrides: dict = field(default_factory=dict)
    workers: int = 1

    def resolved(self) -> dict:
        if self.command not in DEFAULTS:
            raise ConfigError(f"unknown command {self.command!r}")
        defaults = DEFAULTS[self.command]
        unknown = sorted(set(self.overrides) - set(defaults))
        if unknown:
            raise ConfigError(f"unknown override keys for {self.command}: {', '.join(unknown)}")
        params = dict(defaults)
        for key, raw in self.overrides.items():
            params[key] = _coerce(key, raw, defaults[key])
        return params


def _agents(choice: str) -> list[str]:
    if choice == "both":
        return ["cowm", "bp"]
    if choice not in ("cowm", "bp"):
        raise ConfigError(f"agent must be cowm, bp or both, got {choice!r}")
    return [choice]


def _map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(job) for job in jobs]


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# continual benchmark ------------------------------------------------------


def continual_config(params: dict, kind: str, seed: int, **extra) -> ContinualConfig:
    return ContinualConfig(
        kind=kind,
        d_in=params["d_in"],
        d_out=params["d_out"],
        angle=params["angle"],
        spread=params["spread"],
        steps=params["steps"],
        lr=params["lr"],
        batch_size=params["batch_size"],
        eval_every=params["eval_every"],
        c=extra.get("c", params["c"]),
        k=extra.get("k", params["k"]),
        F=params["F"],
        ridge=params["ridge"],
        seed=seed,
    )


def _continual_job(job):
    params, kind, seed, extra = job
    rows = []
    report = run_sequential(continual_config(params, kind, seed, **extra), rows=rows)
    return (kind, seed, extra), report.to_dict(), rows


def _summary(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {
        "median": float(np.median(v)),
        "q25": float(np.quantile(v, 0.25)),
        "q75": float(np.quantile(v, 0.75)),
        "n": int(v.size),
    }


def cmd_bench_continual(params: dict, seed: int, out: Path, workers: int) -> dict:
    seeds = [seed + i for i in range(params["seeds"])]
    jobs = [(params, kind, s, {}) for kind in _agents(params["agent"]) for s in seeds]
    results = sorted(_map(_continual_job, jobs, workers), key=lambda r: (r[0][0], r[0][1]))
    rows = [(kind, s, *row) for (kind, s, _), _, rr in results for row in rr]
    write_csv(out / "metrics.csv", ["agent", "seed", "step", "phase", "task1_loss", "task2_loss"], rows)
    runs = [{"agent": kind, "seed": s, **rep} for (kind, s, _), rep, _ in results]
    summary = {
        kind: _summary([r["forgetting_ratio"] for r in runs if r["agent"] == kind]) for kind in _agents(params["agent"])
    }
    return {"runs": runs, "forgetting_ratio": summary}


# RL harness ---------------------------------------------------------------


def rl_config(params: dict, seed: int, kinds=("cowm", "bp"), **extra) -> RLConfig:
    return RLConfig(
        seed=seed,
        n1=params["n1"],
        n2=params["n2"],
        hidden=tuple(_int_list(params["hidden"])),
        lr_actor=params["lr_actor"],
        lr_critic=params["lr_critic"],
        log_std_init=params["log_std_init"],
        init_scale=params["init_scale"],
        update_chunk=params["update_chunk"],
        c=extra.get("c", params["c"]),
        k=extra.get("k", params["k"]),
        F=params["F"],
        ridge=params["ridge"],
        kinds=tuple(kinds),
    )


def _rl_job(job):
    params, kind, seed, extra = job
    rows = []
    report = run_agent(kind, rl_config(params, seed, (kind,), **extra), rows=rows)
    return (kind, seed, extra), report.to_dict(), rows


def cmd_bench_rl(params: dict, seed: int, out: Path, workers: int) -> dict:
    seeds = [seed + i for i in range(params["seeds"])]
    jobs = [(params, kind, s, {}) for kind in _agents(params["agent"]) for s in seeds]
    results = sorted(_map(_rl_job, jobs, workers), key=lambda r: (r[0][0], r[0][1]))
    rows = [(kind, s, ep, phase, ret, al, cl) for (kind, s, _), _, rr in results for (_, ep, phase, ret, al, cl) in rr]
    write_csv(out / "metrics.csv", ["agent", "seed", "episode", "phase", "return", "actor_loss", "critic_loss"], rows)
    runs = [{"seed": s, **rep} for (kind, s, _), rep, _ in results]
    summary = {k: _summary([r["retention"] for r in runs if r["kind"] == k]) for k in _agents(params["agent"])}
    return {"runs": runs, "retention": summary}


# ablation -----------------------------------------------------------------


def ablation_grid(params: dict) -> list[tuple[int, int]]:
    cs, ks = _int_list(params["grid_c"]), _int_list(params["grid_k"])
    if not cs or not ks:
        raise ConfigError("ablation grids must be non-empty")
    if any(c < 2 for c in cs) or any(k < 1 for k in ks):
        raise ConfigError("grid values need c >= 2 and k >= 1")
    return [(c, k) for c in cs for k in ks]


def cmd_ablate(params: dict, seed: int, out: Path, workers: int) -> dict:
    grid = ablation_grid(params)
    seeds = [seed + i for i in range(params["seeds"])]
    kind = params["agent"]
    if kind not in ("cowm", "bp"):
        raise ConfigError("ablate runs a single agent kind")
    jobs = [(params, kind, s, {"c": c, "k": k}) for c, k in grid for s in seeds]
    results = _map(_continual_job, jobs, workers)
    by_cell: dict[tuple[int, int], list[dict]] = {}
    for (_, s, extra), rep, _ in results:
        by_cell.setdefault((extra["c"], extra["k"]), []).append({"seed": s, **rep})

    rl_by_cell: dict[tuple[int, int], list[float]] = {}
    if params["with_rl"]:
        rl_params = {**RL_KEYS, **{k: params[k] for k in ("F", "ridge")}}
        rl_jobs = [
            (rl_params, "cowm", seed + i, {"c": c, "k": k}) for c, k in grid for i in range(params["rl_seeds"])
        ]
        for (_, _, extra), rep, _ in _map(_rl_job, rl_jobs, workers):
            rl_by_cell.setdefault((extra["c"], extra["k"]), []).append(rep["retention"])

    header = ["c", "k", "median_forgetting_ratio", "q25_forgetting_ratio", "q75_forgetting_ratio", "median_task2_loss"]
    if params["with_rl"]:
        header.append("median_retention")
    rows, cells = [], []
    for c, k in sorted(by_cell):
        runs = sorted(by_cell[(c, k)], key=lambda r: r["seed"])
        fr = _summary([r["forgetting_ratio"] for r in runs])
        row = [c, k, fr["median"], fr["q25"], fr["q75"], float(np.median([r["task2_loss_final"] for r in runs]))]
        cell = {"c": c, "k": k, "forgetting_ratio": fr, "runs": runs}
        if params["with_rl"]:
            ret = float(np.median(rl_by_cell[(c, k)]))
            row.append(ret)
            cell["median_retention"] = ret
        rows.append(row)
        cells.append(cell)
    write_csv(out / "metrics.csv", header, rows)
    return {"cells": cells}


# representation dump ------------------------------------------------------


def cmd_dump_repr(params: dict, seed: int, out: Path, workers: int) -> dict:
    cfg = rl_config(params, seed, ("cowm",))
    agent = make_agent(
        "cowm", seed, cfg.hidden, lr_actor=cfg.lr_actor, lr_critic=cfg.lr_critic,
        log_std_init=cfg.log_std_init, c=cfg.c, k=cfg.k, F=cfg.F, ridge=cfg.ridge,
    )
    li = params["layer_index"]
    if not 0 <= li < agent.actor.depth:
        raise ConfigError(f"layer_index must be in [0, {agent.actor.depth}), got {li}")
    n_snap = params["num_snapshots"]
    if n_snap < 1:
        raise ConfigError("num_snapshots must be positive")
    total = cfg.n1 + cfg.n2
    stages = sorted({round(i * total / max(n_snap - 1, 1)) for i in range(n_snap)}) if n_snap > 1 else [total]
    if len(stages) != n_snap:
        raise ConfigError(f"cannot place {n_snap} distinct snapshots in {total} episodes")

    rows, summary = [], []
    done = 0
    for stage, episode in enumerate(stages):
        for ep in range(done, episode):
            if ep < cfg.n1:
                train_episode(agent, 1, ep, cfg)
            else:
                train_episode(agent, 2, ep - cfg.n1, cfg)
        done = episode
        phase = 1 if episode <= cfg.n1 else 2
        env = PointMassEnv(phase=phase, episode_len=cfg.episode_len)
        states = np.hstack(
            [collect_episode(env, agent, 0, deterministic=True, start=s).states for s in eval_starts(cfg.init_scale, 4)]
        )
        _, cache = agent.actor.forward(states, training=False)
        reps = cache.inputs[li]
        layer = agent.actor.layers[li]
        if isinstance(layer, CowmLayer) and layer.clusters is not None:
            centers, source = layer.clusters.centers, "buffer"
        else:
            # no clustering yet: cluster this snapshot's own representation directions
            norms = np.linalg.norm(reps, axis=0)
            dirs = (reps[:, norms > 1e-12] / norms[norms > 1e-12]).T
            centers, source = spherical_kmeans(dirs, cfg.c, cfg.k, seed).centers, "snapshot"
        for j, col in enumerate(reps.T):
            rows.append((stage, episode, "repr", j, source, *col))
        for j, center in enumerate(centers):
            rows.append((stage, episode, "center", j, source, *center))
        summary.append({"stage": stage, "episode": episode, "phase": phase, "centers": len(centers), "source": source})
    dim = agent.actor.layers[li].d_in
    write_csv(out / "metrics.csv", ["stage", "episode", "kind", "index", "source", *[f"v{i}" for i in range(dim)]], rows)
    return {"layer_index": li, "stages": summary}


# verify -------------------------------------------------------------------


def cmd_verify(params: dict, seed: int, out: Path, workers: int) -> dict:
    results = run_checks(seed, params["ridge"])
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    write_csv(out / "metrics.csv", ["check", "passed", "detail"], [(r.name, int(r.passed), r.detail) for r in results])
    return {"checks": [r.__dict__ for r in results], "all_passed": all(r.passed for r in results)}


HANDLERS = {
    "verify": cmd_verify,
    "bench-continual": cmd_bench_continual,
    "bench-rl": cmd_bench_rl,
    "ablate": cmd_ablate,
    "dump-repr": cmd_dump_repr,
}


def parse_args(argv=None) -> RunConfig:
    parser = argparse.ArgumentParser(prog="cowm", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, help="JSON file of flat overrides")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", type=Path, help="run directory (created if absent)")
    parser.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--workers", type=int)
    args = parser.parse_args(argv)

    file_cfg = {}
    if args.config is not None:
        file_cfg = json.loads(args.config.read_text())
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
    overrides = {k: v for k, v in file_cfg.items() if k not in ("seed", "out", "workers")}
    for item in args.sets:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    seed = args.seed if args.seed is not None else int(file_cfg.get("seed", 0))
    out = args.out if args.out is not None else Path(file_cfg.get("out", f"runs/{args.command}"))
    workers = args.workers if args.workers is not None else int(file_cfg.get("workers", 1))
    return RunConfig(args.command, seed, out, overrides, max(1, workers))


def execute(cfg: RunConfig) -> tuple[int, dict]:
    params = cfg.resolved()
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    report = HANDLERS[cfg.command](params, cfg.seed, cfg.output_dir, cfg.workers)
    write_json(cfg.output_dir / "report.json", report)
    write_json(
        cfg.output_dir / "manifest.json",
        {
            "command": cfg.command,
            "seed": cfg.seed,
            "workers": cfg.workers,
            "params": params,
            "version": __version__,
            "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        },
    )
    status = 0 if report.get("all_passed", True) else 1
    return status, report


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_args(argv)
        status, _ = execute(cfg)
    except ConfigError as exc:
        print(f"cowm: error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {cfg.output_dir / 'metrics.csv'}")
    return status


if __name__ == "__main__":
    sys.exit(main())
