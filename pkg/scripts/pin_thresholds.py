"""Oracle run used to pin the benchmark pass thresholds.

Runs both benchmarks at their default settings, prints per-seed results and
medians, and reports the margins that the acceptance tests were frozen at.
Takes roughly three minutes on one core.
"""

import argparse
import tempfile
from pathlib import Path

from cowm.cli import RunConfig, execute


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        _, cont = execute(RunConfig("bench-continual", args.seed, Path(tmp) / "c"))
        _, rl = execute(RunConfig("bench-rl", args.seed, Path(tmp) / "r"))

    print("continual benchmark (forgetting ratio, lower is better)")
    for run in cont["runs"]:
        print(f"  {run['agent']:4s} seed {run['seed']}: {run['forgetting_ratio']:.3f}"
              f"  (task-1 loss {run['task1_loss_after_task1']:.4f} -> {run['task1_loss_after_task2']:.4f})")
    fc, fb = (cont["forgetting_ratio"][k]["median"] for k in ("cowm", "bp"))
    print(f"  medians: cowm {fc:.3f}, bp {fb:.3f}, cowm/bp = {fc / fb:.3f}")

    print("RL toy (phase-1 retention, higher is better)")
    for run in rl["runs"]:
        print(f"  {run['kind']:4s} seed {run['seed']}: {run['retention']:.3f}"
              f"  (phase-1 return {run['phase1_return_after_phase1']:.1f} -> {run['phase1_return_after_phase2']:.1f},"
              f" phase-2 final {run['phase2_return_final']:.1f})")
    rc, rb = (rl["retention"][k]["median"] for k in ("cowm", "bp"))
    print(f"  medians: cowm {rc:.3f}, bp {rb:.3f}, gap = {rc - rb:.3f}")

    print("frozen thresholds: continual cowm <= 0.5 x bp; RL cowm >= bp + 0.25")


if __name__ == "__main__":
    main()
