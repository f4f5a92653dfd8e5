"""Forgetting ratio against the angle between the two task input means."""

import argparse

import numpy as np

from cowm.continual import ContinualConfig, run_sequential


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--angles", default="15,30,45,60,75")
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--spread", type=float, default=0.1)
    args = parser.parse_args()
    print(f"{'angle':>5}  {'cowm':>8}  {'bp':>8}")
    for angle in (float(a) for a in args.angles.split(",")):
        med = {}
        for kind in ("cowm", "bp"):
            ratios = [
                run_sequential(ContinualConfig(kind=kind, angle=angle, spread=args.spread, seed=s)).forgetting_ratio
                for s in range(args.seeds)
            ]
            med[kind] = float(np.median(ratios))
        print(f"{angle:5.0f}  {med['cowm']:8.3f}  {med['bp']:8.3f}")


if __name__ == "__main__":
    main()
