"""Sweep cluster count c and k-means iterations k on the continual toy.

Prints the median forgetting ratio per cell with its interquartile band, and
optionally the RL retention per cell (slow).
"""

import argparse
from pathlib import Path

from cowm.cli import RunConfig, execute


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("runs/ablation"))
    parser.add_argument("--grid-c", default="2,3,5")
    parser.add_argument("--grid-k", default="1,2,10,50")
    parser.add_argument("--with-rl", action="store_true")
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()
    overrides = {"grid_c": args.grid_c, "grid_k": args.grid_k, "with_rl": args.with_rl}
    _, doc = execute(RunConfig("ablate", 0, args.out, overrides, args.workers))
    print(f"{'c':>3} {'k':>3}  median   [q25, q75]")
    for cell in doc["cells"]:
        fr = cell["forgetting_ratio"]
        line = f"{cell['c']:>3} {cell['k']:>3}  {fr['median']:.4f} [{fr['q25']:.4f}, {fr['q75']:.4f}]"
        if "median_retention" in cell:
            line += f"  retention {cell['median_retention']:.3f}"
        print(line)


if __name__ == "__main__":
    main()
