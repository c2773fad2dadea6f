"""Run SAGR with each ablation flag on the large-apartment scene set (search task).

    python scripts/run_ablation.py --jobs 4
"""

from __future__ import annotations

import argparse
import statistics
import sys
from pathlib import Path

from run_benchmark import load_steps, scene_args

from sagr.cli import main as sagr


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenes", type=int, default=30)
    p.add_argument("--first-seed", type=int, default=0)
    p.add_argument("--rooms", type=int, default=12)
    p.add_argument("--size-min", type=int, default=6)
    p.add_argument("--size-max", type=int, default=12)
    p.add_argument("--robots", type=int, default=4)
    p.add_argument("--tcoord", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="results/ablation")
    args = p.parse_args(argv)

    out = Path(args.out)
    scenes = out / "scenes"
    if sagr(["gen", *scene_args(args), "--out", str(scenes)]) != 0:
        return 1
    code = sagr(["ablate", "--scenes", str(scenes), "--task", "search", "--robots", str(args.robots),
                 "--tcoord", str(args.tcoord), "--seed", str(args.first_seed), "--jobs", str(args.jobs),
                 "--out", str(out)])
    if code == 1:
        return code

    steps = load_steps(out / "episodes.jsonl")
    full = statistics.fmean(steps[("search", "SAGR")])
    print()
    for label in ("SAGR", "SAGR[no_neighbors]", "SAGR[no_summary]", "SAGR[no_target]"):
        m = statistics.fmean(steps[("search", label)])
        print(f"{label:<20} {m:7.1f} steps  {100 * (m / full - 1):+6.1f}% vs full")
    return 0


if __name__ == "__main__":
    sys.exit(main())
