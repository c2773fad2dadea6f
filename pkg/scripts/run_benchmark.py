"""Generate the large-apartment scene set and compare SAGR with the baselines.

Reproduces the numbers behind the search and explore acceptance checks:

    python scripts/run_benchmark.py --jobs 4
    python scripts/run_benchmark.py --scenes 210 --tcoord 50 --out results/bench_t50
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from collections import defaultdict
from pathlib import Path

from sagr.cli import main as sagr

BASELINES = ("HungarianGlobal", "NearestFrontier", "VoronoiFrontier")


def scene_args(args) -> list[str]:
    return ["--rooms", str(args.rooms), "--seed", str(args.first_seed), "--count", str(args.scenes),
            "--size-min", str(args.size_min), "--size-max", str(args.size_max), "--require", "bedroom=2"]


def load_steps(path: Path) -> dict[tuple[str, str], list[int]]:
    steps = defaultdict(list)
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            steps[(rec["task"], rec["label"])].append(rec["steps"])
    return steps


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
    p.add_argument("--out", default="results/bench")
    args = p.parse_args(argv)

    out = Path(args.out)
    scenes = out / "scenes"
    if sagr(["gen", *scene_args(args), "--out", str(scenes)]) != 0:
        return 1
    code = sagr(["bench", "--scenes", str(scenes), "--robots", str(args.robots), "--tcoord", str(args.tcoord),
                 "--seed", str(args.first_seed), "--jobs", str(args.jobs), "--out", str(out)])
    if code == 1:
        return code

    steps = load_steps(out / "episodes.jsonl")
    sagr_search = statistics.fmean(steps[("search", "SAGR")])
    hung = statistics.fmean(steps[("search", "HungarianGlobal")])
    print(f"\nsearch: SAGR {sagr_search:.1f} vs HungarianGlobal {hung:.1f} "
          f"({100 * (1 - sagr_search / hung):.1f}% fewer steps; target >= 10%)")
    sagr_explore = statistics.fmean(steps[("explore", "SAGR")])
    best = min(BASELINES, key=lambda b: statistics.fmean(steps[("explore", b)]))
    best_mean = statistics.fmean(steps[("explore", best)])
    print(f"explore: SAGR {sagr_explore:.1f} vs best baseline {best} {best_mean:.1f} "
          f"({100 * (sagr_explore / best_mean - 1):+.1f}%; limit +15%)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
