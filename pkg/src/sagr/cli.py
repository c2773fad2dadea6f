"""Command-line entry points: ``gen``, ``run``, ``bench`` and ``ablate``.

Exit codes: 0 when every episode completed, 2 when at least one hit
``max_steps`` without completing, 1 on configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .planner import Ablation, EndpointConfig
from .sensing import ObservedMap, SensorConfig
from .sim import (
    METRIC_COLUMNS,
    ConfigError,
    Episode,
    EpisodeConfig,
    EpisodeResult,
    PlannerKind,
    Strategy,
    compute_metrics,
    run_episode,
)
from .world import (
    GenerationError,
    NO_LABEL,
    InfeasibleScenario,
    Occupancy,
    ParseError,
    SceneParams,
    Task,
    ValidationError,
    generate_scene,
    load_scene,
    _legend_letters,
    mixed_room_labels,
    sample_scenario,
    save_scene,
)

logger = logging.getLogger("sagr")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_INCOMPLETE = 0, 1, 2
CSV_COLUMNS = METRIC_COLUMNS[:7]
ABLATIONS = ("full", "no_neighbors", "no_summary", "no_target")
CONFIG_ERRORS = (ConfigError, ParseError, ValidationError, InfeasibleScenario, GenerationError,
                 FileNotFoundError, ValueError, KeyError)


@dataclass(frozen=True)
class RunSpec:
    """One episode, in plain values so it can cross process boundaries."""

    scene: str
    strategy: str = Strategy.SAGR.value
    planner: str = PlannerKind.RULE.value
    robots: int = 4
    task: str = Task.SEARCH.value
    target_type: str = "bedroom"
    tcoord: int = 50
    pi: float = 0.95
    seed: int = 0
    ablation: str = "full"
    max_steps: int = 5000
    start_radius: int | None = None
    fov_deg: float = 90.0
    sensor_range: int = 10


@dataclass
class RunManifest:
    episodes: list[RunSpec]
    out: str = "runs"
    jobs: int = 1
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> None:
        missing = sorted({e.scene for e in self.episodes if not Path(e.scene).exists()})
        if missing:
            raise ConfigError(f"scene files not found: {', '.join(missing)}")
        if self.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        Path(self.out).mkdir(parents=True, exist_ok=True)

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "out": self.out, "jobs": self.jobs,
                "episodes": [asdict(e) for e in self.episodes]}

    @classmethod
    def from_dict(cls, data: dict) -> RunManifest:
        if data.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ConfigError(f"unsupported manifest schema {data.get('schema_version')}")
        names = {f.name for f in fields(RunSpec)}
        episodes = []
        for item in data["episodes"]:
            extra = set(item) - names
            if extra:
                raise ConfigError(f"unknown episode keys: {sorted(extra)}")
            episodes.append(RunSpec(**item))
        return cls(episodes, data.get("out", "runs"), int(data.get("jobs", 1)))


def parse_planner(text: str) -> tuple[PlannerKind, str | None]:
    if text.startswith("mock:"):
        path = text[len("mock:"):]
        if not path:
            raise ConfigError("mock planner needs a path: mock:PATH")
        return PlannerKind.MOCK, path
    try:
        return PlannerKind(text), None
    except ValueError:
        raise ConfigError(f"unknown planner {text!r}; expected llm, rule or mock:PATH") from None


def episode_config(spec: RunSpec) -> EpisodeConfig:
    scene = load_scene(spec.scene)
    task = Task(spec.task)
    target = spec.target_type
    if task == Task.EXPLORE and target not in scene.grid.labels:
        target = scene.grid.labels[0]
    scenario = sample_scenario(scene, spec.robots, target, spec.seed, task=task,
                               start_radius=spec.start_radius)
    kind, script = parse_planner(spec.planner)
    return EpisodeConfig(
        scenario=scenario,
        strategy=Strategy(spec.strategy),
        planner=kind,
        mock_script=script,
        endpoint=EndpointConfig() if kind == PlannerKind.LLM else None,
        t_coord=spec.tcoord,
        pi_threshold=spec.pi,
        max_steps=spec.max_steps,
        ablation=Ablation.parse(spec.ablation),
        seed=spec.seed,
        sensor=SensorConfig(d_det=spec.sensor_range, theta_det=math.radians(spec.fov_deg)),
        record_positions=False,
    )


def run_spec(spec: RunSpec) -> dict:
    """Worker entry point: run one episode and return its summary record."""
    result = run_episode(episode_config(spec))
    return {**result.summary(), "spec": asdict(spec)}


def run_all(specs: Sequence[RunSpec], jobs: int = 1) -> list[dict]:
    if jobs <= 1 or len(specs) <= 1:
        return [run_spec(s) for s in specs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_spec, specs))


# ---------------------------------------------------------------------------
# output helpers

def write_csv(rows: Sequence[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})


def write_jsonl(records: Sequence[dict], path: Path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


PGM_UNKNOWN, PGM_FREE, PGM_OCCUPIED, PGM_ROBOT = 128, 255, 0, 64


def snapshot_pgm(observed: ObservedMap, robots=(), path: Path | None = None) -> bytes:
    """Binary PGM of the observed map: unknown grey, free white, occupied black, robots dark grey."""
    occ = observed.grid.occupancy
    img = np.full(occ.shape, PGM_UNKNOWN, dtype=np.uint8)
    img[occ == Occupancy.FREE] = PGM_FREE
    img[occ == Occupancy.OCCUPIED] = PGM_OCCUPIED
    for rb in robots:
        img[rb.y, rb.x] = PGM_ROBOT
    data = f"P5\n{occ.shape[1]} {occ.shape[0]}\n255\n".encode() + img.tobytes()
    if path is not None:
        Path(path).write_bytes(data)
    return data


def snapshot_text(observed: ObservedMap, robots=(), path: Path | None = None) -> str:
    """Observed map in the scene-file tokens; unlabeled free is '_', robot k is digit k mod 10."""
    grid = observed.grid
    letters = _legend_letters(grid.labels)
    rows = []
    for y in range(grid.height):
        row = []
        for x in range(grid.width):
            occ = grid.occupancy[y, x]
            if occ == Occupancy.OCCUPIED:
                row.append("#")
            elif occ == Occupancy.UNKNOWN:
                row.append(".")
            else:
                sem = int(grid.semantic[y, x])
                row.append("_" if sem == NO_LABEL else letters[grid.labels[sem]])
        rows.append(row)
    for k, rb in enumerate(robots):
        rows[rb.y][rb.x] = str(k % 10)
    text = "\n".join("".join(r) for r in rows) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        items = sorted(obj) if isinstance(obj, (set, frozenset)) else obj
        return [_jsonable(v) for v in items]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def episode_records(result: EpisodeResult, header: dict) -> list[dict]:
    records = [header]
    records += [_jsonable(c) for c in result.cycles]
    records += [{"kind": "event", **e} for e in result.events]
    records.append({**result.summary(), "coverage_curve": result.coverage_curve})
    return records


# ---------------------------------------------------------------------------
# argument handling

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are configuration errors, not incomplete runs
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


RUN_DEFAULTS = {f.name: f.default for f in fields(RunSpec) if f.name != "scene"}
RUN_DEFAULTS.update({"scene": None, "snapshots": False, "out": "runs", "jobs": 1})


def _episode_flags(p: argparse.ArgumentParser, with_scene: bool = True) -> None:
    # every default is None so the config layer can tell an explicit flag apart
    if with_scene:
        p.add_argument("--scene", default=None, help="scene text file (sidecar JSON optional)")
    p.add_argument("--strategy", default=None, help="SAGR, HungarianGlobal, NearestFrontier or VoronoiFrontier")
    p.add_argument("--planner", default=None, help="llm | rule | mock:PATH")
    p.add_argument("--robots", type=int, default=None)
    p.add_argument("--task", choices=[t.value for t in Task], default=None)
    p.add_argument("--target-type", dest="target_type", default=None)
    p.add_argument("--tcoord", type=int, default=None, help="coordination period in steps (default 50)")
    p.add_argument("--pi", type=float, default=None, help="explore coverage threshold (default 0.95)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ablation", default=None, help="full or e.g. no_target+no_summary")
    p.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    p.add_argument("--start-radius", dest="start_radius", type=int, default=None,
                   help="deploy robots within this many path hops of one anchor cell")
    p.add_argument("--fov", dest="fov_deg", type=float, default=None, help="sensor field of view, degrees (default 90)")
    p.add_argument("--range", dest="sensor_range", type=int, default=None, help="sensor range in cells (default 10)")
    p.add_argument("--config", default=None, help="JSON file with any of the flag values")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--jobs", type=int, default=None)


def resolve(args: argparse.Namespace, defaults: dict) -> tuple[dict, dict]:
    """Merge flags > config file > defaults; returns (values, source per key)."""
    file_values = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_values = json.load(fh)
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    values, sources = {}, {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            values[key], sources[key] = flag, "flag"
        elif key in file_values:
            values[key], sources[key] = file_values[key], "config"
        else:
            values[key], sources[key] = default, "default"
    return values, sources


def _spec_from(values: dict, scene: str) -> RunSpec:
    kw = {f.name: values[f.name] for f in fields(RunSpec) if f.name != "scene"}
    return RunSpec(scene=scene, **kw)


def _validate_spec(spec: RunSpec) -> None:
    Strategy(spec.strategy)
    parse_planner(spec.planner)
    Ablation.parse(spec.ablation)
    Task(spec.task)
    if spec.robots < 1:
        raise ConfigError("--robots must be >= 1")
    if not 0 < spec.fov_deg <= 360 or spec.sensor_range < 1:
        raise ConfigError("--fov must be in (0, 360] and --range >= 1")


# ---------------------------------------------------------------------------
# commands

def cmd_gen(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    required = {}
    for item in args.require or []:
        label, _, n = item.partition("=")
        required[label] = int(n or 1)
    entries = []
    for i in range(args.count):
        seed = args.seed + i
        labels = mixed_room_labels(args.rooms, seed, required) if required else None
        params = SceneParams(rooms=args.rooms, room_size_range=(args.size_min, args.size_max), seed=seed,
                             room_labels=labels, name=f"scene_{seed:04d}")
        scene = generate_scene(params)
        path = save_scene(scene, out / f"{params.name}.txt")
        load_scene(path)  # round trip through the validating loader
        entries.append({"file": path.name, "seed": seed, "rooms": args.rooms,
                        "size_range": [args.size_min, args.size_max], "free_cells": scene.free_cell_count()})
    manifest = {"schema_version": SCHEMA_VERSION, "kind": "scenes", "scenes": entries}
    (out / "scenes.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(entries)} scenes to {out}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    values, sources = resolve(args, RUN_DEFAULTS)
    if not values["scene"]:
        raise ConfigError("--scene is required")
    if not Path(values["scene"]).exists():
        raise ConfigError(f"scene file not found: {values['scene']}")
    spec = _spec_from(values, values["scene"])
    _validate_spec(spec)
    cfg = episode_config(spec)
    out = Path(values["out"])
    out.mkdir(parents=True, exist_ok=True)
    on_cycle = None
    if values["snapshots"]:
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)

        def on_cycle(ep: Episode, record: dict) -> None:
            stem = snap_dir / f"cycle_{record['cycle']:04d}"
            snapshot_pgm(ep.observed, ep.robots, stem.with_suffix(".pgm"))
            snapshot_text(ep.observed, ep.robots, stem.with_suffix(".txt"))

    episode = Episode(cfg, on_cycle)
    result = episode.run()
    if values["snapshots"]:
        snapshot_pgm(episode.observed, episode.robots, out / "snapshots" / "final.pgm")
        snapshot_text(episode.observed, episode.robots, out / "snapshots" / "final.txt")
    header = {"kind": "header", "schema_version": SCHEMA_VERSION, "spec": asdict(spec),
              "sources": sources, "effective": result.meta}
    write_jsonl(episode_records(result, header), out / "episode.jsonl")
    state = "completed" if result.completed else "incomplete"
    print(f"{result.meta['label']} {result.meta['task']} {state} in {result.steps} steps -> {out / 'episode.jsonl'}")
    return EXIT_OK if result.completed else EXIT_INCOMPLETE


def _scene_files(pattern: str) -> list[str]:
    path = Path(pattern)
    if path.is_dir():
        files = sorted(str(p) for p in path.glob("*.txt"))
    else:
        files = sorted(glob.glob(pattern))
    if not files:
        raise ConfigError(f"no scene files match {pattern}")
    return files


BENCH_DEFAULTS = {**RUN_DEFAULTS, "strategy": ",".join(s.value for s in Strategy),
                  "task": "search,explore", "manifest": None, "scenes": None}


def _expand(values: dict, ablations: Sequence[str] | None = None) -> list[RunSpec]:
    scenes = _scene_files(values["scenes"])
    strategies = [s.strip() for s in str(values["strategy"]).split(",") if s.strip()]
    tasks = [t.strip() for t in str(values["task"]).split(",") if t.strip()]
    specs = []
    for k, scene in enumerate(scenes):
        for task in tasks:
            if ablations is None:
                for strat in strategies:
                    specs.append(_spec_from({**values, "strategy": strat, "task": task,
                                             "seed": values["seed"] + k}, scene))
            else:
                for ab in ablations:
                    specs.append(_spec_from({**values, "strategy": Strategy.SAGR.value, "task": task,
                                             "ablation": ab, "seed": values["seed"] + k}, scene))
    return specs


def _run_manifest(manifest: RunManifest) -> int:
    manifest.validate()
    for spec in manifest.episodes:
        _validate_spec(spec)
    out = Path(manifest.out)
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    records = run_all(manifest.episodes, manifest.jobs)
    write_jsonl(records, out / "episodes.jsonl")
    rows = compute_metrics(records)
    write_csv(rows, out / "metrics.csv")
    for row in rows:
        print(f"{row['strategy']:<22} {row['scale']:<7} {row['task']:<8} "
              f"{row['mean_steps']:8.1f} ± {row['sd_steps']:6.1f}  success {row['success_rate']:.2f}")
    print(f"{len(records)} episodes -> {out / 'metrics.csv'}")
    return EXIT_OK if all(r["completed"] for r in records) else EXIT_INCOMPLETE


def cmd_bench(args: argparse.Namespace, ablations: Sequence[str] | None = None) -> int:
    values, _ = resolve(args, BENCH_DEFAULTS)
    if values["manifest"]:
        with open(values["manifest"]) as fh:
            manifest = RunManifest.from_dict(json.load(fh))
        if args.out is not None:
            manifest.out = args.out
        if args.jobs is not None:
            manifest.jobs = args.jobs
        if ablations is not None:
            manifest.episodes = [replace(e, strategy=Strategy.SAGR.value, ablation=ab)
                                 for e in manifest.episodes for ab in ablations]
    else:
        if not values["scenes"]:
            raise ConfigError("give --manifest FILE or --scenes DIR|GLOB")
        manifest = RunManifest(_expand(values, ablations), values["out"], values["jobs"])
    return _run_manifest(manifest)


def cmd_ablate(args: argparse.Namespace) -> int:
    flags = [a.strip() for a in args.ablations.split(",") if a.strip()]
    for a in flags:
        Ablation.parse(a)
    return cmd_bench(args, ablations=flags)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sagr", description="Semantic area-graph multi-robot exploration simulator")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate apartment-like scenes")
    g.add_argument("--rooms", type=int, default=6)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--size-min", dest="size_min", type=int, default=5)
    g.add_argument("--size-max", dest="size_max", type=int, default=9)
    g.add_argument("--require", action="append", metavar="LABEL=N",
                   help="at least N rooms of LABEL (repeatable)")
    g.add_argument("--out", default="scenes")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run a single episode")
    _episode_flags(r)
    r.add_argument("--snapshots", action="store_true", help="write PGM snapshots per coordination cycle")
    r.set_defaults(func=cmd_run)

    for name, func, help_text in (("bench", cmd_bench, "run a batch and emit metrics CSV"),
                                  ("ablate", cmd_ablate, "SAGR with each ablation flag on a shared set")):
        b = sub.add_parser(name, help=help_text)
        _episode_flags(b, with_scene=False)
        b.add_argument("--manifest", default=None, help="JSON run manifest")
        b.add_argument("--scenes", default=None, help="scene directory or glob")
        if name == "ablate":
            b.add_argument("--ablations", default=",".join(ABLATIONS))
        b.set_defaults(func=func)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"sagr: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
