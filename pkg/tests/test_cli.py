import csv
import json
import statistics
from pathlib import Path

import pytest

from sagr.cli import CSV_COLUMNS, main
from sagr.world import load_scene

DATA = Path(__file__).parent / "data"
GOLDEN = DATA / "golden_mock_run.jsonl"
MOCK_ARGS = ["--scene", str(DATA / "two_rooms.txt"), "--planner", f"mock:{DATA / 'mock_planner.jsonl'}",
             "--robots", "2", "--task", "search", "--target-type", "kitchen", "--tcoord", "3", "--seed", "1"]


def masked(path: Path) -> list[dict]:
    """Episode records with wall-clock latency and machine-specific paths removed."""
    text = path.read_text().replace(str(DATA), "<data>")
    out = []
    for line in text.splitlines():
        rec = json.loads(line)
        rec.pop("latency_s", None)
        rec.pop("mean_planner_latency_s", None)
        rec.get("sources", {}).pop("out", None)
        out.append(rec)
    return out


@pytest.fixture(scope="module")
def scenes(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenes")
    assert main(["gen", "--rooms", "4", "--seed", "7", "--count", "3", "--require", "bedroom=1",
                 "--out", str(out)]) == 0
    return out


def test_gen_writes_loadable_scenes(scenes, tmp_path):
    files = sorted(scenes.glob("scene_*.txt"))
    assert [f.name for f in files] == ["scene_0007.txt", "scene_0008.txt", "scene_0009.txt"]
    for f in files:
        scene = load_scene(f)
        assert "bedroom" in scene.grid.labels
    manifest = json.loads((scenes / "scenes.json").read_text())
    assert [e["seed"] for e in manifest["scenes"]] == [7, 8, 9]
    # same seed, same bytes
    assert main(["gen", "--rooms", "4", "--seed", "7", "--count", "3", "--require", "bedroom=1",
                 "--out", str(tmp_path)]) == 0
    for f in files:
        assert (tmp_path / f.name).read_bytes() == f.read_bytes()


def test_run_trivial_scene(tmp_path):
    code = main(["run", "--scene", str(DATA / "3x3.txt"), "--robots", "1", "--task", "explore",
                 "--fov", "360", "--out", str(tmp_path)])
    assert code == 0
    summary = json.loads((tmp_path / "episode.jsonl").read_text().splitlines()[-1])
    assert summary["completed"] and summary["steps"] == 1


def test_run_writes_snapshots(tmp_path):
    assert main(["run", *MOCK_ARGS, "--snapshots", "--out", str(tmp_path)]) == 0
    pgms = sorted((tmp_path / "snapshots").glob("*.pgm"))
    assert pgms[-1].name == "final.pgm" and len(pgms) >= 2
    head = pgms[0].read_bytes()[:16]
    assert head.startswith(b"P5\n14 7\n255\n")
    text = (tmp_path / "snapshots" / "final.txt").read_text().splitlines()
    assert len(text) == 7 and all(len(r) == 14 for r in text)
    assert sum(r.count("0") + r.count("1") for r in text) == 2


@pytest.mark.parametrize("argv", [
    ["run", "--scene", "/nonexistent/scene.txt"],
    ["run", "--scene", str(DATA / "3x3.txt"), "--strategy", "Magic"],
    ["run", "--scene", str(DATA / "3x3.txt"), "--planner", "mock:/nonexistent.jsonl"],
    ["bench"],
])
def test_config_errors_exit_one(argv, tmp_path):
    assert main([*argv, "--out", str(tmp_path)]) == 1


def test_bad_flag_exits_one(capsys):
    with pytest.raises(SystemExit) as info:
        main(["run", "--bogus-flag"])
    assert info.value.code == 1


def test_mock_run_matches_golden(tmp_path):
    assert main(["run", *MOCK_ARGS, "--out", str(tmp_path)]) == 0
    got = masked(tmp_path / "episode.jsonl")
    assert got == masked(GOLDEN)
    # and the run exercises faults, fallback and a retried reply
    cycles = [r for r in got if r["kind"] == "cycle"]
    assert any(c["fallback"] for c in cycles) and any(c["retries"] for c in cycles)


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"robots": 3, "tcoord": 7, "seed": 5}))
    out = tmp_path / "out"
    main(["run", "--scene", str(DATA / "two_rooms.txt"), "--config", str(cfg), "--seed", "2",
          "--task", "explore", "--out", str(out)])
    header = json.loads((out / "episode.jsonl").read_text().splitlines()[0])
    assert header["spec"]["seed"] == 2 and header["sources"]["seed"] == "flag"
    assert header["spec"]["robots"] == 3 and header["sources"]["robots"] == "config"
    assert header["spec"]["tcoord"] == 7 and header["sources"]["tcoord"] == "config"
    assert header["spec"]["pi"] == 0.95 and header["sources"]["pi"] == "default"
    assert header["effective"]["t_coord"] == 7
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"robotz": 3}))
    assert main(["run", "--scene", str(DATA / "two_rooms.txt"), "--config", str(bad)]) == 1


def _bench(scenes, out, *extra):
    return main(["bench", "--scenes", str(scenes), "--robots", "2", "--tcoord", "10",
                 "--strategy", "SAGR,NearestFrontier", "--out", str(out), *extra])


def test_bench_parallel_equals_serial(scenes, tmp_path):
    assert _bench(scenes, tmp_path / "a") == 0
    assert _bench(scenes, tmp_path / "b", "--jobs", "3") == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "episodes.jsonl").read_bytes() == (tmp_path / "b" / "episodes.jsonl").read_bytes()


def test_bench_csv_recomputes_from_episodes(scenes, tmp_path):
    assert _bench(scenes, tmp_path) == 0
    episodes = [json.loads(l) for l in (tmp_path / "episodes.jsonl").read_text().splitlines()]
    assert len(episodes) == 3 * 2 * 2
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == list(CSV_COLUMNS)
    for row in rows:
        group = [e for e in episodes if (e["label"], e["scale"], e["task"]) == (row["strategy"], row["scale"], row["task"])]
        steps = [e["steps"] for e in group]
        assert float(row["mean_steps"]) == pytest.approx(statistics.fmean(steps), abs=1e-6)
        sd = statistics.stdev(steps) if len(steps) > 1 else 0.0
        assert float(row["sd_steps"]) == pytest.approx(sd, abs=1e-6)
    # a manifest replays the same batch
    again = tmp_path / "again"
    assert main(["bench", "--manifest", str(tmp_path / "manifest.json"), "--out", str(again)]) == 0
    assert (again / "metrics.csv").read_bytes() == (tmp_path / "metrics.csv").read_bytes()


def test_ablate_full_row_matches_bench(scenes, tmp_path):
    args = ["--scenes", str(scenes), "--robots", "2", "--tcoord", "10", "--task", "search"]
    assert main(["bench", *args, "--strategy", "SAGR", "--out", str(tmp_path / "b")]) == 0
    assert main(["ablate", *args, "--out", str(tmp_path / "a")]) == 0
    bench = [json.loads(l) for l in (tmp_path / "b" / "episodes.jsonl").read_text().splitlines()]
    abl = [json.loads(l) for l in (tmp_path / "a" / "episodes.jsonl").read_text().splitlines()]
    full = [e for e in abl if e["ablation"] == "full"]
    assert [e["steps"] for e in full] == [e["steps"] for e in bench]
    assert {e["ablation"] for e in abl} == {"full", "no_neighbors", "no_summary", "no_target"}
