"""Episode orchestration: sensing, periodic coordination, strategy dispatch,
local execution, stopping rules and metrics."""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .allocation import iterative_allocate, path_length, tsp_order
from .areagraph import AreaGraph, build_area_graph, graph_record, prune_explored, serialize
from .frontier import DEFAULT_C_MAX, FrontierCluster, compute_clusters, free_components, frontier_mask
from .navigation import (
    Infeasible,
    RobotState,
    Status,
    Waypoint,
    bfs_distances,
    cells_near,
    nearest_reachable_frontier,
    plan_path,
    robot_key,
    step,
)
from .planner import (
    Ablation,
    EndpointConfig,
    LLMPlanner,
    PlannerInput,
    PlannerUnavailable,
    RoomAssignment,
    RulePlanner,
    ScriptTransport,
    rule_plan,
    PlanTelemetry,
)
from .sensing import ObservedMap, Sensor, SensorConfig
from .world import Occupancy, ScenarioConfig, Task

logger = logging.getLogger(__name__)

DETOUR_AFTER = 3
GIVE_UP_AFTER = 10


class Strategy(str, Enum):
    SAGR = "SAGR"
    HUNGARIAN = "HungarianGlobal"
    NEAREST = "NearestFrontier"
    VORONOI = "VoronoiFrontier"


class PlannerKind(str, Enum):
    LLM = "llm"
    RULE = "rule"
    MOCK = "mock"


class ConfigError(ValueError):
    pass


# free-cell count boundaries between small/medium and medium/large scenes
SCALE_THRESHOLDS = (400, 1000)


def scene_scale(free_cells: int, thresholds: tuple[int, int] = SCALE_THRESHOLDS) -> str:
    if free_cells < thresholds[0]:
        return "small"
    if free_cells < thresholds[1]:
        return "medium"
    return "large"


@dataclass
class EpisodeConfig:
    scenario: ScenarioConfig
    strategy: Strategy = Strategy.SAGR
    planner: PlannerKind = PlannerKind.RULE
    mock_script: str | None = None
    endpoint: EndpointConfig | None = None
    t_coord: int = 50
    pi_threshold: float = 0.95
    max_steps: int = 5000
    sensor: SensorConfig = field(default_factory=SensorConfig)
    d_safe: float = 2.0
    v_max: int = 1
    c_max: int = DEFAULT_C_MAX
    ablation: Ablation = field(default_factory=Ablation)
    seed: int = 0
    record_positions: bool = True

    def validate(self) -> None:
        if not 0 < self.pi_threshold <= 1:
            raise ConfigError("pi_threshold must lie in (0, 1]")
        if self.t_coord < 1:
            raise ConfigError("t_coord must be >= 1")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.v_max < 1:
            raise ConfigError("v_max must be >= 1")
        if self.planner == PlannerKind.MOCK and not self.mock_script:
            raise ConfigError("mock planner needs a script file")
        if self.planner == PlannerKind.MOCK and not Path(self.mock_script).exists():
            raise ConfigError(f"mock script {self.mock_script} not found")
        self.strategy = Strategy(self.strategy)
        self.planner = PlannerKind(self.planner)

    @property
    def label(self) -> str:
        if self.strategy == Strategy.SAGR and self.ablation.label != "full":
            return f"SAGR[{self.ablation.label}]"
        return self.strategy.value

    def effective(self) -> dict:
        sc = self.scenario
        return {
            "scene": sc.scene.name,
            "strategy": self.strategy.value,
            "label": self.label,
            "planner": self.planner.value,
            "mock_script": self.mock_script,
            "task": sc.task.value,
            "target_type": sc.target_room_type,
            "target_cell": sc.target_cell,
            "robots": len(sc.robot_starts),
            "robot_starts": [list(p) for p in sc.robot_starts],
            "t_coord": self.t_coord,
            "pi": self.pi_threshold,
            "max_steps": self.max_steps,
            "d_det": self.sensor.d_det,
            "theta_det": self.sensor.theta_det,
            "d_safe": self.d_safe,
            "v_max": self.v_max,
            "c_max": self.c_max,
            "ablation": self.ablation.label,
            "seed": self.seed,
            "scale": scene_scale(sc.scene.free_cell_count()),
        }


@dataclass
class EpisodeResult:
    completed: bool
    steps: int
    coverage_curve: list[float]
    target_found_step: int | None
    cycles: list[dict]
    meta: dict
    positions: list[list[tuple[int, int]]] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    max_stall: int = 0

    @property
    def planner_latency(self) -> float:
        lat = [c["latency_s"] for c in self.cycles if c.get("latency_s") is not None]
        return float(np.mean(lat)) if lat else 0.0

    def summary(self) -> dict:
        return {
            "kind": "summary",
            "completed": self.completed,
            "steps": self.steps,
            "target_found_step": self.target_found_step,
            "final_coverage": self.coverage_curve[-1] if self.coverage_curve else 0.0,
            "cycles": len(self.cycles),
            "fallbacks": sum(1 for c in self.cycles if c.get("fallback")),
            "max_stall": self.max_stall,
            "mean_planner_latency_s": self.planner_latency,
            **{k: self.meta[k] for k in ("scene", "label", "strategy", "task", "scale", "seed", "ablation")},
        }

    def deterministic_view(self) -> dict:
        """Everything except wall-clock fields."""
        cycles = [{k: v for k, v in c.items() if k != "latency_s"} for c in self.cycles]
        summ = {k: v for k, v in self.summary().items() if k != "mean_planner_latency_s"}
        return {
            "summary": summ,
            "coverage": self.coverage_curve,
            "cycles": cycles,
            "positions": self.positions,
            "events": self.events,
        }


class Episode:
    """One simulation run; see :func:`run_episode`."""

    def __init__(self, cfg: EpisodeConfig, on_cycle=None):
        cfg.validate()
        self.on_cycle = on_cycle
        self.cfg = cfg
        sc = cfg.scenario
        self.scene = sc.scene
        self.truth = sc.scene.grid
        self.observed = ObservedMap.blank_like(self.truth)
        self.sensor = Sensor(self.truth, cfg.sensor)
        self.robots = [
            RobotState(f"r{i}", int(round(x)), int(round(y)), float(th), self.truth.width, cfg.v_max)
            for i, (x, y, th) in enumerate(sc.robot_starts)
        ]
        for rb in self.robots:
            if self.truth.occupancy[rb.y, rb.x] != Occupancy.FREE:
                raise ConfigError(f"robot {rb.id} does not start on a free cell")
        self.excluded = self.scene.excluded_mask().ravel()
        self.denominator = int((~self.excluded).sum())
        self.prev_graph: AreaGraph | None = None
        self.prev_summary = ""
        self.planner = self._make_planner()
        self._cluster_cache: tuple[int, list[FrontierCluster]] | None = None
        self._fmask_version = -1
        self._fmask = None
        self.cycles: list[dict] = []
        self.events: list[dict] = []
        self.t = 0
        self.last_progress = {rb.id: 0 for rb in self.robots}
        self.max_stall = 0

    def _make_planner(self):
        cfg = self.cfg
        if cfg.strategy != Strategy.SAGR:
            return None
        if cfg.planner == PlannerKind.RULE:
            return RulePlanner()
        if cfg.planner == PlannerKind.MOCK:
            endpoint = cfg.endpoint or EndpointConfig(base_url="http://mock.local/v1", api_key=None)
            return LLMPlanner(endpoint, transport=ScriptTransport.from_file(cfg.mock_script))
        return LLMPlanner(cfg.endpoint or EndpointConfig())

    # -- map helpers -------------------------------------------------------
    def clusters(self) -> list[FrontierCluster]:
        v = self.observed.version
        if self._cluster_cache is None or self._cluster_cache[0] != v:
            self._cluster_cache = (v, compute_clusters(self.observed, self.cfg.c_max))
        return self._cluster_cache[1]

    def fmask(self) -> np.ndarray:
        if self._fmask_version != self.observed.version:
            self._fmask = frontier_mask(self.observed).ravel()
            self._fmask_version = self.observed.version
        return self._fmask

    def coverage(self) -> float:
        known = self.observed.grid.occupancy.ravel() != Occupancy.UNKNOWN
        return float((known & ~self.excluded).sum()) / max(self.denominator, 1)

    def _xy(self, cell: int) -> tuple[float, float]:
        w = self.truth.width
        return (float(cell % w), float(cell // w))

    # -- coordination ------------------------------------------------------
    def coordinate(self) -> None:
        clusters = self.clusters()
        strategy = self.cfg.strategy
        record: dict = {"kind": "cycle", "cycle": len(self.cycles), "step": self.t,
                        "strategy": strategy.value, "clusters": len(clusters)}
        if strategy == Strategy.SAGR:
            plans = self._strategy_sagr(clusters, record)
        elif strategy == Strategy.HUNGARIAN:
            plans = strategy_hungarian_global(self.robots, clusters, self._xy)
        elif strategy == Strategy.NEAREST:
            plans = strategy_nearest_frontier(self.robots, clusters, self.observed)
        else:
            plans = strategy_voronoi_frontier(self.robots, clusters, self.observed, self._xy)
        for rb in self.robots:
            new_queue = [Waypoint.from_cluster(c) for c in plans.get(rb.id, [])]
            old_goal = rb.queue[0].goal if rb.queue else None
            rb.queue = new_queue
            if not new_queue or new_queue[0].goal != old_goal:
                rb.path = []
                rb.detoured = False
        record["plans"] = {rb.id: [c.rep for c in plans.get(rb.id, [])] for rb in self.robots}
        self.cycles.append(record)
        if self.on_cycle is not None:
            self.on_cycle(self, record)

    def _strategy_sagr(self, clusters, record) -> dict[str, list[FrontierCluster]]:
        cfg = self.cfg
        sc = cfg.scenario
        robot_cells = {rb.id: rb.cell for rb in self.robots}
        full, tagged = build_area_graph(self.observed, clusters, robot_cells, self.prev_graph, len(self.cycles))
        self.prev_graph = full
        graph = prune_explored(full)
        robot_ids = [rb.id for rb in self.robots]
        text = serialize(graph, robot_ids, include_neighbors=not cfg.ablation.no_neighbors)
        target = sc.target_room_type if sc.task == Task.SEARCH and not cfg.ablation.no_target else None
        inp = PlannerInput(text, "" if cfg.ablation.no_summary else self.prev_summary, sc.task, target,
                           robot_ids, list(graph.nodes), cfg.ablation)
        components = free_components(self.observed)
        fallback = False
        costs = room_path_costs(self.robots, graph, self.observed)
        try:
            assignment = self.planner.plan(inp, graph, robot_cells=robot_cells, components=components,
                                           pairing_costs=costs)
            telemetry = self.planner.telemetry
        except PlannerUnavailable as exc:
            telemetry = self.planner.telemetry
            logger.info("cycle %d: planner unavailable (%s), using rule planner", len(self.cycles), exc)
            fallback = True
            rule_tel = PlanTelemetry()
            assignment = rule_plan(inp, graph, robot_cells, components, rule_tel, costs)
            telemetry.ranking = rule_tel.ranking
        if not assignment.free_explore:
            self.prev_summary = assignment.summary
        record.update({
            "graph": graph_record(graph),
            "graph_text": text,
            "prompt": telemetry.prompt,
            "responses": telemetry.responses,
            "errors": telemetry.errors,
            "retries": telemetry.retries,
            "fallback": fallback,
            # only endpoint round trips count as planner latency; local rule
            # planning time is not reported so batch tables stay reproducible
            "latency_s": telemetry.latency_s if isinstance(self.planner, LLMPlanner) else 0.0,
            "ranking": telemetry.ranking,
            "assignment": assignment.mapping,
            "free_explore": assignment.free_explore,
            "summary": assignment.summary,
        })
        if assignment.free_explore:
            return strategy_nearest_frontier(self.robots, clusters, self.observed)
        return allocate_rooms(self.robots, graph, assignment, self._xy)

    # -- execution ---------------------------------------------------------
    def _fallback(self, rb: RobotState, reason: str, exclude: Sequence[int] = (), blocked=None) -> None:
        cluster = nearest_reachable_frontier(rb.cell, self.observed, self.clusters(), blocked, exclude)
        rb.path = []
        rb.detoured = False
        if cluster is None:
            rb.queue = []
            return
        rb.queue = [Waypoint.from_cluster(cluster)]
        self.events.append({"step": self.t, "robot": rb.id, "event": "fallback", "reason": reason,
                            "rep": cluster.rep})
        self.last_progress[rb.id] = self.t

    def _face_unknown(self, rb: RobotState, wp: Waypoint, fm: np.ndarray) -> bool:
        """Turn towards the unknown cells bordering the cluster; False if already looked from here."""
        if rb.cell in wp.looked:
            return False
        grid = self.observed.grid
        occ = grid.occupancy.ravel()
        if fm[rb.cell]:
            sources = [rb.cell]
        else:
            sources = [c for c in wp.cells if fm[c]]
        unknown = sorted({nb for c in sources for nb in grid.neighbors4(c) if occ[nb] == Occupancy.UNKNOWN})
        if not unknown:
            return False
        ux = np.mean([u % grid.width for u in unknown])
        uy = np.mean([u // grid.width for u in unknown])
        if ux == rb.x and uy == rb.y:
            ux, uy = unknown[0] % grid.width, unknown[0] // grid.width
        rb.theta = math.atan2(uy - rb.y, ux - rb.x)
        wp.looked.add(rb.cell)
        return True

    def manage(self, rb: RobotState) -> None:
        """Keep ``rb`` driving towards a live frontier: drop resolved waypoints,
        look around on arrival, re-plan paths, and fall back when empty."""
        fm = self.fmask()
        for _ in range(64):
            if not rb.queue:
                self._fallback(rb, "queue_empty")
                if not rb.queue:
                    return
            wp = rb.queue[0]
            live = [c for c in wp.cells if fm[c]]
            if not live:
                rb.queue.pop(0)
                rb.path = []
                rb.detoured = False
                continue
            if rb.cell == wp.goal:
                if self._face_unknown(rb, wp, fm):
                    rb.path = []
                    self.last_progress[rb.id] = self.t
                    return
                options = [c for c in live if c not in wp.looked]
                if not options:
                    rb.queue.pop(0)
                    rb.path = []
                    continue
                wp.goal = min(options, key=lambda c: (math.hypot(c % rb.width - rb.x, c // rb.width - rb.y), c))
                rb.path = []
            if not rb.path or rb.path[-1] != wp.goal:
                try:
                    rb.path = plan_path(rb.cell, wp.goal, self.observed)[1:]
                    rb.detoured = False
                    self.last_progress[rb.id] = self.t
                except Infeasible:
                    rb.queue.pop(0)
                    rb.path = []
                    continue
            break
        self._unblock(rb)

    def _unblock(self, rb: RobotState) -> None:
        if rb.blocked_steps < DETOUR_AFTER or not rb.queue:
            return
        # sweep the sensor while held up; a contested frontier often resolves from afar
        rb.theta = (rb.theta + self.cfg.sensor.theta_det) % (2 * math.pi)
        grid = self.observed.grid
        near = cells_near(self.robots, self.cfg.d_safe, grid.width, grid.height, skip=rb.id)
        if rb.blocked_steps > GIVE_UP_AFTER:
            current = rb.queue[0].rep
            self._fallback(rb, "blocked", exclude=[current], blocked=near)
            rb.blocked_steps = 0
            if rb.queue:
                try:
                    rb.path = plan_path(rb.cell, rb.queue[0].goal, self.observed, near)[1:]
                except Infeasible:
                    rb.path = []
            return
        if not rb.detoured:
            try:
                rb.path = plan_path(rb.cell, rb.queue[0].goal, self.observed, near)[1:]
                rb.detoured = True
                self.last_progress[rb.id] = self.t
            except Infeasible:
                pass

    # -- main loop ---------------------------------------------------------
    def run(self) -> EpisodeResult:
        cfg = self.cfg
        sc = cfg.scenario
        coverage_curve: list[float] = []
        positions: list[list[tuple[int, int]]] = []
        completed = False
        found = None
        steps = cfg.max_steps
        for t in range(1, cfg.max_steps + 1):
            self.t = t
            for rb in sorted(self.robots, key=lambda r: robot_key(r.id)):
                self.sensor.sense(rb.pose, self.observed)
            cov = self.coverage()
            coverage_curve.append(cov)
            if cfg.record_positions:
                positions.append([(rb.x, rb.y) for rb in self.robots])
            if sc.task == Task.SEARCH and self.observed.is_known(sc.target_cell):
                completed, found, steps = True, t, t
                break
            if sc.task == Task.EXPLORE and cov >= cfg.pi_threshold - 1e-12:
                completed, steps = True, t
                break
            if (t - 1) % cfg.t_coord == 0:
                self.coordinate()
            for rb in sorted(self.robots, key=lambda r: robot_key(r.id)):
                self.manage(rb)
            before = {rb.id: rb.cell for rb in self.robots}
            step(self.robots, self.observed, cfg.d_safe)
            for rb in self.robots:
                if rb.cell != before[rb.id]:
                    self.last_progress[rb.id] = t
                elif rb.queue:
                    self.max_stall = max(self.max_stall, t - self.last_progress[rb.id])
        if isinstance(self.planner, LLMPlanner):
            self.planner.close()
        meta = cfg.effective()
        return EpisodeResult(
            completed=completed,
            steps=steps,
            coverage_curve=[round(c, 9) for c in coverage_curve],
            target_found_step=found,
            cycles=self.cycles,
            meta=meta,
            positions=positions,
            events=self.events,
            max_stall=self.max_stall,
        )


def run_episode(cfg: EpisodeConfig, on_cycle=None) -> EpisodeResult:
    """Run one episode; ``on_cycle(episode, record)`` fires after every coordination."""
    return Episode(cfg, on_cycle).run()


# ---------------------------------------------------------------------------
# strategies

def room_path_costs(robots: Sequence[RobotState], graph: AreaGraph,
                    observed: ObservedMap) -> dict[tuple[str, str], int]:
    """Shortest observed-free path length from each robot to each room's nearest cluster rep."""
    costs = {}
    for rb in robots:
        dist = bfs_distances(rb.cell, observed)
        for rid, node in graph.nodes.items():
            reach = [dist[f.rep] for f in node.frontiers if f.rep in dist]
            if reach:
                costs[(rb.id, rid)] = min(reach)
    return costs


def allocate_rooms(robots: Sequence[RobotState], graph: AreaGraph, assignment: RoomAssignment,
                   xy) -> dict[str, list[FrontierCluster]]:
    """Per assigned room: iterative Hungarian over its clusters, then TSP order per robot."""
    by_room: dict[str, list[RobotState]] = {}
    for rb in robots:
        room = assignment.mapping.get(rb.id)
        if room in graph.nodes:
            by_room.setdefault(room, []).append(rb)
    plans: dict[str, list[FrontierCluster]] = {}
    for room, members in by_room.items():
        clusters = list(graph.nodes[room].frontiers)
        plans.update(_allocate_and_order(members, clusters, xy))
    return plans


def _allocate_and_order(robots: Sequence[RobotState], clusters: Sequence[FrontierCluster],
                        xy) -> dict[str, list[FrontierCluster]]:
    if not clusters or not robots:
        return {rb.id: [] for rb in robots}
    reps = [xy(c.rep) for c in clusters]
    alloc = iterative_allocate([rb.xy for rb in robots], reps)
    plans = {}
    for rb, idxs in zip(robots, alloc):
        pts = [reps[i] for i in idxs]
        order = tsp_order(rb.xy, pts)
        plans[rb.id] = [clusters[idxs[k]] for k in order]
    return plans


def strategy_hungarian_global(robots: Sequence[RobotState], clusters: Sequence[FrontierCluster],
                              xy) -> dict[str, list[FrontierCluster]]:
    """Semantics-blind: all robots against all clusters, then TSP per robot."""
    return _allocate_and_order(list(robots), list(clusters), xy)


def strategy_nearest_frontier(robots: Sequence[RobotState], clusters: Sequence[FrontierCluster],
                              observed: ObservedMap) -> dict[str, list[FrontierCluster]]:
    """Each robot (id order) takes its nearest reachable cluster not already taken."""
    taken: set[int] = set()
    plans: dict[str, list[FrontierCluster]] = {}
    for rb in sorted(robots, key=lambda r: robot_key(r.id)):
        dist = bfs_distances(rb.cell, observed)
        options = sorted((dist[c.rep], i) for i, c in enumerate(clusters) if c.rep in dist and i not in taken)
        if options:
            _, i = options[0]
            taken.add(i)
            plans[rb.id] = [clusters[i]]
        else:
            plans[rb.id] = []
    return plans


def strategy_voronoi_frontier(robots: Sequence[RobotState], clusters: Sequence[FrontierCluster],
                              observed: ObservedMap, xy) -> dict[str, list[FrontierCluster]]:
    """Geodesic Voronoi claim: each cluster goes to the robot with the shortest path to it."""
    ordered = sorted(robots, key=lambda r: robot_key(r.id))
    dists = [bfs_distances(rb.cell, observed) for rb in ordered]
    claims: dict[str, list[FrontierCluster]] = {rb.id: [] for rb in ordered}
    for c in clusters:
        best = None
        for k, d in enumerate(dists):
            if c.rep in d and (best is None or d[c.rep] < dists[best][c.rep]):
                best = k
        if best is not None:
            claims[ordered[best].id].append(c)
    plans = {}
    for rb in ordered:
        mine = claims[rb.id]
        order = tsp_order(rb.xy, [xy(c.rep) for c in mine])
        plans[rb.id] = [mine[k] for k in order]
    return plans


# ---------------------------------------------------------------------------
# metrics

METRIC_COLUMNS = ("strategy", "scale", "task", "mean_steps", "sd_steps", "success_rate",
                  "mean_planner_latency_s", "episodes")


def compute_metrics(results: Sequence[EpisodeResult | dict]) -> list[dict]:
    """Mean and sample standard deviation of completion steps per (strategy, scale, task)."""
    groups: dict[tuple[str, str, str], list[dict]] = {}
    for r in results:
        s = r.summary() if isinstance(r, EpisodeResult) else r
        groups.setdefault((s["label"], s["scale"], s["task"]), []).append(s)
    rows = []
    for (label, scale, task), items in sorted(groups.items()):
        steps = [float(s["steps"]) for s in items]
        rows.append({
            "strategy": label,
            "scale": scale,
            "task": task,
            "mean_steps": statistics.fmean(steps),
            "sd_steps": statistics.stdev(steps) if len(steps) > 1 else 0.0,
            "success_rate": sum(1 for s in items if s["completed"]) / len(items),
            "mean_planner_latency_s": statistics.fmean(float(s["mean_planner_latency_s"]) for s in items),
            "episodes": len(items),
        })
    return rows
