"""Room-level assignment: prompt construction, response parsing and validation,
an HTTP chat-completions planner, a scripted mock transport and the
deterministic rule planner."""

from __future__ import annotations

import json
import logging
import math
import os
import re
import time
from dataclasses import dataclass, field
from itertools import cycle
from pathlib import Path
from typing import Mapping, Sequence

import httpx
import numpy as np
from scipy.optimize import linear_sum_assignment

from .areagraph import AreaGraph
from .world import Task

logger = logging.getLogger(__name__)

SUMMARY_LIMIT = 400
PROMPT_VERSION = "sagr-prompt v1"
SYSTEM_PROMPT = (
    "You coordinate ground robots in a partly mapped building. Each room line gives id, type, "
    "frontier count, total frontier size, robots inside and neighbour rooms. Assign every robot "
    "to exactly one listed room id; robots may share a room. Reply with a fenced block of lines "
    "'ASSIGN <robot> <room>' followed by one line 'SUMMARY: <short plan>'."
)
CORRECTION = "Your reply was rejected: {problems}. Reply again with only ASSIGN lines and one SUMMARY line."

ASSIGN_RE = re.compile(r"^\s*ASSIGN\s+(\S+)\s+(\S+)\s*$", re.MULTILINE)
SUMMARY_RE = re.compile(r"^\s*SUMMARY:\s*(.*)$", re.MULTILINE)
FENCE_RE = re.compile(r"```[a-zA-Z]*\n(.*?)```", re.DOTALL)


class PlannerUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class Ablation:
    no_neighbors: bool = False
    no_summary: bool = False
    no_target: bool = False

    @property
    def label(self) -> str:
        on = [name for name in ("no_neighbors", "no_summary", "no_target") if getattr(self, name)]
        return "+".join(on) if on else "full"

    @classmethod
    def parse(cls, text: str) -> Ablation:
        if text in ("", "full", "none"):
            return cls()
        flags = {part.strip() for part in text.split("+")}
        unknown = flags - {"no_neighbors", "no_summary", "no_target"}
        if unknown:
            raise ValueError(f"unknown ablation flags: {sorted(unknown)}")
        return cls(**{f: True for f in flags})


@dataclass
class PlannerInput:
    graph_text: str
    prev_summary: str
    task: Task
    target_room_type: str | None
    robot_ids: list[str]
    room_ids: list[str] = field(default_factory=list)
    ablation: Ablation = Ablation()

    def __post_init__(self):
        wants_target = self.task == Task.SEARCH and not self.ablation.no_target
        if wants_target != (self.target_room_type is not None):
            raise ValueError("target room type must be given exactly for non-ablated search tasks")


@dataclass
class RoomAssignment:
    mapping: dict[str, str]
    summary: str = ""
    free_explore: bool = False

    def __post_init__(self):
        self.summary = self.summary[:SUMMARY_LIMIT]


FREE_EXPLORE = "free-explore"


def free_explore() -> RoomAssignment:
    return RoomAssignment({}, FREE_EXPLORE, free_explore=True)


@dataclass(frozen=True)
class Violation:
    kind: str
    robot_id: str | None = None
    room_id: str | None = None

    def __str__(self) -> str:
        if self.kind == "duplicate":
            return f"robot {self.robot_id} assigned twice"
        if self.kind == "missing":
            return f"robot {self.robot_id} not assigned"
        if self.kind == "unknown_robot":
            return f"unknown robot {self.robot_id}"
        if self.kind == "unknown_room":
            return f"unknown room {self.room_id}"
        return "no ASSIGN lines found"


def validate_assignment(raw: Sequence[tuple[str, str]], room_ids, robot_ids: Sequence[str],
                        summary: str = "") -> RoomAssignment | list[Violation]:
    """Check exactly-once robot coverage and room existence."""
    if isinstance(room_ids, AreaGraph):
        room_ids = room_ids.nodes.keys()
    rooms = set(room_ids)
    robots = set(robot_ids)
    problems: list[Violation] = []
    if not raw:
        return [Violation("empty")]
    seen: dict[str, str] = {}
    for robot, room in raw:
        if robot not in robots:
            problems.append(Violation("unknown_robot", robot_id=robot))
            continue
        if robot in seen:
            problems.append(Violation("duplicate", robot_id=robot))
            continue
        if room not in rooms:
            problems.append(Violation("unknown_room", robot_id=robot, room_id=room))
        seen[robot] = room
    for robot in robot_ids:
        if robot not in seen:
            problems.append(Violation("missing", robot_id=robot))
    if problems:
        return problems
    return RoomAssignment({r: seen[r] for r in robot_ids}, summary)


def parse_response(text: str) -> tuple[list[tuple[str, str]], str]:
    """Pull ``ASSIGN`` pairs (fenced block preferred) and the ``SUMMARY`` line."""
    fenced = FENCE_RE.search(text)
    body = fenced.group(1) if fenced else text
    pairs = ASSIGN_RE.findall(body)
    summary = SUMMARY_RE.search(text)
    return pairs, (summary.group(1).strip() if summary else "")


def build_prompt(inp: PlannerInput) -> list[dict[str, str]]:
    lines = [inp.graph_text.rstrip("\n")]
    if not inp.ablation.no_summary:
        lines.append("previous plan: " + (inp.prev_summary or "none"))
    if inp.task == Task.SEARCH:
        lines.append("task: search for a target object; prefer rooms of the target type, spread robots")
    else:
        lines.append("task: explore; prefer rooms with larger frontier size, spread robots")
    if inp.target_room_type is not None:
        lines.append(f"target room type: {inp.target_room_type}")
    lines.append("robots: " + ",".join(inp.robot_ids))
    return [
        {"role": "system", "content": SYSTEM_PROMPT},
        {"role": "user", "content": "\n".join(lines)},
    ]


def prompt_text(messages: Sequence[Mapping[str, str]]) -> str:
    return "\n".join(m["content"] for m in messages)


# ---------------------------------------------------------------------------
# LLM endpoint planner

@dataclass
class EndpointConfig:
    base_url: str = field(default_factory=lambda: os.environ.get("SAGR_BASE_URL", "https://api.openai.com/v1"))
    model: str = "gpt-4o"
    temperature: float = 0.2
    max_tokens: int = 1000
    timeout: float = 30.0
    retries: int = 2
    api_key: str | None = field(default_factory=lambda: os.environ.get("SAGR_API_KEY"), repr=False)

    def __post_init__(self):
        if self.retries < 0:
            raise ValueError("retries must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass
class PlanTelemetry:
    prompt: str = ""
    responses: list[str] = field(default_factory=list)
    retries: int = 0
    errors: list[str] = field(default_factory=list)
    latency_s: float = 0.0
    ranking: list[list] | None = None


class LLMPlanner:
    """Chat-completions planner with validation-driven retries."""

    def __init__(self, cfg: EndpointConfig | None = None, transport: httpx.BaseTransport | None = None):
        self.cfg = cfg or EndpointConfig()
        headers = {"Authorization": f"Bearer {self.cfg.api_key}"} if self.cfg.api_key else {}
        self.client = httpx.Client(base_url=self.cfg.base_url, timeout=self.cfg.timeout,
                                   headers=headers, transport=transport)
        self.telemetry = PlanTelemetry()

    def close(self) -> None:
        self.client.close()

    def _complete(self, messages: list[dict[str, str]]) -> str:
        resp = self.client.post("/chat/completions", json={
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
            "messages": messages,
        })
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]

    def plan(self, inp: PlannerInput, graph: AreaGraph | None = None, **_) -> RoomAssignment:
        room_ids = list(graph.nodes) if graph is not None else list(inp.room_ids)
        if not room_ids:
            self.telemetry = PlanTelemetry()
            return free_explore()
        messages = build_prompt(inp)
        tel = PlanTelemetry(prompt=prompt_text(messages))
        self.telemetry = tel
        start = time.perf_counter()
        try:
            for attempt in range(self.cfg.retries + 1):
                tel.retries = attempt
                try:
                    content = self._complete(messages)
                except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                    tel.errors.append(f"transport: {type(exc).__name__}: {exc}")
                    logger.warning("planner call failed (attempt %d): %s", attempt, exc)
                    continue
                tel.responses.append(content)
                pairs, summary = parse_response(content)
                result = validate_assignment(pairs, room_ids, inp.robot_ids, summary)
                if isinstance(result, RoomAssignment):
                    return result
                problems = "; ".join(str(v) for v in result)
                tel.errors.append(problems)
                messages = messages + [
                    {"role": "assistant", "content": content},
                    {"role": "user", "content": CORRECTION.format(problems=problems)},
                ]
        finally:
            tel.latency_s = time.perf_counter() - start
        raise PlannerUnavailable(f"no valid assignment after {self.cfg.retries + 1} attempts")


def llm_plan(inp: PlannerInput, cfg: EndpointConfig, transport: httpx.BaseTransport | None = None) -> RoomAssignment:
    planner = LLMPlanner(cfg, transport)
    try:
        return planner.plan(inp)
    finally:
        planner.close()


class ScriptTransport(httpx.BaseTransport):
    """Replays canned chat-completions replies from a JSON-lines script.

    Each line is ``{"content": "..."}`` or ``{"fault": "timeout" | "http_500" | "malformed"}``;
    the script cycles when exhausted.
    """

    def __init__(self, entries: Sequence[Mapping]):
        if not entries:
            raise ValueError("mock script is empty")
        self.entries = list(entries)
        self._it = cycle(self.entries)
        self.requests: list[dict] = []

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptTransport:
        entries = []
        for ln in Path(path).read_text().splitlines():
            if ln.strip():
                entries.append(json.loads(ln))
        return cls(entries)

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        self.requests.append(json.loads(request.content))
        entry = next(self._it)
        fault = entry.get("fault")
        if fault == "timeout":
            raise httpx.ReadTimeout("scripted timeout", request=request)
        if fault == "http_500":
            return httpx.Response(500, json={"error": "scripted failure"}, request=request)
        content = "%%% not a plan %%%" if fault == "malformed" else entry.get("content", "")
        return httpx.Response(200, json={
            "id": "mock",
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content},
                         "finish_reason": "stop"}],
        }, request=request)


# ---------------------------------------------------------------------------
# deterministic surrogate

def rank_rooms(graph: AreaGraph, target: str | None) -> list[tuple[tuple, str]]:
    keys = []
    for rid, node in graph.nodes.items():
        key = (-node.frontier_size, rid) if target is None else \
            (0 if node.room_type == target else 1, -node.frontier_size, rid)
        keys.append((key, rid))
    keys.sort()
    return keys


class RulePlanner:
    """Greedy ranked assignment with a per-room capacity of ceil(M / rooms).

    With a target type, rooms of that type rank first; otherwise, and within
    each class, larger total frontier size wins, then room id. When the caller
    passes ``pairing_costs``, robots are re-seated onto the chosen rooms by
    minimum total path length.
    """

    def __init__(self):
        self.telemetry = PlanTelemetry()

    def plan(self, inp: PlannerInput, graph: AreaGraph, robot_cells: Mapping[str, int] | None = None,
             components: np.ndarray | None = None, **extra) -> RoomAssignment:
        start = time.perf_counter()
        # keep the prompt an endpoint would have seen so records compare across planners
        self.telemetry = PlanTelemetry(prompt=prompt_text(build_prompt(inp)))
        if not graph.nodes:
            return free_explore()
        result = rule_plan(inp, graph, robot_cells, components, self.telemetry, extra.get("pairing_costs"))
        self.telemetry.latency_s = time.perf_counter() - start
        return result


UNREACHABLE_COST = 1e6


def pair_by_distance(robot_ids: Sequence[str], mapping: Mapping[str, str],
                     costs: Mapping[tuple[str, str], float]) -> dict[str, str]:
    """Re-seat robots onto the same multiset of rooms so total travel is minimal.

    Room slots come from ``mapping``; missing ``(robot, room)`` costs count as
    unreachable. Ties resolve like :func:`scipy.optimize.linear_sum_assignment`.
    """
    slots = [mapping[r] for r in robot_ids]
    cost = np.array([[costs.get((r, room), UNREACHABLE_COST) for room in slots] for r in robot_ids],
                    dtype=float)
    rows, cols = linear_sum_assignment(cost)
    return {robot_ids[i]: slots[j] for i, j in zip(rows, cols)}


def rule_plan(inp: PlannerInput, graph: AreaGraph, robot_cells: Mapping[str, int] | None = None,
              components: np.ndarray | None = None, telemetry: PlanTelemetry | None = None,
              pairing_costs: Mapping[tuple[str, str], float] | None = None) -> RoomAssignment:
    if not graph.nodes:
        return free_explore()
    target = inp.target_room_type
    ranked = rank_rooms(graph, target)
    if telemetry is not None:
        telemetry.ranking = [[rid, list(key)] for key, rid in ranked]
    order = [rid for _, rid in ranked]
    capacity = math.ceil(len(inp.robot_ids) / len(order))
    load = {rid: 0 for rid in order}

    def reachable(robot: str, rid: str) -> bool:
        if components is None or robot_cells is None or robot not in robot_cells:
            return True
        comp = components[robot_cells[robot]]
        return any(components[f.rep] == comp for f in graph.nodes[rid].frontiers)

    mapping: dict[str, str] = {}
    for robot in inp.robot_ids:
        options = [rid for rid in order if reachable(robot, rid)]
        open_options = [rid for rid in options if load[rid] < capacity]
        if open_options:
            choice = open_options[0]
        elif options:
            choice = options[0]
        else:
            choice = order[0]
        mapping[robot] = choice
        load[choice] += 1

    if pairing_costs is not None:
        mapping = pair_by_distance(inp.robot_ids, mapping, pairing_costs)

    targets = [rid for rid in order if target is not None and graph.nodes[rid].room_type == target]
    head = f"targets={','.join(targets) or 'none'}" if target is not None else "explore by frontier size"
    plan = " ".join(f"{r}>{mapping[r]}" for r in inp.robot_ids)
    return RoomAssignment(mapping, f"{head}; plan {plan}")
