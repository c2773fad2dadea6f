"""Grid motion: A* over observed free space, spacing-constrained stepping and
the nearest-reachable-frontier fallback."""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .frontier import FrontierCluster
from .sensing import ObservedMap


class Infeasible(Exception):
    pass


class Status(str, Enum):
    NAVIGATING = "navigating"
    IDLE = "idle"
    BLOCKED = "blocked"


@dataclass
class Waypoint:
    """A frontier cluster to resolve; ``goal`` is the cell currently being driven to."""

    rep: int
    cells: tuple[int, ...]
    goal: int = -1
    looked: set[int] = field(default_factory=set)

    def __post_init__(self):
        if self.goal < 0:
            self.goal = self.rep

    @classmethod
    def from_cluster(cls, cluster: FrontierCluster) -> Waypoint:
        return cls(cluster.rep, cluster.cells)


@dataclass
class RobotState:
    id: str
    x: int
    y: int
    theta: float
    width: int
    v_max: int = 1
    queue: list[Waypoint] = field(default_factory=list)
    path: list[int] = field(default_factory=list)
    status: Status = Status.IDLE
    blocked_steps: int = 0
    detoured: bool = False

    @property
    def cell(self) -> int:
        return self.y * self.width + self.x

    @property
    def pose(self) -> tuple[float, float, float]:
        return (float(self.x), float(self.y), self.theta)

    @property
    def xy(self) -> tuple[float, float]:
        return (float(self.x), float(self.y))

    def clear(self) -> None:
        self.queue = []
        self.path = []


def robot_key(robot_id: str) -> tuple[int, str]:
    digits = robot_id.lstrip("r")
    return (int(digits), robot_id) if digits.isdigit() else (10**9, robot_id)


def _passable(observed: ObservedMap, blocked: Iterable[int] | None) -> np.ndarray:
    free = observed.free_flat().copy()
    if blocked:
        free[list(blocked)] = False
    return free


def plan_path(start: int, goal: int, observed: ObservedMap,
              blocked: Iterable[int] | None = None) -> list[int]:
    """Shortest 4-connected path ``[start, ..., goal]`` through observed free cells.

    A* with the Manhattan heuristic; open-list ties go to the lowest cell index.
    ``blocked`` cells are treated as obstacles (the start itself is exempt).
    """
    width = observed.grid.width
    free = _passable(observed, blocked)
    free[start] = observed.free_flat()[start]
    if not free[start]:
        raise Infeasible(f"start cell {start} is not free")
    if start == goal:
        return [start]
    if not free[goal]:
        raise Infeasible(f"goal cell {goal} is not free")
    gx, gy = goal % width, goal // width
    g = {start: 0}
    parent = {start: -1}
    heap = [(abs(start % width - gx) + abs(start // width - gy), start)]
    closed = set()
    grid = observed.grid
    while heap:
        _, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if cur == goal:
            path = [cur]
            while parent[path[-1]] != -1:
                path.append(parent[path[-1]])
            return path[::-1]
        closed.add(cur)
        gc = g[cur] + 1
        for nb in grid.neighbors4(cur):
            if not free[nb] or nb in closed:
                continue
            if gc < g.get(nb, 1 << 60):
                g[nb] = gc
                parent[nb] = cur
                heapq.heappush(heap, (gc + abs(nb % width - gx) + abs(nb // width - gy), nb))
    raise Infeasible(f"no path from {start} to {goal}")


def bfs_distances(start: int, observed: ObservedMap,
                  blocked: Iterable[int] | None = None) -> dict[int, int]:
    """Hop distances from ``start`` to every reachable observed free cell."""
    free = _passable(observed, blocked)
    free[start] = True
    dist = {start: 0}
    queue = deque([start])
    grid = observed.grid
    while queue:
        cur = queue.popleft()
        d = dist[cur] + 1
        for nb in grid.neighbors4(cur):
            if free[nb] and nb not in dist:
                dist[nb] = d
                queue.append(nb)
    return dist


def nearest_reachable_frontier(cell: int, observed: ObservedMap,
                               clusters: Sequence[FrontierCluster],
                               blocked: Iterable[int] | None = None,
                               exclude: Iterable[int] = ()) -> FrontierCluster | None:
    """Cluster whose representative has the shortest path from ``cell``; ``None`` if none reachable."""
    if not clusters:
        return None
    excluded = set(exclude)
    dist = bfs_distances(cell, observed, blocked)
    best, best_d = None, None
    for c in clusters:
        if c.rep in excluded:
            continue
        d = dist.get(c.rep)
        if d is not None and (best_d is None or d < best_d):
            best, best_d = c, d
    return best


def cells_near(robots: Sequence[RobotState], radius: float, width: int, height: int,
               skip: str | None = None) -> set[int]:
    """Cells strictly within ``radius`` of any robot other than ``skip``."""
    out = set()
    r = int(math.ceil(radius))
    for rb in robots:
        if rb.id == skip:
            continue
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                if dx * dx + dy * dy < radius * radius:
                    x, y = rb.x + dx, rb.y + dy
                    if 0 <= x < width and 0 <= y < height:
                        out.add(y * width + x)
    return out


def step(robots: Sequence[RobotState], observed: ObservedMap, d_safe: float) -> list[tuple[float, float, float]]:
    """Advance every robot up to ``v_max`` cells along its path, in robot-id order.

    A move that would come within ``d_safe`` of any other robot's position
    (already-moved robots at their new cells) is cut short; a robot that cannot
    move at all while holding a path is marked blocked.
    """
    free = observed.free_flat()
    width = observed.grid.width
    for rb in sorted(robots, key=lambda r: robot_key(r.id)):
        if not rb.path:
            rb.status = Status.IDLE
            rb.blocked_steps = 0
            continue
        moved = 0
        while rb.path and moved < rb.v_max:
            nxt = rb.path[0]
            nx, ny = nxt % width, nxt // width
            if abs(nx - rb.x) + abs(ny - rb.y) != 1 or not free[nxt]:
                rb.path = []
                break
            if any(o is not rb and math.hypot(o.x - nx, o.y - ny) < d_safe for o in robots):
                break
            rb.theta = math.atan2(ny - rb.y, nx - rb.x)
            rb.x, rb.y = nx, ny
            rb.path.pop(0)
            moved += 1
        if moved:
            rb.status = Status.NAVIGATING
            rb.blocked_steps = 0
        elif rb.path:
            rb.status = Status.BLOCKED
            rb.blocked_steps += 1
        else:
            rb.status = Status.IDLE
    return [rb.pose for rb in robots]
