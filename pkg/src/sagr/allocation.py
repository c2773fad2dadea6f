"""Frontier allocation inside a room: iterative Hungarian matching and TSP ordering."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

Point = tuple[float, float]


def euclidean_costs(robots: Sequence[Point], targets: Sequence[Point]) -> np.ndarray:
    r = np.asarray(robots, dtype=float).reshape(-1, 2)
    t = np.asarray(targets, dtype=float).reshape(-1, 2)
    return np.hypot(r[:, None, 0] - t[None, :, 0], r[:, None, 1] - t[None, :, 1])


def hungarian_match(cost) -> list[tuple[int, int]]:
    """Minimum-total-cost matching of size ``min(rows, cols)`` as (row, col) pairs sorted by row."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError("cost matrix must be a non-empty 2-D array")
    if not np.all(np.isfinite(cost)) or np.any(cost < 0):
        raise ValueError("cost entries must be finite and non-negative")
    rows, cols = linear_sum_assignment(cost)
    return sorted(zip(rows.tolist(), cols.tolist()))


def iterative_allocate(robots: Sequence[Point], targets: Sequence[Point]) -> list[list[int]]:
    """Distribute every target among the robots by repeated Hungarian rounds.

    After each round a robot's cost anchor moves to the target it just
    received, so later rounds extend each robot's chain from there.
    Returns, per robot, target indices in the order they were matched.
    """
    if not robots:
        raise ValueError("need at least one robot")
    anchors = [tuple(map(float, p)) for p in robots]
    remaining = list(range(len(targets)))
    plan: list[list[int]] = [[] for _ in robots]
    while remaining:
        cost = euclidean_costs(anchors, [targets[j] for j in remaining])
        matched = hungarian_match(cost)
        for r, c in matched:
            j = remaining[c]
            plan[r].append(j)
            anchors[r] = tuple(map(float, targets[j]))
        taken = {remaining[c] for _, c in matched}
        remaining = [j for j in remaining if j not in taken]
    return plan


def path_length(start: Point, points: Sequence[Point], order: Sequence[int] | None = None) -> float:
    if order is None:
        order = range(len(points))
    total, cur = 0.0, start
    for i in order:
        nxt = points[i]
        total += math.hypot(nxt[0] - cur[0], nxt[1] - cur[1])
        cur = nxt
    return total


def _nearest_neighbor(start: Point, points: Sequence[Point]) -> list[int]:
    left = list(range(len(points)))
    order, cur = [], start
    while left:
        best = min(left, key=lambda i: (math.hypot(points[i][0] - cur[0], points[i][1] - cur[1]), i))
        order.append(best)
        left.remove(best)
        cur = points[best]
    return order


def _two_opt(start: Point, points: Sequence[Point], order: list[int]) -> list[int]:
    # open path anchored at start: segment reversals, last vertex free
    def d(a: Point, b: Point) -> float:
        return math.hypot(a[0] - b[0], a[1] - b[1])

    order = list(order)
    n = len(order)
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            prev = start if i == 0 else points[order[i - 1]]
            for j in range(i + 1, n):
                a, b = points[order[i]], points[order[j]]
                before = d(prev, a)
                after = d(prev, b)
                if j + 1 < n:
                    nxt = points[order[j + 1]]
                    before += d(b, nxt)
                    after += d(a, nxt)
                if after < before - 1e-12:
                    order[i:j + 1] = reversed(order[i:j + 1])
                    improved = True
    return order


def tsp_order(start: Point, points: Sequence[Point]) -> list[int]:
    """Open-path visiting order from ``start``: nearest neighbour then 2-opt.

    The input order is also polished with 2-opt and kept if shorter, so the
    result is never longer than visiting the points as given.
    """
    n = len(points)
    if n <= 1:
        return list(range(n))
    nn = _two_opt(start, points, _nearest_neighbor(start, points))
    given = _two_opt(start, points, list(range(n)))
    if path_length(start, points, given) < path_length(start, points, nn) - 1e-12:
        return given
    return nn
