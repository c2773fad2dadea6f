"""Frontier detection, bounded-BFS clustering and representative waypoints."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np
from scipy import ndimage

from .sensing import ObservedMap
from .world import FOUR_CONNECTED, Occupancy

DEFAULT_C_MAX = 8


class NoReachableFreeCell(ValueError):
    pass


@dataclass(frozen=True)
class FrontierCluster:
    cells: tuple[int, ...]
    rep: int
    room_id: str | None = None

    @property
    def size(self) -> int:
        return len(self.cells)


def frontier_mask(observed: ObservedMap) -> np.ndarray:
    occ = observed.grid.occupancy
    unknown = occ == Occupancy.UNKNOWN
    near_unknown = np.zeros_like(unknown)
    near_unknown[1:, :] |= unknown[:-1, :]
    near_unknown[:-1, :] |= unknown[1:, :]
    near_unknown[:, 1:] |= unknown[:, :-1]
    near_unknown[:, :-1] |= unknown[:, 1:]
    return (occ == Occupancy.FREE) & near_unknown


def detect_frontiers(observed: ObservedMap) -> set[int]:
    """Observed free cells with at least one unknown 4-neighbour."""
    return set(np.flatnonzero(frontier_mask(observed).ravel()).tolist())


def free_components(observed: ObservedMap) -> np.ndarray:
    """Flat array of 4-connected free-space component labels (0 = not free)."""
    labels, _ = ndimage.label(observed.grid.occupancy == Occupancy.FREE, structure=FOUR_CONNECTED)
    return labels.ravel()


def representative_waypoint(cells: Iterable[int], observed: ObservedMap,
                            components: np.ndarray | None = None) -> int:
    """Free cell nearest the cluster centroid among cells reachable from the cluster.

    Ties go to the lowest cell index.
    """
    cells = list(cells)
    if not cells:
        raise NoReachableFreeCell("empty cluster")
    grid = observed.grid
    if components is None:
        components = free_components(observed)
    comp_ids = {int(components[c]) for c in cells} - {0}
    if not comp_ids:
        raise NoReachableFreeCell("cluster has no free member")
    xs = np.array([c % grid.width for c in cells], dtype=float)
    ys = np.array([c // grid.width for c in cells], dtype=float)
    cx, cy = xs.mean(), ys.mean()
    candidates = np.flatnonzero(np.isin(components, list(comp_ids)))
    d2 = (candidates % grid.width - cx) ** 2 + (candidates // grid.width - cy) ** 2
    return int(candidates[int(np.argmin(d2))])


def cluster_frontiers(frontiers: Iterable[int], observed: ObservedMap,
                      c_max: int = DEFAULT_C_MAX,
                      components: np.ndarray | None = None) -> list[FrontierCluster]:
    """Group frontier cells by BFS over observed free space.

    Seeds are taken lowest-index first; a cluster collects every remaining
    frontier cell within ``c_max`` 4-connected hops of its seed.
    """
    grid = observed.grid
    free = observed.free_flat()
    remaining = set(frontiers)
    if components is None and remaining:
        components = free_components(observed)
    clusters = []
    for seed in sorted(remaining):
        if seed not in remaining:
            continue
        members = [seed]
        remaining.discard(seed)
        seen = {seed}
        queue = deque([(seed, 0)])
        while queue:
            cur, depth = queue.popleft()
            if depth == c_max:
                continue
            for nb in grid.neighbors4(cur):
                if nb in seen or not free[nb]:
                    continue
                seen.add(nb)
                if nb in remaining:
                    remaining.discard(nb)
                    members.append(nb)
                queue.append((nb, depth + 1))
        members.sort()
        rep = representative_waypoint(members, observed, components)
        clusters.append(FrontierCluster(tuple(members), rep))
    return clusters


def associate_room(cluster: FrontierCluster, graph) -> FrontierCluster:
    """Attach the id of the room instance (from an area graph) containing the representative."""
    return replace(cluster, room_id=graph.room_of_cell(cluster.rep))


def compute_clusters(observed: ObservedMap, c_max: int = DEFAULT_C_MAX) -> list[FrontierCluster]:
    components = free_components(observed)
    return cluster_frontiers(detect_frontiers(observed), observed, c_max, components)
