"""Semantic area graph: room instances of the observed map and their adjacency."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .frontier import FrontierCluster, associate_room
from .sensing import ObservedMap
from .world import FOUR_CONNECTED, Occupancy

HEADER = "AREA-GRAPH v1"
EMPTY_LINE = "no rooms discovered"


@dataclass(frozen=True)
class RoomNode:
    room_id: str
    room_type: str
    cells: frozenset[int]
    frontiers: tuple[FrontierCluster, ...] = ()
    robot_ids: tuple[str, ...] = ()
    neighbor_ids: tuple[str, ...] = ()

    @property
    def frontier_size(self) -> int:
        return sum(f.size for f in self.frontiers)

    @property
    def min_cell(self) -> int:
        return min(self.cells)


def id_key(room_id: str) -> tuple[int, str]:
    digits = room_id.lstrip("R")
    return (int(digits), room_id) if digits.isdigit() else (10**9, room_id)


@dataclass
class AreaGraph:
    nodes: dict[str, RoomNode] = field(default_factory=dict)
    edges: frozenset[tuple[str, str]] = frozenset()
    cycle_index: int = 0
    next_id: int = 1
    owner: dict[int, str] = field(default_factory=dict, repr=False)

    def room_of_cell(self, cell: int) -> str | None:
        rid = self.owner.get(int(cell))
        return rid if rid in self.nodes else None

    def ordered(self) -> list[RoomNode]:
        return [self.nodes[k] for k in sorted(self.nodes, key=id_key)]

    def __len__(self) -> int:
        return len(self.nodes)


def extract_room_instances(observed: ObservedMap) -> list[RoomNode]:
    """One node per 4-connected component of same-label observed free cells.

    Provisional ids ``R1..Rn`` follow ascending minimum cell index.
    """
    grid = observed.grid
    free = grid.occupancy == Occupancy.FREE
    found: list[tuple[int, str, np.ndarray]] = []
    for li, label in enumerate(grid.labels):
        mask = free & (grid.semantic == li)
        if not mask.any():
            continue
        comp, n = ndimage.label(mask, structure=FOUR_CONNECTED)
        flat = comp.ravel()
        idx = np.flatnonzero(flat)
        order = np.argsort(flat[idx], kind="stable")
        idx = idx[order]
        bounds = np.searchsorted(flat[idx], np.arange(1, n + 2))
        for k in range(n):
            cells = idx[bounds[k]:bounds[k + 1]]
            found.append((int(cells.min()), label, cells))
    found.sort(key=lambda t: t[0])
    return [RoomNode(f"R{i + 1}", label, frozenset(cells.tolist()))
            for i, (_, label, cells) in enumerate(found)]


def build_edges(nodes: Sequence[RoomNode], width: int) -> frozenset[tuple[str, str]]:
    """Pairs of distinct nodes owning 4-adjacent cells."""
    owner = {c: n.room_id for n in nodes for c in n.cells}
    edges = set()
    for cell, rid in owner.items():
        for nb in (cell + 1 if (cell + 1) % width else None, cell + width):
            if nb is None:
                continue
            other = owner.get(nb)
            if other is not None and other != rid:
                edges.add(tuple(sorted((rid, other), key=id_key)))
    return frozenset(edges)


def assign_room_ids(nodes: Sequence[RoomNode], previous: AreaGraph | None) -> tuple[list[RoomNode], int]:
    """Carry ids over from the previous cycle by maximal cell overlap.

    Candidate (current, previous) pairs are matched greedily by overlap, then
    larger previous node, then lexicographic previous id; each previous id is
    used at most once. Unmatched nodes get fresh sequential ids.
    Returns the relabelled nodes and the next free id number.
    """
    if previous is None:
        return list(nodes), len(nodes) + 1
    prev_nodes = list(previous.nodes.values())
    prev_owner = {c: p.room_id for p in prev_nodes for c in p.cells}
    prev_size = {p.room_id: len(p.cells) for p in prev_nodes}
    pairs = []
    for i, node in enumerate(nodes):
        counts: dict[str, int] = {}
        for c in node.cells:
            pid = prev_owner.get(c)
            if pid is not None:
                counts[pid] = counts.get(pid, 0) + 1
        for pid, ov in counts.items():
            pairs.append((-ov, -prev_size[pid], pid, -len(node.cells), node.min_cell, i))
    pairs.sort()
    new_ids: dict[int, str] = {}
    used: set[str] = set()
    for _, _, pid, _, _, i in pairs:
        if i in new_ids or pid in used:
            continue
        new_ids[i] = pid
        used.add(pid)
    next_id = previous.next_id
    out = []
    for i, node in enumerate(nodes):
        rid = new_ids.get(i)
        if rid is None:
            rid = f"R{next_id}"
            next_id += 1
        out.append(replace(node, room_id=rid))
    return out, next_id


def build_area_graph(
    observed: ObservedMap,
    clusters: Sequence[FrontierCluster],
    robot_cells: Mapping[str, int] | None = None,
    previous: AreaGraph | None = None,
    cycle_index: int = 0,
) -> tuple[AreaGraph, list[FrontierCluster]]:
    """Unpruned graph with frontier, robot and neighbour attributes filled in.

    Returns the graph and the clusters annotated with their room ids.
    """
    nodes, next_id = assign_room_ids(extract_room_instances(observed), previous)
    edges = build_edges(nodes, observed.grid.width)
    owner = {c: n.room_id for n in nodes for c in n.cells}
    graph = AreaGraph({n.room_id: n for n in nodes}, edges, cycle_index, next_id, owner)
    tagged = [associate_room(c, graph) for c in clusters]
    per_room: dict[str, list[FrontierCluster]] = {}
    for c in tagged:
        if c.room_id is not None:
            per_room.setdefault(c.room_id, []).append(c)
    robots_in: dict[str, list[str]] = {}
    for rid, cell in sorted((robot_cells or {}).items()):
        room = owner.get(int(cell))
        if room is not None:
            robots_in.setdefault(room, []).append(rid)
    nbrs: dict[str, set[str]] = {}
    for a, b in edges:
        nbrs.setdefault(a, set()).add(b)
        nbrs.setdefault(b, set()).add(a)
    graph.nodes = {
        n.room_id: replace(
            n,
            frontiers=tuple(per_room.get(n.room_id, ())),
            robot_ids=tuple(robots_in.get(n.room_id, ())),
            neighbor_ids=tuple(sorted(nbrs.get(n.room_id, ()), key=id_key)),
        )
        for n in nodes
    }
    return graph, tagged


def prune_explored(graph: AreaGraph) -> AreaGraph:
    """Drop rooms without frontier clusters together with their incident edges."""
    keep = {rid for rid, n in graph.nodes.items() if n.frontiers}
    nodes = {
        rid: replace(n, neighbor_ids=tuple(x for x in n.neighbor_ids if x in keep))
        for rid, n in graph.nodes.items() if rid in keep
    }
    edges = frozenset(e for e in graph.edges if e[0] in keep and e[1] in keep)
    return AreaGraph(nodes, edges, graph.cycle_index, graph.next_id, graph.owner)


def serialize(graph: AreaGraph, robots: Iterable[str] = (), include_neighbors: bool = True) -> str:
    """Compact line-per-room text for the planner prompt."""
    if not graph.nodes:
        return f"{HEADER}\n{EMPTY_LINE}\n"
    lines = [HEADER, f"rooms={len(graph.nodes)}"]
    placed = set()
    for n in graph.ordered():
        placed.update(n.robot_ids)
        parts = [
            n.room_id,
            n.room_type,
            f"frontiers={len(n.frontiers)}",
            f"size={n.frontier_size}",
            "robots=" + (",".join(n.robot_ids) or "-"),
        ]
        if include_neighbors:
            parts.append("nbrs=" + (",".join(n.neighbor_ids) or "-"))
        lines.append(" ".join(parts))
    elsewhere = [r for r in robots if r not in placed]
    if elsewhere:
        lines.append("robots elsewhere: " + ",".join(elsewhere))
    return "\n".join(lines) + "\n"


def graph_record(graph: AreaGraph) -> list[dict]:
    """Structured per-room records for the episode log."""
    return [
        {
            "room_id": n.room_id,
            "room_type": n.room_type,
            "cells": len(n.cells),
            "frontier_count": len(n.frontiers),
            "frontier_size": n.frontier_size,
            "robots": list(n.robot_ids),
            "neighbors": list(n.neighbor_ids),
        }
        for n in graph.ordered()
    ]
