import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sagr.frontier import FrontierCluster, compute_clusters
from sagr.navigation import (
    Infeasible,
    RobotState,
    Status,
    bfs_distances,
    nearest_reachable_frontier,
    plan_path,
    step,
)
from sagr.sensing import ObservedMap
from sagr.world import Occupancy, SemanticGrid

from . import oracles
from .conftest import observed_from_rows


def maze(seed: int, side: int = 15, wall_p: float = 0.3) -> ObservedMap:
    rng = np.random.default_rng(seed)
    occ = np.where(rng.random((side, side)) < wall_p, Occupancy.OCCUPIED, Occupancy.FREE).astype(np.int8)
    return ObservedMap(SemanticGrid(side, side, 1.0, occ, np.full((side, side), -1)))


def robot(rid, x, y, width, path=(), v_max=1):
    return RobotState(rid, x, y, 0.0, width, v_max, path=list(path))


def test_same_start_and_goal():
    obs = observed_from_rows(["bbb"])
    assert plan_path(1, 1, obs) == [1]


def test_straight_corridor():
    obs = observed_from_rows(["######", "bbbbbb", "######"])
    path = plan_path(6, 11, obs)
    assert path == [6, 7, 8, 9, 10, 11]


def test_unreachable_goal_raises():
    obs = observed_from_rows(["bb#bb"])
    with pytest.raises(Infeasible):
        plan_path(0, 4, obs)
    with pytest.raises(Infeasible):
        plan_path(0, 2, obs)


@given(st.integers(0, 2**32 - 1))
def test_astar_length_equals_bfs_oracle(seed):
    obs = maze(seed)
    w = obs.grid.width
    free = np.flatnonzero(obs.free_flat())
    if free.size < 2:
        return
    rng = np.random.default_rng(seed)
    a, b = (int(v) for v in rng.choice(free, 2, replace=False))
    passable = (obs.grid.occupancy == Occupancy.FREE).tolist()
    dist = oracles.hop_distances(passable, (a % w, a // w))
    target = (b % w, b // w)
    if target not in dist:
        with pytest.raises(Infeasible):
            plan_path(a, b, obs)
        return
    path = plan_path(a, b, obs)
    assert len(path) - 1 == dist[target]
    assert path[0] == a and path[-1] == b
    for p, q in zip(path, path[1:]):
        assert abs(p % w - q % w) + abs(p // w - q // w) == 1
        assert obs.free_flat()[q]


@given(st.integers(0, 2**32 - 1))
def test_bfs_distances_match_oracle(seed):
    obs = maze(seed, side=12)
    w = obs.grid.width
    free = np.flatnonzero(obs.free_flat())
    if free.size == 0:
        return
    start = int(free[0])
    got = bfs_distances(start, obs)
    want = oracles.hop_distances((obs.grid.occupancy == Occupancy.FREE).tolist(), (start % w, start // w))
    assert got == {y * w + x: d for (x, y), d in want.items()}


def test_single_robot_respects_speed_cap():
    obs = observed_from_rows(["bbbbbbb"])
    rb = robot("r0", 0, 0, 7, path=[1, 2, 3, 4, 5], v_max=2)
    step([rb], obs, d_safe=2)
    assert (rb.x, rb.y) == (2, 0)
    assert rb.path == [3, 4, 5]
    assert rb.status == Status.NAVIGATING


def test_head_on_corridor_priority():
    obs = observed_from_rows(["bbbbbbbb"])
    r0 = robot("r0", 0, 0, 8, path=list(range(1, 8)))
    r1 = robot("r1", 5, 0, 8, path=list(range(4, -1, -1)))
    for _ in range(3):
        step([r1, r0], obs, d_safe=2)
        assert abs(r0.x - r1.x) >= 2
    # r0 moves first; r1 is stopped once the gap is down to d_safe
    assert r1.status == Status.BLOCKED
    assert abs(r0.x - r1.x) == 2


@given(st.integers(0, 2**32 - 1), st.integers(2, 5))
def test_random_steps_keep_spacing(seed, n):
    obs = maze(seed, side=12, wall_p=0.15)
    rng = np.random.default_rng(seed)
    free = np.flatnonzero(obs.free_flat())
    w = obs.grid.width
    robots = []
    for c in rng.permutation(free):
        x, y = int(c % w), int(c // w)
        if all(math.hypot(x - r.x, y - r.y) >= 2 for r in robots):
            robots.append(robot(f"r{len(robots)}", x, y, w))
        if len(robots) == n:
            break
    for _ in range(15):
        for rb in robots:
            goal = int(rng.choice(free))
            try:
                rb.path = plan_path(rb.cell, goal, obs)[1:]
            except Infeasible:
                rb.path = []
        step(robots, obs, d_safe=2)
        for a, b in itertools.combinations(robots, 2):
            assert math.hypot(a.x - b.x, a.y - b.y) >= 2
        assert all(obs.free_flat()[rb.cell] for rb in robots)


def test_no_clusters_gives_none():
    obs = observed_from_rows(["bbb"])
    assert nearest_reachable_frontier(0, obs, []) is None


def test_walled_off_cluster_ignored():
    obs = observed_from_rows([
        "..........",
        "b#bbbbbbbb",
    ])
    near = FrontierCluster((10,), 10)
    far = FrontierCluster((19,), 19)
    assert nearest_reachable_frontier(12, obs, [near, far]) is far


@given(st.integers(0, 2**32 - 1))
def test_nearest_frontier_is_bfs_argmin(seed):
    rng = np.random.default_rng(seed)
    side = 14
    occ = rng.choice([Occupancy.FREE, Occupancy.OCCUPIED, Occupancy.UNKNOWN], size=(side, side),
                     p=[0.6, 0.25, 0.15]).astype(np.int8)
    obs = ObservedMap(SemanticGrid(side, side, 1.0, occ, np.full((side, side), -1)))
    clusters = compute_clusters(obs, c_max=2)[:5]
    free = np.flatnonzero(obs.free_flat())
    if not clusters or free.size == 0:
        return
    start = int(free[rng.integers(free.size)])
    got = nearest_reachable_frontier(start, obs, clusters)
    dist = oracles.hop_distances((occ == Occupancy.FREE).tolist(), (start % side, start // side))
    reach = [(dist[(c.rep % side, c.rep // side)], k) for k, c in enumerate(clusters)
             if (c.rep % side, c.rep // side) in dist]
    if not reach:
        assert got is None
    else:
        best = min(reach)
        assert got is not None
        assert dist[(got.rep % side, got.rep // side)] == best[0]
