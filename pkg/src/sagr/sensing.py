"""Field-of-view sensing into the team-shared observed map.

A cell is visible from a pose when it lies within ``d_det`` cells, inside the
angular window centred on the heading, and the 4-connected sight line from the
pose to it crosses no opaque cell (occupied, unknown hole, or off-grid)
strictly between the two endpoints. A clear sight line also reveals the cells
it passes through, so revealed free space is always 4-connected to the pose.
Revealed cells are copied verbatim from the truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .world import Occupancy, SemanticGrid


@dataclass(frozen=True)
class SensorConfig:
    d_det: int = 10
    theta_det: float = math.pi / 2

    def __post_init__(self):
        if self.d_det < 1:
            raise ValueError("d_det must be >= 1")
        if not 0 < self.theta_det <= 2 * math.pi + 1e-12:
            raise ValueError("theta_det must lie in (0, 2*pi]")


@dataclass
class ObservedMap:
    grid: SemanticGrid
    revealed_count: int = 0
    version: int = 0

    @classmethod
    def blank_like(cls, truth: SemanticGrid) -> ObservedMap:
        return cls(SemanticGrid.unknown(truth.width, truth.height, truth.resolution, truth.labels))

    def is_known(self, index: int) -> bool:
        return self.grid.occupancy.flat[index] != Occupancy.UNKNOWN

    def free_flat(self) -> np.ndarray:
        return self.grid.occupancy.ravel() == Occupancy.FREE


def grid_line(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    """4-connected cells crossed by the segment between two cell centres.

    Both endpoints are included. When the segment passes exactly through a
    cell corner the horizontal step is taken first.
    """
    dx, dy = x1 - x0, y1 - y0
    nx, ny = abs(dx), abs(dy)
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    x, y = x0, y0
    cells = [(x, y)]
    ix = iy = 0
    while ix < nx or iy < ny:
        # compare (0.5 + ix) / nx with (0.5 + iy) / ny without division
        if (1 + 2 * ix) * ny <= (1 + 2 * iy) * nx:
            x += sx
            ix += 1
        else:
            y += sy
            iy += 1
        cells.append((x, y))
    return cells


@lru_cache(maxsize=16)
def _stencil(d_det: int):
    """Offsets within range, their bearings, and padded intermediate-cell offsets."""
    offsets, inner = [], []
    for dy in range(-d_det, d_det + 1):
        for dx in range(-d_det, d_det + 1):
            if dx * dx + dy * dy > d_det * d_det:
                continue
            offsets.append((dx, dy))
            inner.append(grid_line(0, 0, dx, dy)[1:-1])
    longest = max((len(p) for p in inner), default=0) or 1
    pad = np.zeros((len(offsets), longest, 2), dtype=np.int64)
    valid = np.zeros((len(offsets), longest), dtype=bool)
    for i, path in enumerate(inner):
        if path:
            pad[i, : len(path)] = path
            valid[i, : len(path)] = True
    off = np.array(offsets, dtype=np.int64)
    bearing = np.arctan2(off[:, 1], off[:, 0])
    return off, bearing, pad, valid


class Sensor:
    """Visibility against a fixed truth grid; visible sets are memoised per pose."""

    def __init__(self, truth: SemanticGrid, cfg: SensorConfig):
        self.truth = truth
        self.cfg = cfg
        occ = truth.occupancy
        # opaque border as wide as the range makes off-grid lookups uniform
        self._pad = cfg.d_det
        self._opaque = np.pad(occ != Occupancy.FREE, self._pad, constant_values=True)
        self._cache: dict[tuple[int, int, float], np.ndarray] = {}

    def visible_cells(self, x: int, y: int, theta: float) -> np.ndarray:
        key = (x, y, round(theta % (2 * math.pi), 9))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        off, bearing, pad, valid = _stencil(self.cfg.d_det)
        if self.cfg.theta_det < 2 * math.pi - 1e-9:
            diff = np.abs((bearing - theta + math.pi) % (2 * math.pi) - math.pi)
            in_window = diff <= self.cfg.theta_det / 2 + 1e-9
            in_window[(off[:, 0] == 0) & (off[:, 1] == 0)] = True
        else:
            in_window = np.ones(len(off), dtype=bool)
        tx, ty = x + off[:, 0], y + off[:, 1]
        in_bounds = (tx >= 0) & (tx < self.truth.width) & (ty >= 0) & (ty < self.truth.height)
        blocked = self._opaque[pad[..., 1] + y + self._pad, pad[..., 0] + x + self._pad] & valid
        vis = in_window & in_bounds & ~blocked.any(axis=1)
        through = pad[vis][valid[vis]]
        xs = np.concatenate([tx[vis], through[:, 0] + x])
        ys = np.concatenate([ty[vis], through[:, 1] + y])
        cells = np.unique(ys * self.truth.width + xs).astype(np.int64)
        self._cache[key] = cells
        return cells

    def sense(self, pose: tuple[float, float, float], observed: ObservedMap) -> np.ndarray:
        """Reveal everything visible from ``pose``; returns the newly revealed cell indices."""
        x, y, theta = int(round(pose[0])), int(round(pose[1])), pose[2]
        cells = self.visible_cells(x, y, theta)
        obs_occ = observed.grid.occupancy.ravel()
        truth_occ = self.truth.occupancy.ravel()
        fresh = cells[(obs_occ[cells] == Occupancy.UNKNOWN) & (truth_occ[cells] != Occupancy.UNKNOWN)]
        if fresh.size:
            obs_occ[fresh] = truth_occ[fresh]
            observed.grid.semantic.ravel()[fresh] = self.truth.semantic.ravel()[fresh]
            observed.revealed_count += int(fresh.size)
            observed.version += 1
        return fresh


def sense(pose, truth: SemanticGrid, observed: ObservedMap, cfg: SensorConfig) -> np.ndarray:
    """One-shot functional form of :meth:`Sensor.sense` (no memoisation across calls)."""
    return Sensor(truth, cfg).sense(pose, observed)


