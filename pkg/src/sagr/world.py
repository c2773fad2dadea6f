"""Ground-truth environments: semantic grids, the scene file format, the
procedural apartment generator and scenario sampling.

Coordinates are ``(x, y)`` with ``x`` the column and ``y`` the row; a cell
index is ``y * width + x``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

DEFAULT_LABELS: tuple[str, ...] = (
    "bedroom",
    "kitchen",
    "bathroom",
    "living_room",
    "hallway",
    "closet",
)
HALLWAY = "hallway"
NO_LABEL = -1
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


class Occupancy(IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


class Task(str, Enum):
    EXPLORE = "explore"
    SEARCH = "search"


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    def __init__(self, message: str, cell: int | None = None):
        super().__init__(message if cell is None else f"{message} (cell {cell})")
        self.cell = cell


class GenerationError(RuntimeError):
    pass


class InfeasibleScenario(ValueError):
    pass


@dataclass(frozen=True)
class Cell:
    occupancy: Occupancy
    semantic: str | None = None


@dataclass
class SemanticGrid:
    """Row-major occupancy + semantic label lattice.

    ``semantic`` holds indices into ``labels`` (``NO_LABEL`` when absent).
    """

    width: int
    height: int
    resolution: float
    occupancy: np.ndarray
    semantic: np.ndarray
    labels: tuple[str, ...] = DEFAULT_LABELS

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValidationError("resolution must be positive")
        self.occupancy = np.asarray(self.occupancy, dtype=np.int8).reshape(self.height, self.width)
        self.semantic = np.asarray(self.semantic, dtype=np.int16).reshape(self.height, self.width)

    @classmethod
    def unknown(cls, width: int, height: int, resolution: float = 1.0,
                labels: Sequence[str] = DEFAULT_LABELS) -> SemanticGrid:
        return cls(
            width, height, resolution,
            np.zeros((height, width), dtype=np.int8),
            np.full((height, width), NO_LABEL, dtype=np.int16),
            tuple(labels),
        )

    @property
    def size(self) -> int:
        return self.width * self.height

    def index(self, x: int, y: int) -> int:
        return y * self.width + x

    def coords(self, index: int) -> tuple[int, int]:
        return index % self.width, index // self.width

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def cell(self, index: int) -> Cell:
        x, y = self.coords(index)
        sem = int(self.semantic[y, x])
        return Cell(Occupancy(int(self.occupancy[y, x])), None if sem == NO_LABEL else self.labels[sem])

    def label_index(self, label: str) -> int:
        return self.labels.index(label)

    def free_mask(self) -> np.ndarray:
        return self.occupancy == Occupancy.FREE

    def neighbors4(self, index: int) -> Iterable[int]:
        x, y = self.coords(index)
        if y > 0:
            yield index - self.width
        if x > 0:
            yield index - 1
        if x < self.width - 1:
            yield index + 1
        if y < self.height - 1:
            yield index + self.width

    def copy(self) -> SemanticGrid:
        return SemanticGrid(self.width, self.height, self.resolution,
                            self.occupancy.copy(), self.semantic.copy(), self.labels)

    def same_content(self, other: SemanticGrid) -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and self.resolution == other.resolution
            and self.labels == other.labels
            and np.array_equal(self.occupancy, other.occupancy)
            and np.array_equal(self.semantic, other.semantic)
        )


@dataclass
class SceneSpec:
    grid: SemanticGrid
    label_set: list[str]
    inaccessible_cells: frozenset[int] = frozenset()
    name: str = "scene"

    def __post_init__(self):
        self.inaccessible_cells = frozenset(int(c) for c in self.inaccessible_cells)

    def excluded_mask(self) -> np.ndarray:
        """Cells outside the coverage denominator: listed inaccessible cells and unknown holes."""
        mask = np.zeros(self.grid.size, dtype=bool)
        if self.inaccessible_cells:
            mask[np.fromiter(self.inaccessible_cells, dtype=np.int64)] = True
        mask = mask.reshape(self.grid.height, self.grid.width)
        return mask | (self.grid.occupancy == Occupancy.UNKNOWN)

    def accessible_free_mask(self) -> np.ndarray:
        return self.grid.free_mask() & ~self.excluded_mask()

    def free_cell_count(self) -> int:
        return int(self.accessible_free_mask().sum())


@dataclass
class ScenarioConfig:
    scene: SceneSpec
    robot_starts: list[tuple[float, float, float]]
    target_cell: int
    target_room_type: str
    task: Task = Task.SEARCH
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "scene": self.scene.name,
            "robot_starts": [list(p) for p in self.robot_starts],
            "target_cell": self.target_cell,
            "target_room_type": self.target_room_type,
            "task": self.task.value,
            "seed": self.seed,
        }


def validate_scene(scene: SceneSpec) -> SceneSpec:
    grid = scene.grid
    if grid.occupancy.size != grid.width * grid.height:
        raise ValidationError("cell count does not match width*height")
    unknown_label = [lab for lab in grid.labels if lab not in scene.label_set]
    used = set(np.unique(grid.semantic[grid.semantic != NO_LABEL]).tolist())
    for idx in used:
        if grid.labels[idx] in unknown_label:
            cell = int(np.flatnonzero(grid.semantic.ravel() == idx)[0])
            raise ValidationError(f"label {grid.labels[idx]!r} not in label set", cell)
    labeled_unknown = (grid.occupancy == Occupancy.UNKNOWN) & (grid.semantic != NO_LABEL)
    if labeled_unknown.any():
        raise ValidationError("unknown cell carries a label", int(np.flatnonzero(labeled_unknown.ravel())[0]))
    for c in scene.inaccessible_cells:
        if not 0 <= c < grid.size:
            raise ValidationError("inaccessible cell outside grid", c)

    free = grid.free_mask()
    unknown = grid.occupancy == Occupancy.UNKNOWN
    # unknown holes would leave permanent frontiers if they touched free space
    touching = np.zeros_like(unknown)
    touching[1:, :] |= unknown[:-1, :]
    touching[:-1, :] |= unknown[1:, :]
    touching[:, 1:] |= unknown[:, :-1]
    touching[:, :-1] |= unknown[:, 1:]
    bad = free & touching
    if bad.any():
        raise ValidationError("free cell borders an unknown hole", int(np.flatnonzero(bad.ravel())[0]))

    reachable = scene.accessible_free_mask()
    labels, n = ndimage.label(reachable, structure=FOUR_CONNECTED)
    if n > 1:
        sizes = np.bincount(labels.ravel())[1:]
        main = int(np.argmax(sizes)) + 1
        stray = int(np.flatnonzero(((labels != main) & reachable).ravel())[0])
        raise ValidationError("free cell disconnected from the main free region", stray)
    return scene


# ---------------------------------------------------------------------------
# scene text format

def _legend_letters(labels: Sequence[str]) -> dict[str, str]:
    letters: dict[str, str] = {}
    taken = {"#", "."}
    for label in labels:
        pool = [ch for ch in label.lower() if ch.isalpha()] + list("abcdefghijklmnopqrstuvwxyz")
        pool += list("ABCDEFGHIJKLMNOPQRSTUVWXYZ")
        letter = next(ch for ch in pool if ch not in taken)
        letters[label] = letter
        taken.add(letter)
    return letters


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def dumps_scene(scene: SceneSpec) -> str:
    grid = scene.grid
    letters = _legend_letters(scene.label_set)
    lines = [f"{grid.width} {grid.height} {grid.resolution:g}"]
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
                if sem == NO_LABEL:
                    raise ValidationError("free cell without label cannot be written", grid.index(x, y))
                row.append(letters[grid.labels[sem]])
        lines.append("".join(row))
    used = sorted({grid.labels[s] for s in np.unique(grid.semantic) if s != NO_LABEL},
                  key=scene.label_set.index)
    lines.append("LEGEND " + " ".join(f"{letters[lab]}={lab}" for lab in used))
    return "\n".join(lines) + "\n"


def save_scene(scene: SceneSpec, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps_scene(scene))
    meta = {
        "name": scene.name,
        "label_set": list(scene.label_set),
        "inaccessible": sorted(scene.inaccessible_cells),
    }
    sidecar_path(path).write_text(json.dumps(meta, separators=(",", ":")) + "\n")
    return path


def parse_scene(text: str, meta: dict | None = None) -> SceneSpec:
    meta = meta or {}
    lines = [ln.rstrip("\n") for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError("empty scene file")
    try:
        width, height, res = lines[0].split()
        width, height, res = int(width), int(height), float(res)
    except ValueError as exc:
        raise ParseError(f"bad header line {lines[0]!r}") from exc
    if width < 1 or height < 1:
        raise ParseError("grid dimensions must be positive")
    if len(lines) < height + 2 or not lines[height + 1].startswith("LEGEND"):
        raise ParseError("expected LEGEND line after grid rows")

    legend: dict[str, str] = {}
    for item in lines[height + 1].split()[1:]:
        letter, sep, label = item.partition("=")
        if not sep or len(letter) != 1 or not letter.isalpha() or not label:
            raise ParseError(f"bad legend entry {item!r}")
        legend[letter] = label

    label_set = list(meta.get("label_set", DEFAULT_LABELS))
    labels = tuple(label_set) + tuple(sorted(set(legend.values()) - set(label_set)))
    occupancy = np.zeros((height, width), dtype=np.int8)
    semantic = np.full((height, width), NO_LABEL, dtype=np.int16)
    for y in range(height):
        raw = lines[1 + y]
        tokens = raw.split() if " " in raw.strip() else list(raw.strip())
        if len(tokens) != width:
            raise ParseError(f"row {y} has {len(tokens)} tokens, expected {width}")
        for x, tok in enumerate(tokens):
            if tok == "#":
                occupancy[y, x] = Occupancy.OCCUPIED
            elif tok == ".":
                occupancy[y, x] = Occupancy.UNKNOWN
            elif tok in legend:
                occupancy[y, x] = Occupancy.FREE
                semantic[y, x] = labels.index(legend[tok])
            else:
                raise ParseError(f"unknown token {tok!r} at row {y} col {x}")

    grid = SemanticGrid(width, height, res, occupancy, semantic, labels)
    scene = SceneSpec(
        grid=grid,
        label_set=label_set,
        inaccessible_cells=frozenset(meta.get("inaccessible", ())),
        name=meta.get("name", "scene"),
    )
    return validate_scene(scene)


def load_scene(path: str | Path) -> SceneSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read scene file {path}: {exc}") from exc
    meta = {"name": path.stem}
    side = sidecar_path(path)
    if side.exists() and side != path:
        try:
            meta.update(json.loads(side.read_text()))
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad sidecar {side}: {exc}") from exc
    return parse_scene(text, meta)


# ---------------------------------------------------------------------------
# procedural apartments

@dataclass
class SceneParams:
    rooms: int = 6
    room_size_range: tuple[int, int] = (5, 9)
    corridor_width: int = 3
    label_set: Sequence[str] = DEFAULT_LABELS
    seed: int = 0
    room_labels: Sequence[str] | None = None
    door_width: int = 2
    interroom_door_prob: float = 0.5
    name: str | None = None


@dataclass
class _Room:
    x: int
    y: int
    w: int
    h: int
    side: int  # 0 = above the corridor, 1 = below
    label: str

    def overlaps_x(self, other: _Room) -> bool:
        # interiors need at least one wall column between them
        return not (self.x + self.w + 1 <= other.x or other.x + other.w + 1 <= self.x)


MAX_PLACEMENT_RETRIES = 100


def generate_scene(params: SceneParams) -> SceneSpec:
    """Apartment-like layout: a hallway spine with rooms on both sides.

    Rooms are placed by rejection sampling along the spine and each opens onto
    the hallway through a door gap; rooms sharing a wall may also get an
    interior door when their labels differ.
    """
    lo, hi = params.room_size_range
    if params.rooms < 1:
        raise GenerationError("need at least one room")
    if lo < 3 or hi < lo:
        raise GenerationError("room sizes must be >= 3 and a valid range")
    label_set = list(params.label_set)
    room_types = [lab for lab in label_set if lab != HALLWAY]
    if params.room_labels is not None:
        if len(params.room_labels) != params.rooms:
            raise GenerationError("room_labels must give one label per room")
        bad = [lab for lab in params.room_labels if lab not in label_set]
        if bad:
            raise GenerationError(f"room labels not in label set: {bad}")
    rng = np.random.default_rng(params.seed)
    labels = list(params.room_labels) if params.room_labels is not None else [
        room_types[int(i)] for i in rng.integers(0, len(room_types), size=params.rooms)
    ]
    name = params.name or f"gen-r{params.rooms}-s{params.seed}"

    if params.rooms == 1:
        w, h = (int(v) for v in rng.integers(lo, hi + 1, size=2))
        occ = np.full((h + 2, w + 2), Occupancy.OCCUPIED, dtype=np.int8)
        sem = np.full((h + 2, w + 2), NO_LABEL, dtype=np.int16)
        occ[1:-1, 1:-1] = Occupancy.FREE
        sem[1:-1, 1:-1] = label_set.index(labels[0])
        grid = SemanticGrid(w + 2, h + 2, 1.0, occ, sem, tuple(label_set))
        return validate_scene(SceneSpec(grid, label_set, frozenset(), name))

    if HALLWAY not in label_set:
        raise GenerationError("multi-room layouts need a 'hallway' label")
    cw = params.corridor_width
    per_side = math.ceil(params.rooms / 2)
    span = 1 + math.ceil(per_side * (hi + 1) * 1.6)
    placed: list[_Room] = []
    for label in labels:
        for _ in range(MAX_PLACEMENT_RETRIES):
            w = int(rng.integers(lo, hi + 1))
            h = int(rng.integers(lo, hi + 1))
            side = int(rng.integers(0, 2))
            x = int(rng.integers(1, span - w))
            cand = _Room(x, 0, w, h, side, label)
            if all(not (r.side == side and r.overlaps_x(cand)) for r in placed):
                placed.append(cand)
                break
        else:
            raise GenerationError(f"could not place room {len(placed)} after {MAX_PLACEMENT_RETRIES} tries")

    x_min = min(r.x for r in placed)
    x_max = max(r.x + r.w for r in placed)
    width = (x_max - x_min) + 2
    top_depth = max((r.h for r in placed if r.side == 0), default=0)
    bottom_depth = max((r.h for r in placed if r.side == 1), default=0)
    corridor_y = top_depth + 2 if top_depth else 1
    height = corridor_y + cw + (bottom_depth + 2 if bottom_depth else 1)

    occ = np.full((height, width), Occupancy.OCCUPIED, dtype=np.int8)
    sem = np.full((height, width), NO_LABEL, dtype=np.int16)
    hall = label_set.index(HALLWAY)
    occ[corridor_y:corridor_y + cw, 1:width - 1] = Occupancy.FREE
    sem[corridor_y:corridor_y + cw, 1:width - 1] = hall

    for r in placed:
        r.x = r.x - x_min + 1
        r.y = corridor_y - 1 - r.h if r.side == 0 else corridor_y + cw + 1
        lab = label_set.index(r.label)
        occ[r.y:r.y + r.h, r.x:r.x + r.w] = Occupancy.FREE
        sem[r.y:r.y + r.h, r.x:r.x + r.w] = lab
        dw = min(params.door_width, r.w)
        dx = r.x + int(rng.integers(0, r.w - dw + 1))
        wall_y = corridor_y - 1 if r.side == 0 else corridor_y + cw
        occ[wall_y, dx:dx + dw] = Occupancy.FREE
        sem[wall_y, dx:dx + dw] = lab

    for side in (0, 1):
        row = sorted((r for r in placed if r.side == side), key=lambda r: r.x)
        for a, b in zip(row, row[1:]):
            if b.x != a.x + a.w + 1 or a.label == b.label:
                continue
            if rng.random() >= params.interroom_door_prob:
                continue
            y0 = max(a.y, b.y)
            y1 = min(a.y + a.h, b.y + b.h)
            dh = min(params.door_width, y1 - y0)
            if dh < 1:
                continue
            dy = y0 + int(rng.integers(0, y1 - y0 - dh + 1))
            occ[dy:dy + dh, a.x + a.w] = Occupancy.FREE
            sem[dy:dy + dh, a.x + a.w] = label_set.index(a.label)

    grid = SemanticGrid(width, height, 1.0, occ, sem, tuple(label_set))
    free = occ == Occupancy.FREE
    near_free = ndimage.binary_dilation(free, structure=np.ones((3, 3), bool))
    inaccessible = frozenset(np.flatnonzero((~near_free).ravel()).tolist())
    return validate_scene(SceneSpec(grid, label_set, inaccessible, name))


# ---------------------------------------------------------------------------
# scenarios

MAX_START_TRIES = 1000


def sample_scenario(
    scene: SceneSpec,
    robots: int,
    target_room_type: str,
    seed: int,
    task: Task = Task.SEARCH,
    d_safe: float = 2.0,
    start_radius: int | None = None,
) -> ScenarioConfig:
    """Random robot poses (pairwise >= ``d_safe`` apart) and a target cell of the given room type.

    With ``start_radius`` the team is deployed together: poses are drawn from
    free cells within that many path hops of a random anchor cell.
    """
    grid = scene.grid
    if target_room_type not in grid.labels:
        raise InfeasibleScenario(f"room type {target_room_type!r} not in scene labels")
    free = scene.accessible_free_mask()
    target_cells = np.flatnonzero((free & (grid.semantic == grid.label_index(target_room_type))).ravel())
    if target_cells.size == 0:
        raise InfeasibleScenario(f"scene has no free {target_room_type!r} cell")
    free_cells = np.flatnonzero(free.ravel())
    if robots < 1 or free_cells.size < robots:
        raise InfeasibleScenario("not enough free cells for the robot team")

    rng = np.random.default_rng(seed)
    target = int(target_cells[rng.integers(target_cells.size)])
    if start_radius is not None:
        anchor = int(free_cells[rng.integers(free_cells.size)])
        free_cells = _cells_within(free.ravel(), grid, anchor, start_radius)
    starts: list[tuple[float, float, float]] = []
    tries = 0
    while len(starts) < robots:
        tries += 1
        if tries > MAX_START_TRIES:
            raise InfeasibleScenario(f"could not space {robots} robots by {d_safe} cells")
        x, y = grid.coords(int(free_cells[rng.integers(free_cells.size)]))
        if any(math.hypot(x - sx, y - sy) < d_safe for sx, sy, _ in starts):
            continue
        theta = round(float(rng.uniform(0.0, 2 * math.pi)), 6)
        starts.append((float(x), float(y), theta))
    return ScenarioConfig(scene, starts, target, target_room_type, task, seed)


def _cells_within(free_flat: np.ndarray, grid: SemanticGrid, start: int, radius: int) -> np.ndarray:
    seen = {start}
    frontier = [start]
    for _ in range(radius):
        nxt = []
        for c in frontier:
            for nb in grid.neighbors4(c):
                if free_flat[nb] and nb not in seen:
                    seen.add(nb)
                    nxt.append(nb)
        frontier = nxt
    return np.array(sorted(seen), dtype=np.int64)


def count_label_regions(grid: SemanticGrid) -> dict[str, int]:
    """Number of 4-connected free components per label."""
    out: dict[str, int] = {}
    free = grid.free_mask()
    for i, lab in enumerate(grid.labels):
        _, n = ndimage.label(free & (grid.semantic == i), structure=FOUR_CONNECTED)
        if n:
            out[lab] = n
    return out


def mixed_room_labels(rooms: int, seed: int, required: dict[str, int] | None = None,
                      label_set: Sequence[str] = DEFAULT_LABELS) -> list[str]:
    """Room labels with at least ``required[label]`` rooms of each listed label.

    The remaining rooms draw uniformly from the non-hallway labels not listed
    in ``required``; the result is shuffled with ``seed``.
    """
    required = dict(required or {})
    if sum(required.values()) > rooms:
        raise GenerationError("more required rooms than rooms")
    unknown = set(required) - set(label_set)
    if unknown:
        raise GenerationError(f"required labels {sorted(unknown)} not in label set")
    others = [lab for lab in label_set if lab != HALLWAY and lab not in required]
    if not others:
        others = [lab for lab in label_set if lab != HALLWAY]
    rng = np.random.default_rng(seed)
    labels = [lab for lab, n in required.items() for _ in range(n)]
    labels += [others[i] for i in rng.integers(0, len(others), rooms - len(labels))]
    rng.shuffle(labels)
    return labels
