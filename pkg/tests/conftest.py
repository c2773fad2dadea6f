from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from sagr.sensing import ObservedMap
from sagr.world import DEFAULT_LABELS, NO_LABEL, Occupancy, SceneSpec, SemanticGrid, parse_scene

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

LABEL_OF = {"b": "bedroom", "k": "kitchen", "t": "bathroom", "l": "living_room", "h": "hallway", "c": "closet"}


def grid_from_rows(rows: list[str], labels=DEFAULT_LABELS) -> SemanticGrid:
    """ASCII helper: '#' occupied, '.' unknown, '_' unlabeled free, letters from LABEL_OF."""
    h, w = len(rows), len(rows[0])
    occ = np.zeros((h, w), dtype=np.int8)
    sem = np.full((h, w), NO_LABEL, dtype=np.int16)
    for y, row in enumerate(rows):
        for x, ch in enumerate(row):
            if ch == "#":
                occ[y, x] = Occupancy.OCCUPIED
            elif ch == ".":
                occ[y, x] = Occupancy.UNKNOWN
            else:
                occ[y, x] = Occupancy.FREE
                if ch != "_":
                    sem[y, x] = labels.index(LABEL_OF[ch])
    return SemanticGrid(w, h, 1.0, occ, sem, tuple(labels))


def observed_from_rows(rows: list[str]) -> ObservedMap:
    return ObservedMap(grid_from_rows(rows))


def scene_from_rows(rows: list[str], name="test") -> SceneSpec:
    legend = " ".join(f"{k}={v}" for k, v in LABEL_OF.items())
    text = f"{len(rows[0])} {len(rows)} 1\n" + "\n".join(rows) + f"\nLEGEND {legend}\n"
    return parse_scene(text, {"name": name})


def random_observed(rng: np.random.Generator, max_side: int = 20, n_labels: int = 3) -> ObservedMap:
    """Random map with blocky labels so room instances have some extent."""
    w, h = (int(v) for v in rng.integers(2, max_side + 1, size=2))
    p = rng.dirichlet([1.0, 1.0, 1.0])
    occ = rng.choice([Occupancy.UNKNOWN, Occupancy.FREE, Occupancy.OCCUPIED], size=(h, w), p=p).astype(np.int8)
    block = int(rng.integers(1, 6))
    coarse = rng.integers(0, n_labels, size=(h // block + 1, w // block + 1))
    sem = np.kron(coarse, np.ones((block, block), dtype=int))[:h, :w].astype(np.int16)
    sem[occ != Occupancy.FREE] = NO_LABEL
    return ObservedMap(SemanticGrid(w, h, 1.0, occ, sem, DEFAULT_LABELS))


@st.composite
def observed_maps(draw, max_side: int = 12):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_observed(np.random.default_rng(seed), max_side)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
