"""Goal grids: procedural house generation, text file format, train/test split.

Houses are simple but varied: a rectangular floor, four walls with a door
(and sometimes windows), and a flat or stepped roof, each with its own block
type. All structures keep the lateral boundary faces of the grid empty so a
player can always walk around them.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .world import AIR, ConfigurationError

FORMAT_MAGIC = "mbag-goals"
FORMAT_VERSION = "v1"


class GoalFileError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class GoalGrid:
    dims: tuple[int, int, int]
    cells: np.ndarray       # (W, H, D) int8 block codes

    def __post_init__(self):
        if tuple(self.cells.shape) != tuple(self.dims):
            raise ConfigurationError("goal cell array does not match dims")

    def digest(self) -> str:
        return hashlib.sha256(self.cells.tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class GoalSet:
    goals: tuple[GoalGrid, ...]
    tag: str = "train"
    num_block_types: Optional[int] = None   # from the file header, when loaded

    def __post_init__(self):
        if not self.goals:
            raise ConfigurationError("goal set is empty")
        dims = self.goals[0].dims
        if any(g.dims != dims for g in self.goals):
            raise ConfigurationError("goals in a set must share dimensions")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.goals[0].dims

    def __len__(self) -> int:
        return len(self.goals)


def check_goal(goal: GoalGrid) -> None:
    """Structures must be non-empty and keep all four lateral faces clear."""
    cells = goal.cells
    if not (cells != AIR).any():
        raise ConfigurationError("goal has no blocks")
    w, _, d = goal.dims
    lateral = np.concatenate([
        cells[0].ravel(), cells[w - 1].ravel(),
        cells[:, :, 0].ravel(), cells[:, :, d - 1].ravel(),
    ])
    if (lateral != AIR).any():
        raise ConfigurationError("goal touches a lateral boundary face")


def generate_house(seed: int, dims: tuple[int, int, int] = (6, 6, 6),
                   num_block_types: int = 4) -> GoalGrid:
    """Deterministic-by-seed house inside the 1-cell lateral margin."""
    w, h, d = dims
    if w < 6 or d < 6 or h < 4:
        raise ConfigurationError(
            f"dims {dims} too small for a house (need >= 6x4x6 with margin)")
    rng = np.random.default_rng(seed)
    cells = np.zeros(dims, dtype=np.int8)
    solids = np.arange(1, num_block_types)

    # Footprint: a rectangle placed inside the lateral margin.
    fw = int(rng.integers(3, w - 1))            # 3 .. w-2
    fd = int(rng.integers(3, d - 1))
    x0 = int(rng.integers(1, w - 1 - fw + 1))
    z0 = int(rng.integers(1, d - 1 - fd + 1))
    x1, z1 = x0 + fw - 1, z0 + fd - 1

    floor_type = int(rng.choice(solids))
    wall_type = int(rng.choice(solids))
    roof_type = int(rng.choice(solids))

    wall_top = int(rng.integers(2, h - 1))      # walls span y=1..wall_top-1, roof at wall_top
    stepped = bool(rng.integers(0, 2)) and wall_top + 1 <= h - 2 and min(fw, fd) >= 4

    cells[x0:x1 + 1, 0, z0:z1 + 1] = floor_type

    for y in range(1, wall_top):
        cells[x0:x1 + 1, y, z0] = wall_type
        cells[x0:x1 + 1, y, z1] = wall_type
        cells[x0, y, z0:z1 + 1] = wall_type
        cells[x1, y, z0:z1 + 1] = wall_type

    # Door: a 1-wide gap, up to 2 tall, in a random wall.
    side = int(rng.integers(0, 4))
    if side in (0, 1):
        dx = int(rng.integers(x0 + 1, x1))
        door = (dx, z0 if side == 0 else z1)
    else:
        dz = int(rng.integers(z0 + 1, z1))
        door = (x0 if side == 2 else x1, dz)
    for y in range(1, min(3, wall_top)):
        cells[door[0], y, door[1]] = AIR

    # Occasional 1x1 windows on tall walls.
    if wall_top >= 4:
        for _ in range(int(rng.integers(0, 3))):
            wside = int(rng.integers(0, 4))
            wy = int(rng.integers(2, wall_top))
            if wside in (0, 1):
                wx = int(rng.integers(x0 + 1, x1))
                wcell = (wx, wy, z0 if wside == 0 else z1)
            else:
                wz = int(rng.integers(z0 + 1, z1))
                wcell = (x0 if wside == 2 else x1, wy, wz)
            if wcell[:1] + wcell[1:] != (door[0], wy, door[1]):
                cells[wcell] = AIR

    if stepped:
        cells[x0:x1 + 1, wall_top, z0] = roof_type
        cells[x0:x1 + 1, wall_top, z1] = roof_type
        cells[x0, wall_top, z0:z1 + 1] = roof_type
        cells[x1, wall_top, z0:z1 + 1] = roof_type
        cells[x0 + 1:x1, wall_top + 1, z0 + 1:z1] = roof_type
    else:
        cells[x0:x1 + 1, wall_top, z0:z1 + 1] = roof_type

    goal = GoalGrid(dims=dims, cells=cells)
    check_goal(goal)
    return goal


def generate_goal_set(n: int, seed: int, dims: tuple[int, int, int] = (6, 6, 6),
                      num_block_types: int = 4, tag: str = "train") -> GoalSet:
    goals = tuple(generate_house(seed + i, dims, num_block_types) for i in range(n))
    return GoalSet(goals=goals, tag=tag, num_block_types=num_block_types)


def split(goal_set: GoalSet, test_fraction: float, seed: int) -> tuple[GoalSet, GoalSet]:
    """Deterministic disjoint train/test partition with at least one goal each."""
    if not (0.0 < test_fraction < 1.0):
        raise ConfigurationError("test_fraction must be in (0, 1)")
    n = len(goal_set)
    if n < 2:
        raise ConfigurationError("need at least 2 goals to split")
    n_test = int(round(test_fraction * n))
    n_test = min(max(n_test, 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    test_idx = set(int(i) for i in order[:n_test])
    train = tuple(g for i, g in enumerate(goal_set.goals) if i not in test_idx)
    test = tuple(g for i, g in enumerate(goal_set.goals) if i in test_idx)
    b = goal_set.num_block_types
    return (GoalSet(goals=train, tag="train", num_block_types=b),
            GoalSet(goals=test, tag="test", num_block_types=b))


def save_goals(goal_set: GoalSet, path, num_block_types: int | None = None) -> None:
    with open(path, "w", encoding="ascii", newline="") as f:
        f.write(dumps_goals(goal_set, num_block_types))


def dumps_goals(goal_set: GoalSet, num_block_types: int | None = None) -> str:
    w, h, d = goal_set.dims
    if num_block_types is None:
        num_block_types = max(int(g.cells.max()) for g in goal_set.goals) + 1
    out = io.StringIO()
    out.write(f"{FORMAT_MAGIC} {FORMAT_VERSION} {w} {h} {d} {num_block_types} {len(goal_set)}\n")
    for goal in goal_set.goals:
        out.write("\n")
        for y in range(h):
            for z in range(d):
                out.write(" ".join(str(int(goal.cells[x, y, z])) for x in range(w)))
                out.write("\n")
    return out.getvalue()


def load_goals(path, tag: str = "train") -> GoalSet:
    with open(path, "r", encoding="ascii") as f:
        return loads_goals(f.read(), tag=tag)


def loads_goals(text: str, tag: str = "train") -> GoalSet:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise GoalFileError("empty goal file")
    header = lines[0].split()
    if len(header) != 7 or header[0] != FORMAT_MAGIC or header[1] != FORMAT_VERSION:
        raise GoalFileError(f"bad header {lines[0]!r}", line=1)
    try:
        w, h, d, num_block_types, count = (int(v) for v in header[2:])
    except ValueError:
        raise GoalFileError(f"non-integer header fields in {lines[0]!r}", line=1)
    if count < 1:
        raise GoalFileError("goal count must be >= 1", line=1)

    goals = []
    ln = 1  # 0-based index of the next unread line; +1 when reporting
    for g in range(count):
        if ln >= len(lines) or lines[ln] != "":
            raise GoalFileError(f"expected blank line before goal {g}", line=ln + 1)
        ln += 1
        cells = np.zeros((w, h, d), dtype=np.int8)
        for y in range(h):
            for z in range(d):
                if ln >= len(lines):
                    raise GoalFileError("unexpected end of file", line=ln + 1)
                parts = lines[ln].split(" ")
                if len(parts) != w or lines[ln] != " ".join(parts):
                    raise GoalFileError(f"expected {w} space-separated codes", line=ln + 1)
                for x, p in enumerate(parts):
                    try:
                        code = int(p)
                    except ValueError:
                        raise GoalFileError(f"bad block code {p!r}", line=ln + 1)
                    if not (0 <= code < num_block_types):
                        raise GoalFileError(
                            f"block code {code} out of range [0, {num_block_types})",
                            line=ln + 1)
                    cells[x, y, z] = code
                ln += 1
        goals.append(GoalGrid(dims=(w, h, d), cells=cells))
    if ln != len(lines):
        raise GoalFileError("trailing content after last goal", line=ln + 1)
    return GoalSet(goals=tuple(goals), tag=tag, num_block_types=num_block_types)
