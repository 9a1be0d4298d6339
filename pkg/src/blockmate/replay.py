"""Fragment replay buffer.

Fragments are contiguous runs of steps from a single episode and are stored,
evicted, and sampled only as whole units so recurrent policies can always
rebuild their carry from a fragment's first step.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np


@dataclass
class Fragment:
    arrays: dict[str, np.ndarray]     # every array's first axis is time
    goal_id: int
    goal_cells: np.ndarray            # (n_cells,) int8
    length: int

    def __post_init__(self):
        for name, arr in self.arrays.items():
            if len(arr) != self.length:
                raise ValueError(f"array {name!r} has length {len(arr)}, "
                                 f"fragment says {self.length}")


class FragmentReplayBuffer:
    def __init__(self, capacity_steps: int):
        if capacity_steps < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity_steps
        self._fragments: deque[Fragment] = deque()
        self._steps = 0

    def __len__(self) -> int:
        return len(self._fragments)

    @property
    def total_steps(self) -> int:
        return self._steps

    def add(self, fragment: Fragment) -> None:
        self._fragments.append(fragment)
        self._steps += fragment.length
        while self._steps > self.capacity and len(self._fragments) > 1:
            dropped = self._fragments.popleft()
            self._steps -= dropped.length

    def sample_steps(self, n_steps: int, rng: np.random.Generator) -> list[Fragment]:
        """Uniformly ordered whole fragments totalling at least n_steps
        (or everything stored, if smaller)."""
        if not self._fragments:
            return []
        order = rng.permutation(len(self._fragments))
        picked = []
        total = 0
        for idx in order:
            frag = self._fragments[idx]
            picked.append(frag)
            total += frag.length
            if total >= n_steps:
                break
        return picked
