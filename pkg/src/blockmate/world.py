"""Two-player voxel building game: states, actions, transitions, rewards.

A world is a dense W x H x D grid of block types (0 = air) plus two embodied
players: the builder (index 0, sees the goal) and the assistant (index 1,
does not). Both act simultaneously each tick; the builder's action is applied
first and the assistant's is re-validated against the intermediate grid.

Rewards are the per-player decrease in edit distance to the goal grid, so a
correct place or break is worth +1 and an incorrect one -1. Moves and no-ops
never carry reward.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

AIR = 0

BUILDER = 0
ASSISTANT = 1

# Flat action space layout: [noop, 6 moves, break per cell, place per (block, cell)].
# The place group keeps a channel for every block type including air so the
# layout lines up with the policy head; air places are never valid.
NUM_GLOBAL_ACTIONS = 7

MOVE_DIRS = (
    (1, 0, 0),
    (-1, 0, 0),
    (0, 1, 0),
    (0, -1, 0),
    (0, 0, 1),
    (0, 0, -1),
)

NOOP = "noop"
MOVE = "move"
PLACE = "place"
BREAK = "break"

# Action type ids used by bi-level MCTS selection: noop, each move direction,
# break, place.
TYPE_NOOP = 0
TYPE_BREAK = 7
TYPE_PLACE = 8
NUM_ACTION_TYPES = 9


class ConfigurationError(ValueError):
    """Raised for invalid environment configuration or mismatched dimensions."""


class InvalidActionError(ValueError):
    """Raised in strict mode when an action is not valid for the current state."""


class DegenerateGoalError(ValueError):
    """Raised when metrics are requested for an episode whose goal needs no work."""


@dataclass(frozen=True)
class Action:
    kind: str
    direction: Optional[int] = None          # index into MOVE_DIRS
    cell: Optional[tuple[int, int, int]] = None
    block: Optional[int] = None

    def __post_init__(self):
        if self.kind == MOVE and self.direction is None:
            raise ValueError("move action needs a direction")
        if self.kind == PLACE and (self.cell is None or self.block in (None, AIR)):
            raise ValueError("place action needs a cell and a non-air block")
        if self.kind == BREAK and self.cell is None:
            raise ValueError("break action needs a cell")


NOOP_ACTION = Action(NOOP)


@dataclass(frozen=True)
class EnvConfig:
    dims: tuple[int, int, int] = (6, 6, 6)
    num_block_types: int = 4
    horizon: int = 200
    reach: int = 3
    seed: int = 0
    lenient: bool = True     # invalid actions degrade to no-ops instead of raising

    def __post_init__(self):
        w, h, d = self.dims
        if min(w, h, d) < 1:
            raise ConfigurationError(f"grid dims must be positive, got {self.dims}")
        if self.num_block_types < 2:
            raise ConfigurationError("need air plus at least one solid block type")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        if self.reach < 1:
            raise ConfigurationError("reach must be >= 1")

    @property
    def n_cells(self) -> int:
        w, h, d = self.dims
        return w * h * d

    @property
    def num_actions(self) -> int:
        return num_actions(self.dims, self.num_block_types)


def num_actions(dims: tuple[int, int, int], num_block_types: int) -> int:
    n = dims[0] * dims[1] * dims[2]
    return NUM_GLOBAL_ACTIONS + n + n * num_block_types


def cell_index(cell: tuple[int, int, int], dims: tuple[int, int, int]) -> int:
    _, h, d = dims
    x, y, z = cell
    return (x * h + y) * d + z


def cell_from_index(idx: int, dims: tuple[int, int, int]) -> tuple[int, int, int]:
    _, h, d = dims
    x, rem = divmod(idx, h * d)
    y, z = divmod(rem, d)
    return (x, y, z)


def action_index(action: Action, dims: tuple[int, int, int], num_block_types: int) -> int:
    n = dims[0] * dims[1] * dims[2]
    if action.kind == NOOP:
        return 0
    if action.kind == MOVE:
        return 1 + action.direction
    if action.kind == BREAK:
        return NUM_GLOBAL_ACTIONS + cell_index(action.cell, dims)
    if action.kind == PLACE:
        return NUM_GLOBAL_ACTIONS + n + action.block * n + cell_index(action.cell, dims)
    raise ValueError(f"unknown action kind {action.kind!r}")


def action_from_index(idx: int, dims: tuple[int, int, int], num_block_types: int) -> Action:
    n = dims[0] * dims[1] * dims[2]
    if idx < 0 or idx >= num_actions(dims, num_block_types):
        raise ValueError(f"action index {idx} out of range")
    if idx == 0:
        return NOOP_ACTION
    if idx < NUM_GLOBAL_ACTIONS:
        return Action(MOVE, direction=idx - 1)
    idx -= NUM_GLOBAL_ACTIONS
    if idx < n:
        return Action(BREAK, cell=cell_from_index(idx, dims))
    idx -= n
    block, cell = divmod(idx, n)
    if block == AIR:
        raise ValueError("air place slots are head-alignment padding, never actions")
    return Action(PLACE, cell=cell_from_index(cell, dims), block=block)


def action_type_ids(dims: tuple[int, int, int], num_block_types: int) -> np.ndarray:
    """Type id (0..8) for every flat action index; used by bi-level selection."""
    n = dims[0] * dims[1] * dims[2]
    types = np.empty(num_actions(dims, num_block_types), dtype=np.int8)
    types[:NUM_GLOBAL_ACTIONS] = np.arange(NUM_GLOBAL_ACTIONS)
    types[NUM_GLOBAL_ACTIONS:NUM_GLOBAL_ACTIONS + n] = TYPE_BREAK
    types[NUM_GLOBAL_ACTIONS + n:] = TYPE_PLACE
    return types


@dataclass(frozen=True)
class PlayerState:
    """A player's position (None = disembodied observer used in tiny test games)."""
    position: Optional[tuple[int, int, int]]
    last_action: Optional[Action] = None


@dataclass(frozen=True)
class WorldState:
    grid: np.ndarray                    # (W, H, D) int8 block codes
    players: tuple[PlayerState, PlayerState]
    timestep: int
    last_modifier: np.ndarray           # (W, H, D) int8, -1 = nobody

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.grid.shape


def empty_state(dims: tuple[int, int, int],
                positions: Sequence[Optional[tuple[int, int, int]]] = (None, None),
                timestep: int = 0) -> WorldState:
    grid = np.zeros(dims, dtype=np.int8)
    players = tuple(PlayerState(position=p) for p in positions)
    return WorldState(grid=grid, players=players, timestep=timestep,
                      last_modifier=np.full(dims, -1, dtype=np.int8))


def new_episode(config: EnvConfig, goal, rng_seed: int) -> WorldState:
    """Fresh all-air world with both players at distinct random cells."""
    cells = goal_cells(goal)
    if cells.shape != tuple(config.dims):
        raise ConfigurationError(
            f"goal dims {cells.shape} do not match config dims {config.dims}")
    if config.n_cells < 8:
        raise ConfigurationError("episodes need a grid of at least 8 cells")
    rng = np.random.default_rng(rng_seed)
    spots = rng.choice(config.n_cells, size=2, replace=False)
    positions = [cell_from_index(int(i), config.dims) for i in spots]
    return empty_state(config.dims, positions=positions)


def goal_cells(goal) -> np.ndarray:
    """Accept either a raw block-code array or anything carrying .cells."""
    return np.asarray(getattr(goal, "cells", goal))


def _occupied_mask(state: WorldState) -> np.ndarray:
    occ = np.zeros(state.grid.shape, dtype=bool)
    for p in state.players:
        if p.position is not None:
            occ[p.position] = True
    return occ


def _reach_mask(dims: tuple[int, int, int],
                position: Optional[tuple[int, int, int]], reach: int) -> np.ndarray:
    if position is None:
        return np.ones(dims, dtype=bool)
    w, h, d = dims
    px, py, pz = position
    dx = np.abs(np.arange(w) - px)[:, None, None]
    dy = np.abs(np.arange(h) - py)[None, :, None]
    dz = np.abs(np.arange(d) - pz)[None, None, :]
    return np.maximum(np.maximum(dx, dy), dz) <= reach


def valid_action_mask(state: WorldState, player: int, reach: int,
                      num_block_types: int) -> np.ndarray:
    """Boolean mask over the flat action space for one player."""
    dims = state.grid.shape
    n = state.grid.size
    mask = np.zeros(num_actions(dims, num_block_types), dtype=bool)
    mask[0] = True

    pos = state.players[player].position
    occ = _occupied_mask(state)

    if pos is not None:
        for i, (dx, dy, dz) in enumerate(MOVE_DIRS):
            t = (pos[0] + dx, pos[1] + dy, pos[2] + dz)
            if all(0 <= t[k] < dims[k] for k in range(3)):
                if state.grid[t] == AIR and not occ[t]:
                    mask[1 + i] = True

    within = _reach_mask(dims, pos, reach).ravel()
    grid_flat = state.grid.ravel()
    occ_flat = occ.ravel()

    mask[NUM_GLOBAL_ACTIONS:NUM_GLOBAL_ACTIONS + n] = (grid_flat != AIR) & within
    placeable = (grid_flat == AIR) & ~occ_flat & within
    for b in range(1, num_block_types):
        start = NUM_GLOBAL_ACTIONS + n + b * n
        mask[start:start + n] = placeable
    return mask


def valid_actions(state: WorldState, player: int, reach: int,
                  num_block_types: int) -> set[Action]:
    mask = valid_action_mask(state, player, reach, num_block_types)
    dims = state.grid.shape
    return {action_from_index(int(i), dims, num_block_types)
            for i in np.flatnonzero(mask)}


def is_valid(state: WorldState, player: int, action: Action, reach: int) -> bool:
    dims = state.grid.shape
    pos = state.players[player].position
    if action.kind == NOOP:
        return True
    if action.kind == MOVE:
        if pos is None:
            return False
        dx, dy, dz = MOVE_DIRS[action.direction]
        t = (pos[0] + dx, pos[1] + dy, pos[2] + dz)
        if not all(0 <= t[k] < dims[k] for k in range(3)):
            return False
        return state.grid[t] == AIR and not _occupied_mask(state)[t]
    cell = action.cell
    if not all(0 <= cell[k] < dims[k] for k in range(3)):
        return False
    if pos is not None:
        if max(abs(cell[k] - pos[k]) for k in range(3)) > reach:
            return False
    if action.kind == BREAK:
        return state.grid[cell] != AIR
    if action.kind == PLACE:
        if action.block == AIR:
            return False
        return state.grid[cell] == AIR and not _occupied_mask(state)[cell]
    return False


def per_cell_cost(current: np.ndarray, goal: np.ndarray) -> np.ndarray:
    """Place/break actions needed per cell: 0 match, 1 via air, 2 swap."""
    differ = current != goal
    both_solid = differ & (current != AIR) & (goal != AIR)
    return differ.astype(np.int64) + both_solid.astype(np.int64)


def edit_distance(state_or_grid, goal) -> int:
    grid = state_or_grid.grid if isinstance(state_or_grid, WorldState) else np.asarray(state_or_grid)
    cells = goal_cells(goal)
    if grid.shape != cells.shape:
        raise ConfigurationError(
            f"grid dims {grid.shape} do not match goal dims {cells.shape}")
    return int(per_cell_cost(grid, cells).sum())


@dataclass(frozen=True)
class Mutation:
    player: int
    cell: tuple[int, int, int]
    before: int
    after: int


@dataclass(frozen=True)
class StepResult:
    next_state: WorldState
    reward_builder: float
    reward_assistant: float
    done: bool
    mutations: tuple[Mutation, ...] = ()

    @property
    def shared_reward(self) -> float:
        return self.reward_builder + self.reward_assistant


def _apply_one(grid: np.ndarray, last_mod: np.ndarray,
               positions: list, player: int, action: Action,
               reach: int, lenient: bool) -> tuple[Optional[Mutation], Optional[tuple]]:
    """Mutate grid/positions for one player's action; returns (mutation, new_pos)."""
    state_view = WorldState(grid=grid,
                            players=tuple(PlayerState(position=p) for p in positions),
                            timestep=0, last_modifier=last_mod)
    if not is_valid(state_view, player, action, reach):
        if lenient:
            return None, None
        raise InvalidActionError(f"player {player}: invalid action {action}")
    if action.kind == MOVE:
        dx, dy, dz = MOVE_DIRS[action.direction]
        p = positions[player]
        return None, (p[0] + dx, p[1] + dy, p[2] + dz)
    if action.kind == PLACE:
        before = int(grid[action.cell])
        grid[action.cell] = action.block
        last_mod[action.cell] = player
        return Mutation(player, action.cell, before, action.block), None
    if action.kind == BREAK:
        before = int(grid[action.cell])
        grid[action.cell] = AIR
        last_mod[action.cell] = player
        return Mutation(player, action.cell, before, AIR), None
    return None, None


def apply_actions(state: WorldState, a_builder: Action, a_assistant: Action,
                  config: EnvConfig) -> tuple[WorldState, tuple[Mutation, ...]]:
    """Transition only: builder first, assistant re-validated on the result."""
    grid = state.grid.copy()
    last_mod = state.last_modifier.copy()
    positions = [p.position for p in state.players]
    mutations = []
    for player, action in ((BUILDER, a_builder), (ASSISTANT, a_assistant)):
        mut, new_pos = _apply_one(grid, last_mod, positions, player, action,
                                  config.reach, config.lenient)
        if mut is not None:
            mutations.append(mut)
        if new_pos is not None:
            positions[player] = new_pos
    players = (
        PlayerState(position=positions[0], last_action=a_builder),
        PlayerState(position=positions[1], last_action=a_assistant),
    )
    next_state = WorldState(grid=grid, players=players,
                            timestep=state.timestep + 1, last_modifier=last_mod)
    return next_state, tuple(mutations)


def mutation_rewards(mutations: Iterable[Mutation], goal) -> tuple[float, float]:
    """Per-player reward: the drop in that cell's cost caused by the mutation."""
    cells = goal_cells(goal)
    rewards = [0.0, 0.0]
    for m in mutations:
        g = int(cells[m.cell])
        rewards[m.player] += float(_cell_cost(m.before, g) - _cell_cost(m.after, g))
    return rewards[0], rewards[1]


def _cell_cost(value: int, goal_value: int) -> int:
    if value == goal_value:
        return 0
    if value != AIR and goal_value != AIR:
        return 2
    return 1


def apply(state: WorldState, a_builder: Action, a_assistant: Action, goal,
          config: EnvConfig) -> StepResult:
    """One simultaneous tick. Done when the goal is exactly built or time is up."""
    cells = goal_cells(goal)
    if state.grid.shape != cells.shape:
        raise ConfigurationError(
            f"state dims {state.grid.shape} do not match goal dims {cells.shape}")
    next_state, mutations = apply_actions(state, a_builder, a_assistant, config)
    r_b, r_a = mutation_rewards(mutations, cells)
    done = next_state.timestep >= config.horizon or edit_distance(next_state, cells) == 0
    return StepResult(next_state=next_state, reward_builder=r_b,
                      reward_assistant=r_a, done=done, mutations=mutations)


@dataclass
class EpisodeRecord:
    """Minimal per-episode accounting needed for the headline metrics."""
    initial_distance: int
    final_distance: int
    builder_place_break: int
    assistant_reward_sum: float
    length: int = 0


def goal_metrics(episode: EpisodeRecord) -> tuple[float, int, float]:
    """(overall goal %, builder place/break count, assistant goal %)."""
    if episode.initial_distance <= 0:
        raise DegenerateGoalError("episode started with nothing to build")
    d0 = episode.initial_distance
    overall = 100.0 * (1.0 - episode.final_distance / d0)
    assistant_pct = 100.0 * episode.assistant_reward_sum / d0
    return overall, episode.builder_place_break, assistant_pct
