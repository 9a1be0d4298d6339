"""Observation tensors: what each player's network sees.

Per-cell feature channels, in order (B = number of block types):

    [0,  B)      current block one-hot
    [B,  2B)     goal block one-hot (all zero when the goal is hidden)
    2B           own position
    2B+1         other player's position
    [2B+2,2B+5)  last modifier one-hot: nobody / self / other
    2B+5         timestep / 1000

Builder-model networks additionally get the player's previous action:

    [base, base+9)     action type one-hot (noop, 6 moves, break, place)
    base+9             cell touched by a previous place/break
    [base+10, ...+B)   block type of a previous place

Everything is ego-centric ("self" vs "other") so the same encoding serves
both seats.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..world import (
    BREAK, MOVE, NOOP, PLACE, NUM_ACTION_TYPES, TYPE_BREAK, TYPE_PLACE,
    Action, WorldState,
)

ROLE_BUILDER = "builder"
ROLE_ASSISTANT = "assistant"

TIMESTEP_SCALE = 1000.0
PREV_ACTION_TYPE_CHANNELS = NUM_ACTION_TYPES  # 9
PREV_ACTION_EXTRA = PREV_ACTION_TYPE_CHANNELS + 1  # + cell marker


def obs_channels(num_block_types: int, include_prev_action: bool) -> int:
    base = 2 * num_block_types + 6
    if include_prev_action:
        base += PREV_ACTION_EXTRA + num_block_types
    return base


def _action_type(action: Action) -> int:
    if action.kind == NOOP:
        return 0
    if action.kind == MOVE:
        return 1 + action.direction
    if action.kind == BREAK:
        return TYPE_BREAK
    return TYPE_PLACE


def encode_observation(state: WorldState, role: str, goal,
                       num_block_types: int, include_prev_action: bool = False,
                       dtype=np.float64) -> np.ndarray:
    """(C, W, H, D) feature tensor for one player. Goal must stay hidden from
    the assistant; passing one for the assistant role is a contract violation.
    Builder-role encodings may omit the goal to produce goal-blind inputs for
    pretraining-style corpora."""
    if role == ROLE_ASSISTANT and goal is not None:
        raise ValueError("assistant observations must not contain the goal")
    if role not in (ROLE_BUILDER, ROLE_ASSISTANT):
        raise ValueError(f"unknown role {role!r}")
    self_idx = 0 if role == ROLE_BUILDER else 1

    goal_cells = None
    if goal is not None:
        goal_cells = np.asarray(getattr(goal, "cells", goal))

    self_p = state.players[self_idx]
    other_p = state.players[1 - self_idx]
    batch = encode_batch(
        grids=state.grid[None],
        last_mods=state.last_modifier[None],
        self_positions=np.array([_pos(self_p.position)], dtype=np.int16),
        other_positions=np.array([_pos(other_p.position)], dtype=np.int16),
        self_player_idx=np.array([self_idx], dtype=np.int8),
        timesteps=np.array([state.timestep], dtype=np.int64),
        goals=None if goal_cells is None else goal_cells[None],
        prev_actions=[self_p.last_action] if include_prev_action else None,
        num_block_types=num_block_types,
        include_prev_action=include_prev_action,
        dtype=dtype,
    )
    return batch[0]


def _pos(position) -> tuple[int, int, int]:
    return (-1, -1, -1) if position is None else position


def encode_batch(grids: np.ndarray, last_mods: np.ndarray,
                 self_positions: np.ndarray, other_positions: np.ndarray,
                 self_player_idx: np.ndarray, timesteps: np.ndarray,
                 goals: Optional[np.ndarray],
                 prev_actions: Optional[Sequence[Optional[Action]]],
                 num_block_types: int, include_prev_action: bool,
                 dtype=np.float64) -> np.ndarray:
    """Vectorized encoding: (M, C, W, H, D) from compact state arrays."""
    m = grids.shape[0]
    dims = grids.shape[1:]
    n = int(np.prod(dims))
    b = num_block_types
    c = obs_channels(b, include_prev_action)
    out = np.zeros((m, c, n), dtype=dtype)

    rows = np.arange(m)
    flat_grid = grids.reshape(m, n).astype(np.int64)
    np.put_along_axis(out[:, 0:b], flat_grid[:, None, :], 1.0, axis=1)
    if goals is not None:
        flat_goal = goals.reshape(m, n).astype(np.int64)
        np.put_along_axis(out[:, b:2 * b], flat_goal[:, None, :], 1.0, axis=1)

    def scatter_positions(channel: int, positions: np.ndarray) -> None:
        ok = positions[:, 0] >= 0
        if ok.any():
            idx = ((positions[:, 0] * dims[1]) + positions[:, 1]) * dims[2] + positions[:, 2]
            out[rows[ok], channel, idx[ok]] = 1.0

    scatter_positions(2 * b, self_positions)
    scatter_positions(2 * b + 1, other_positions)

    lm = last_mods.reshape(m, n)
    self_idx = self_player_idx.astype(np.int8)[:, None]
    out[:, 2 * b + 2] = (lm == -1)
    out[:, 2 * b + 3] = (lm == self_idx)
    out[:, 2 * b + 4] = (lm == (1 - self_idx))

    out[:, 2 * b + 5] = (timesteps.astype(dtype) / TIMESTEP_SCALE)[:, None]

    if include_prev_action:
        base = 2 * b + 6
        if prev_actions is None:
            prev_actions = [None] * m
        for i, action in enumerate(prev_actions):
            if action is None:
                continue
            out[i, base + _action_type(action)] = 1.0
            if action.cell is not None:
                idx = ((action.cell[0] * dims[1]) + action.cell[1]) * dims[2] + action.cell[2]
                out[i, base + PREV_ACTION_TYPE_CHANNELS, idx] = 1.0
            if action.kind == PLACE:
                out[i, base + PREV_ACTION_EXTRA + action.block] = 1.0

    return out.reshape(m, c, *dims)
