"""Network-backed evaluator bridging tree search and the four-headed net."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import torch

from . import world as W
from .mcts import EvalRequest, EvaluationResult
from .net import ROLE_ASSISTANT, ROLE_BUILDER, encode_batch, net_forward
from .net.model import FourHeadNet


def states_to_arrays(states: Sequence[W.WorldState], self_slot: int,
                     goals: Optional[Sequence] = None,
                     include_prev_action: bool = False,
                     num_block_types: int = 2, dtype=np.float64) -> np.ndarray:
    """Encode a batch of live states from one seat's perspective."""
    m = len(states)
    dims = states[0].grid.shape
    grids = np.stack([s.grid for s in states])
    last_mods = np.stack([s.last_modifier for s in states])

    def positions(slot):
        return np.array([(-1, -1, -1) if s.players[slot].position is None
                         else s.players[slot].position for s in states],
                        dtype=np.int16)

    goal_arr = None
    if goals is not None:
        goal_arr = np.stack([np.asarray(W.goal_cells(g)) for g in goals])
    prev = None
    if include_prev_action:
        prev = [s.players[self_slot].last_action for s in states]
    return encode_batch(
        grids=grids, last_mods=last_mods,
        self_positions=positions(self_slot),
        other_positions=positions(1 - self_slot),
        self_player_idx=np.full(m, self_slot, dtype=np.int8),
        timesteps=np.array([s.timestep for s in states], dtype=np.int64),
        goals=goal_arr, prev_actions=prev,
        num_block_types=num_block_types,
        include_prev_action=include_prev_action, dtype=dtype)


class NetEvaluator:
    """Evaluate search nodes with a network, batched.

    `role` fixes the seat whose policy head drives the search. Assistant-role
    evaluators never see goals; builder-role evaluators read the goal attached
    to each request (hidden-goal searches leave it unset).
    """

    def __init__(self, model: FourHeadNet, env_cfg: W.EnvConfig, role: str,
                 value_scale: float = 1.0, use_value_head: bool = True):
        self.model = model
        self.env_cfg = env_cfg
        self.role = role
        self.self_slot = W.BUILDER if role == ROLE_BUILDER else W.ASSISTANT
        self.use_value_head = use_value_head
        self.value_scale = value_scale
        self.np_dtype = (np.float64 if model.config.dtype == "float64"
                         else np.float32)

    def evaluate_batch(self, requests: Sequence[EvalRequest]) -> list[EvaluationResult]:
        cfg = self.model.config
        states = [r.state for r in requests]
        goals = None
        if self.role == ROLE_BUILDER:
            goals = [r.goal for r in requests]
            if any(g is None for g in goals):
                goals = None
        obs = states_to_arrays(states, self.self_slot, goals,
                               cfg.include_prev_action, cfg.num_block_types,
                               self.np_dtype)
        obs_t = torch.from_numpy(obs).to(cfg.torch_dtype)
        agent_masks = torch.from_numpy(np.stack([r.agent_mask for r in requests]))
        other_masks = torch.from_numpy(np.stack([r.other_mask for r in requests]))
        carry = None
        if cfg.recurrent:
            carries = [r.parent_carry for r in requests]
            if any(c is not None for c in carries):
                zero = torch.zeros((cfg.channels, *cfg.dims), dtype=cfg.torch_dtype)
                carry = torch.stack([zero if c is None else c for c in carries])
        with torch.no_grad():
            out = net_forward(self.model, obs_t, agent_masks, other_masks, carry)
            priors = out.policy_probs.numpy()
            values = out.value.numpy()
            beliefs = out.goal_probs.numpy()
            others = out.human_probs.numpy()
        results = []
        for i in range(len(requests)):
            row_carry = out.carry[i] if out.carry is not None else None
            value = float(values[i]) * self.value_scale if self.use_value_head else 0.0
            results.append(EvaluationResult(
                priors=priors[i], value=value, belief=beliefs[i],
                other_probs=others[i], carry=row_carry))
        return results
