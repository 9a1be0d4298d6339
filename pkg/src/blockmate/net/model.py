"""Four-headed convolutional network over the voxel grid.

A shared 3D-conv backbone feeds four heads: the action policy, a scalar value,
a per-cell distribution over goal block types (the assistant's belief about
what it is helping to build), and a prediction of the other player's next
action. Policy-style heads emit one channel per global action (no-op and the
six moves, pooled over space by probability mass) plus per-cell break and
place channels, matching the flat action indexing in `world`.

Batch norm is deliberately replaced by a learnable per-channel scale and bias
so outputs never depend on batch statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..world import NUM_GLOBAL_ACTIONS, num_actions
from .encode import obs_channels

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class NetConfig:
    dims: tuple[int, int, int] = (6, 6, 6)
    num_block_types: int = 4
    channels: int = 32
    num_res_blocks: int = 2
    kernel_size: int = 3
    recurrent: bool = False
    dropout: float = 0.0
    include_prev_action: bool = False
    dtype: str = "float64"

    def __post_init__(self):
        self.dims = tuple(self.dims)
        if self.channels < 4:
            raise ValueError("need at least 4 channels")
        if self.num_res_blocks < 1:
            raise ValueError("need at least one residual block")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel size must be odd")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.dims))

    @property
    def in_channels(self) -> int:
        return obs_channels(self.num_block_types, self.include_prev_action)

    @property
    def num_actions(self) -> int:
        return num_actions(self.dims, self.num_block_types)

    @property
    def torch_dtype(self) -> torch.dtype:
        return DTYPES[self.dtype]


class ScaleBias(nn.Module):
    """Per-channel learnable affine; the batch-statistics-free norm stand-in."""

    def __init__(self, channels: int):
        super().__init__()
        self.scale = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        shape = (1, -1) + (1,) * (x.dim() - 2)
        return x * self.scale.view(shape) + self.bias.view(shape)


class ResBlock(nn.Module):
    def __init__(self, channels: int, kernel_size: int, dropout: float):
        super().__init__()
        pad = kernel_size // 2
        self.conv1 = nn.Conv3d(channels, channels, kernel_size, padding=pad)
        self.norm1 = ScaleBias(channels)
        self.conv2 = nn.Conv3d(channels, channels, kernel_size, padding=pad)
        self.norm2 = ScaleBias(channels)
        self.dropout = nn.Dropout(dropout) if dropout > 0 else None

    def forward(self, x):
        h = F.relu(self.norm1(self.conv1(x)))
        if self.dropout is not None:
            h = self.dropout(h)
        h = self.norm2(self.conv2(h))
        return F.relu(x + h)


class SpatialGRU(nn.Module):
    """Gated recurrent carry applied independently at every spatial location,
    with a skip connection around it."""

    def __init__(self, channels: int):
        super().__init__()
        self.gates = nn.Conv3d(2 * channels, 2 * channels, 1)
        self.cand = nn.Conv3d(2 * channels, channels, 1)

    def forward(self, x, carry):
        if carry is None:
            carry = torch.zeros_like(x)
        zr = torch.sigmoid(self.gates(torch.cat([x, carry], dim=1)))
        z, r = zr.chunk(2, dim=1)
        h_tilde = torch.tanh(self.cand(torch.cat([x, r * carry], dim=1)))
        new_carry = (1 - z) * carry + z * h_tilde
        return x + new_carry, new_carry


class PolicyStyleHead(nn.Module):
    """Two 1x1x1 convolutions emitting (B + 8) action channels."""

    def __init__(self, channels: int, num_block_types: int):
        super().__init__()
        self.conv1 = nn.Conv3d(channels, channels, 1)
        self.conv2 = nn.Conv3d(channels, num_block_types + 8, 1)

    def forward(self, h):
        return self.conv2(F.leaky_relu(self.conv1(h)))


class FourHeadNet(nn.Module):
    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        c = config.channels
        self.input_conv = nn.Conv3d(config.in_channels, c, 1)
        self.blocks = nn.ModuleList([
            ResBlock(c, config.kernel_size, config.dropout)
            for _ in range(config.num_res_blocks)
        ])
        self.gru = SpatialGRU(c) if config.recurrent else None
        self.policy_head = PolicyStyleHead(c, config.num_block_types)
        self.human_head = PolicyStyleHead(c, config.num_block_types)
        self.value_fc1 = nn.Linear(c, c)
        self.value_fc2 = nn.Linear(c, 1)
        self.goal_conv1 = nn.Conv3d(c, c, 1)
        self.goal_conv2 = nn.Conv3d(c, config.num_block_types, 1)
        self.to(config.torch_dtype)

    def features(self, x: torch.Tensor, carry: Optional[torch.Tensor] = None):
        h = self.input_conv(x)
        for block in self.blocks:
            h = block(h)
        new_carry = carry
        if self.gru is not None:
            h, new_carry = self.gru(h, carry)
        return h, new_carry

    def head_outputs(self, h: torch.Tensor) -> dict:
        policy_elems = self.policy_head(h)
        human_elems = self.human_head(h)
        pooled = h.mean(dim=(2, 3, 4))
        value = self.value_fc2(F.leaky_relu(self.value_fc1(pooled))).squeeze(-1)
        goal_logits = self.goal_conv2(F.leaky_relu(self.goal_conv1(h)))
        return {
            "policy_elems": policy_elems,
            "human_elems": human_elems,
            "value": value,
            "goal_logits": goal_logits,
        }


def make_model(config: NetConfig, seed: int = 0) -> FourHeadNet:
    torch.manual_seed(seed)
    return FourHeadNet(config)


def flat_action_logits(elems: torch.Tensor, num_block_types: int) -> torch.Tensor:
    """(M, B+8, W, H, D) head elements -> (M, A) flat action logits.

    The softmax is taken jointly over every head element; summing the
    probabilities of a global action's channel over space is the same as a
    log-sum-exp over cells of that channel in logit space.
    """
    m = elems.shape[0]
    n = elems.shape[2] * elems.shape[3] * elems.shape[4]
    flat = elems.reshape(m, elems.shape[1], n)
    global_logits = torch.logsumexp(flat[:, :NUM_GLOBAL_ACTIONS], dim=2)
    break_logits = flat[:, NUM_GLOBAL_ACTIONS]
    place_logits = flat[:, NUM_GLOBAL_ACTIONS + 1:].reshape(m, num_block_types * n)
    return torch.cat([global_logits, break_logits, place_logits], dim=1)


def masked_log_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Log-probabilities with invalid entries at exactly -inf (probability 0)."""
    neg_inf = torch.finfo(logits.dtype).min
    masked = torch.where(mask, logits, torch.full_like(logits, neg_inf))
    out = masked - torch.logsumexp(masked, dim=-1, keepdim=True)
    return torch.where(mask, out, torch.full_like(out, float("-inf")))


@dataclass
class NetOutput:
    """Batched network outputs with masking already applied."""
    policy_log_probs: torch.Tensor      # (M, A), -inf where invalid
    value: torch.Tensor                 # (M,)
    goal_log_probs: torch.Tensor        # (M, n_cells, B)
    human_log_probs: torch.Tensor       # (M, A)
    carry: Optional[torch.Tensor] = None

    @property
    def policy_probs(self) -> torch.Tensor:
        return self.policy_log_probs.exp()

    @property
    def goal_probs(self) -> torch.Tensor:
        return self.goal_log_probs.exp()

    @property
    def human_probs(self) -> torch.Tensor:
        return self.human_log_probs.exp()


def net_forward(model: FourHeadNet, obs: torch.Tensor,
                policy_mask: torch.Tensor, human_mask: torch.Tensor,
                carry: Optional[torch.Tensor] = None) -> NetOutput:
    """One frame for a batch. Masks are boolean (M, A)."""
    cfg = model.config
    h, new_carry = model.features(obs, carry)
    heads = model.head_outputs(h)
    policy_logits = flat_action_logits(heads["policy_elems"], cfg.num_block_types)
    human_logits = flat_action_logits(heads["human_elems"], cfg.num_block_types)
    m = obs.shape[0]
    goal_logits = heads["goal_logits"].reshape(m, cfg.num_block_types, cfg.n_cells)
    goal_logits = goal_logits.permute(0, 2, 1)
    return NetOutput(
        policy_log_probs=masked_log_softmax(policy_logits, policy_mask),
        value=heads["value"],
        goal_log_probs=F.log_softmax(goal_logits, dim=-1),
        human_log_probs=masked_log_softmax(human_logits, human_mask),
        carry=new_carry,
    )


def net_forward_sequence(model: FourHeadNet, obs_seq: torch.Tensor,
                         policy_masks: torch.Tensor, human_masks: torch.Tensor,
                         carry: Optional[torch.Tensor] = None) -> NetOutput:
    """Time-major (T, M, ...) sequence, threading the recurrent carry.

    Feedforward models process the whole sequence as one flat batch; recurrent
    models step frame by frame, which matches feeding frames individually.
    """
    t, m = obs_seq.shape[0], obs_seq.shape[1]
    if model.gru is None:
        flat = net_forward(model, obs_seq.reshape(t * m, *obs_seq.shape[2:]),
                           policy_masks.reshape(t * m, -1),
                           human_masks.reshape(t * m, -1))
        return NetOutput(
            policy_log_probs=flat.policy_log_probs.reshape(t, m, -1),
            value=flat.value.reshape(t, m),
            goal_log_probs=flat.goal_log_probs.reshape(t, m, *flat.goal_log_probs.shape[1:]),
            human_log_probs=flat.human_log_probs.reshape(t, m, -1),
            carry=None,
        )
    outputs = []
    for i in range(t):
        out = net_forward(model, obs_seq[i], policy_masks[i], human_masks[i], carry)
        carry = out.carry
        outputs.append(out)
    return NetOutput(
        policy_log_probs=torch.stack([o.policy_log_probs for o in outputs]),
        value=torch.stack([o.value for o in outputs]),
        goal_log_probs=torch.stack([o.goal_log_probs for o in outputs]),
        human_log_probs=torch.stack([o.human_log_probs for o in outputs]),
        carry=carry,
    )
