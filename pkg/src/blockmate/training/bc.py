"""Supervised action cloning on recorded corpora.

One engine covers the three imitation jobs in the pipeline: cloning builder
behavior with goal access (builder models), cloning builder behavior with the
goal stripped (the "pretrained" assistant), and fine-tuning on assistant-seat
demonstrations (the instruction-tuned assistant). Observations are rebuilt
from compact replayed states at batch time, so corpora stay small on disk.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .. import world as W
from ..goals import GoalSet
from ..net import (NetConfig, adam_step, encode_batch, make_model,
                   masked_log_softmax, net_forward)
from ..net.checkpoint import Checkpoint, checkpoint_from_model
from ..net.model import FourHeadNet
from ..trajectories import TrajectoryCorpus, replay_episode

logger = logging.getLogger(__name__)


@dataclass
class BcHyper:
    epochs: int = 10
    lr: float = 1e-3
    lr_final: Optional[float] = None    # linear decay over the first half
    batch_size: int = 128
    augment: bool = False
    grad_clip: float = 10.0
    seed: int = 0


@dataclass
class BcDataset:
    """Compact per-step records; observations are encoded lazily per batch."""
    env: W.EnvConfig
    player: int
    strip_goal: bool
    grids: np.ndarray            # (N, n) int8
    last_mods: np.ndarray        # (N, n) int8
    self_pos: np.ndarray         # (N, 3) int16, -1 for disembodied
    other_pos: np.ndarray
    timesteps: np.ndarray        # (N,)
    prev_actions: np.ndarray     # (N,) int32 flat code, -1 for none
    labels: np.ndarray           # (N,) int32 flat action codes
    masks: np.ndarray            # (N, ceil(A/8)) packed booleans
    goal_ids: np.ndarray         # (N,) int32
    goal_cells: np.ndarray       # (G, n) int8 lookup by goal id

    def __len__(self) -> int:
        return len(self.labels)


def build_dataset(corpus: TrajectoryCorpus, goal_set: GoalSet,
                  env_cfg: W.EnvConfig, player: int = W.BUILDER,
                  strip_goal: Optional[bool] = None) -> BcDataset:
    if strip_goal is None:
        strip_goal = corpus.strip_goal
    if not corpus.episodes:
        raise ValueError("corpus has no episodes")
    n = env_cfg.n_cells
    a = env_cfg.num_actions
    grids, lms, spos, opos, ts, prev, labels, masks, gids = ([] for _ in range(9))
    for trace in corpus.episodes:
        prev_action_code = -1
        for state, ab, aa, _ in replay_episode(trace, goal_set, env_cfg):
            grids.append(state.grid.ravel().copy())
            lms.append(state.last_modifier.ravel().copy())
            me = state.players[player].position
            other = state.players[1 - player].position
            spos.append((-1, -1, -1) if me is None else me)
            opos.append((-1, -1, -1) if other is None else other)
            ts.append(state.timestep)
            prev.append(prev_action_code)
            label = ab if player == W.BUILDER else aa
            labels.append(label)
            mask = W.valid_action_mask(state, player, env_cfg.reach,
                                       env_cfg.num_block_types)
            masks.append(np.packbits(mask))
            gids.append(trace.goal_id)
            prev_action_code = label
    goal_cells = np.stack([np.asarray(g.cells).ravel() for g in goal_set.goals])
    return BcDataset(
        env=env_cfg, player=player, strip_goal=strip_goal,
        grids=np.asarray(grids, dtype=np.int8),
        last_mods=np.asarray(lms, dtype=np.int8),
        self_pos=np.asarray(spos, dtype=np.int16),
        other_pos=np.asarray(opos, dtype=np.int16),
        timesteps=np.asarray(ts, dtype=np.int64),
        prev_actions=np.asarray(prev, dtype=np.int32),
        labels=np.asarray(labels, dtype=np.int32),
        masks=np.stack(masks),
        goal_ids=np.asarray(gids, dtype=np.int32),
        goal_cells=goal_cells.astype(np.int8))


def _permute_action_codes(codes: np.ndarray, perms: np.ndarray,
                          n_cells: int) -> np.ndarray:
    """Remap the block type of place actions under per-sample permutations."""
    out = codes.copy()
    place_base = W.NUM_GLOBAL_ACTIONS + n_cells
    is_place = codes >= place_base
    if is_place.any():
        rel = codes[is_place] - place_base
        blocks = rel // n_cells
        cells = rel % n_cells
        rows = np.flatnonzero(is_place)
        new_blocks = perms[rows, blocks]
        out[is_place] = place_base + new_blocks * n_cells + cells
    return out


def encode_dataset_batch(ds: BcDataset, idx: np.ndarray, model_cfg: NetConfig,
                         rng: Optional[np.random.Generator] = None,
                         augment: bool = False):
    """(obs, mask, labels) torch tensors for the sampled rows, optionally with
    a random per-sample block-type permutation applied consistently to the
    grid, the goal, and any place actions."""
    n = ds.env.n_cells
    b = ds.env.num_block_types
    grids = ds.grids[idx]
    goals = ds.goal_cells[ds.goal_ids[idx]]
    prev_codes = ds.prev_actions[idx].copy()
    labels = ds.labels[idx].copy()
    if augment:
        perms = np.zeros((len(idx), b), dtype=np.int64)
        for i in range(len(idx)):
            perms[i, 0] = 0
            perms[i, 1:] = 1 + rng.permutation(b - 1)
        rows = np.arange(len(idx))[:, None]
        grids = perms[rows, grids.astype(np.int64)].astype(np.int8)
        goals = perms[rows, goals.astype(np.int64)].astype(np.int8)
        labels = _permute_action_codes(labels, perms, n)
        has_prev = prev_codes >= 0
        prev_codes[has_prev] = _permute_action_codes(
            prev_codes[has_prev], perms[has_prev], n)

    dims = ds.env.dims
    prev_actions = None
    if model_cfg.include_prev_action:
        prev_actions = [None if c < 0 else W.action_from_index(int(c), dims, b)
                        for c in prev_codes]
    np_dtype = np.float64 if model_cfg.dtype == "float64" else np.float32
    obs = encode_batch(
        grids=grids.reshape(-1, *dims), last_mods=ds.last_mods[idx].reshape(-1, *dims),
        self_positions=ds.self_pos[idx], other_positions=ds.other_pos[idx],
        self_player_idx=np.full(len(idx), ds.player, dtype=np.int8),
        timesteps=ds.timesteps[idx],
        goals=None if ds.strip_goal else goals.reshape(-1, *dims),
        prev_actions=prev_actions, num_block_types=b,
        include_prev_action=model_cfg.include_prev_action, dtype=np_dtype)
    masks = np.unpackbits(ds.masks[idx], axis=1)[:, :ds.env.num_actions].astype(bool)
    return (torch.from_numpy(obs).to(model_cfg.torch_dtype),
            torch.from_numpy(masks),
            torch.from_numpy(labels.astype(np.int64)))


def clone_actions(dataset: BcDataset, model: FourHeadNet, hyper: BcHyper,
                  log_every: int = 0) -> list[float]:
    """Cross-entropy training of the action head; returns per-epoch mean CE."""
    rng = np.random.default_rng(hyper.seed)
    params = dict(model.named_parameters())
    state = None
    history = []
    n = len(dataset)
    total_batches = hyper.epochs * max(1, n // hyper.batch_size)
    batch_counter = 0
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            obs, masks, labels = encode_dataset_batch(
                dataset, idx, model.config, rng, hyper.augment)
            out = net_forward(model, obs, masks, masks)
            logp = torch.clamp(out.policy_log_probs, min=-30.0)
            loss = -(logp.gather(1, labels.unsqueeze(1)).squeeze(1)).mean()
            model.zero_grad(set_to_none=True)
            loss.backward()
            grads = {k: p.grad.detach().clone() if p.grad is not None
                     else torch.zeros_like(p) for k, p in params.items()}
            lr = hyper.lr
            if hyper.lr_final is not None:
                half = total_batches / 2
                frac = min(batch_counter / max(half, 1), 1.0)
                lr = hyper.lr + (hyper.lr_final - hyper.lr) * frac
            state = adam_step(params, grads, lr=lr, grad_clip=hyper.grad_clip,
                              state=state)
            losses.append(float(loss.detach()))
            batch_counter += 1
        history.append(float(np.mean(losses)))
        if log_every and (epoch + 1) % log_every == 0:
            logger.info("bc epoch %d/%d ce=%.4f", epoch + 1, hyper.epochs,
                        history[-1])
    return history


def train_builder_clone(corpus: TrajectoryCorpus, goal_set: GoalSet,
                        env_cfg: W.EnvConfig, net_cfg: NetConfig,
                        hyper: BcHyper) -> Checkpoint:
    """Builder model: sees the goal and its own previous action."""
    dataset = build_dataset(corpus, goal_set, env_cfg, player=W.BUILDER,
                            strip_goal=False)
    model = make_model(net_cfg, seed=hyper.seed)
    history = clone_actions(dataset, model, hyper, log_every=5)
    return checkpoint_from_model(model, metadata={
        "kind": "builder-clone", "ce_history": history,
        "episodes": len(corpus.episodes)})


def pretrain_assistant(corpus: TrajectoryCorpus, goal_set: GoalSet,
                       env_cfg: W.EnvConfig, net_cfg: NetConfig,
                       hyper: BcHyper) -> Checkpoint:
    """Next-action prediction on goal-stripped builder data."""
    dataset = build_dataset(corpus, goal_set, env_cfg, player=W.BUILDER,
                            strip_goal=True)
    model = make_model(net_cfg, seed=hyper.seed)
    history = clone_actions(dataset, model, hyper, log_every=5)
    return checkpoint_from_model(model, metadata={
        "kind": "pretrained-assistant", "ce_history": history,
        "episodes": len(corpus.episodes)})


ACTION_HEAD_PREFIX = "policy_head."


def sft_assistant(pretrained: Checkpoint, demo_corpus: TrajectoryCorpus,
                  goal_set: GoalSet, env_cfg: W.EnvConfig, hyper: BcHyper,
                  init_action_head: bool = True,
                  temperature: float = 0.3) -> Checkpoint:
    """Fine-tune the pretrained model on assistant-seat demonstrations."""
    model = pretrained.build_model()
    if init_action_head:
        fresh = make_model(model.config, seed=hyper.seed + 1)
        fresh_params = dict(fresh.named_parameters())
        with torch.no_grad():
            for name, param in model.named_parameters():
                if name.startswith(ACTION_HEAD_PREFIX):
                    param.copy_(fresh_params[name])
    dataset = build_dataset(demo_corpus, goal_set, env_cfg, player=W.ASSISTANT,
                            strip_goal=True)
    history = clone_actions(dataset, model, hyper, log_every=5)
    return checkpoint_from_model(model, metadata={
        "kind": "sft-assistant", "ce_history": history,
        "temperature": temperature,
        "init_action_head": init_action_head})
