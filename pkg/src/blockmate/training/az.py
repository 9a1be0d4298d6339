"""Search-based self-play training.

Two entry points share one collection/optimization loop:

* ``train_assistant`` — the headline trainer. The assistant plans with
  belief-MCTS (rewards estimated from its own goal head, partner actions
  sampled from its partner-prediction head), plays alongside a fixed builder
  model, and regresses all four heads on the replayed fragments.
* ``train_solo_builder`` — a single-seat variant with the goal visible and
  exact rewards, used to make a planning-based builder model. Supports the
  two usual solo tricks: a no-op penalty and early termination when the
  distance to the goal stops improving.

Episodes are collected in fixed-length fragments across parallel envs, but a
fragment only enters the replay buffer once its episode finishes, because
value targets are exact discounted reward-to-go over the rest of the episode.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from .. import mcts as M
from .. import world as W
from ..evaluators import NetEvaluator
from ..goals import GoalSet
from ..net import (LossWeights, NetConfig, TrainBatch, adam_step, compute_loss,
                   encode_batch, make_model)
from ..net.checkpoint import Checkpoint, checkpoint_from_model
from ..net.model import FourHeadNet
from ..net.optim import AdamState
from ..replay import Fragment, FragmentReplayBuffer

logger = logging.getLogger(__name__)


@dataclass
class TrainerConfig:
    iterations: int = 60
    envs_parallel: int = 32
    fragment_length: int = 16
    buffer_capacity: int = 16384
    steps_per_iteration: int = 2048
    sgd_batch_size: int = 256
    epochs_per_iteration: int = 1
    lr: float = 1e-3
    gamma: float = 0.95
    weights: LossWeights = field(default_factory=LossWeights)
    mcts: M.MctsConfig = field(default_factory=lambda: M.MctsConfig(
        num_simulations=32, dirichlet_epsilon=0.25))
    seed: int = 0
    net: NetConfig = field(default_factory=NetConfig)
    grad_clip: float = 10.0
    noop_penalty: float = 0.0
    stagnation_limit: Optional[int] = None
    randomize_first_episode: bool = True
    min_buffer_steps: Optional[int] = None

    def __post_init__(self):
        if self.fragment_length < 1:
            raise ValueError("fragment_length must be >= 1")
        if self.sgd_batch_size > self.steps_per_iteration:
            raise ValueError("sgd_batch_size cannot exceed steps_per_iteration")
        # one discount governs both search backups and value targets
        self.mcts = dataclasses.replace(self.mcts, gamma=self.gamma)


class _Slot:
    """One live environment: episode state plus pending step records."""

    def __init__(self, index: int, seed_seq: np.random.SeedSequence):
        env_rng, search_rng, builder_rng = (np.random.default_rng(s)
                                            for s in seed_seq.spawn(3))
        self.index = index
        self.env_rng = env_rng
        self.search_rng = search_rng
        self.builder_rng = builder_rng
        self.state: Optional[W.WorldState] = None
        self.goal_id = -1
        self.goal_cells: Optional[np.ndarray] = None
        self.horizon = 0
        self.steps: list[dict] = []
        self.episode_rewards: list[float] = []
        self.prev_agent_action = -1
        self.carry = None
        self.min_d = 0
        self.since_min = 0
        self.first_episode = True


class SelfPlayTrainer:
    """Shared engine; `agent_slot` decides which seat is being trained."""

    def __init__(self, env_cfg: W.EnvConfig, goal_set: GoalSet,
                 cfg: TrainerConfig, agent_slot: int,
                 builder_model=None):
        if cfg.net.recurrent and agent_slot == W.BUILDER:
            raise NotImplementedError("recurrent solo training is not wired up")
        self.env_cfg = env_cfg
        self.goal_set = goal_set
        self.cfg = cfg
        self.agent_slot = agent_slot
        self.builder_model = builder_model
        self.known_theta = agent_slot == W.BUILDER
        torch.manual_seed(cfg.seed)
        self.model = make_model(cfg.net, seed=cfg.seed)
        role = "builder" if self.known_theta else "assistant"
        self.evaluator = NetEvaluator(self.model, env_cfg, role)
        self.buffer = FragmentReplayBuffer(cfg.buffer_capacity)
        seq = np.random.SeedSequence(cfg.seed)
        self.slots = [_Slot(i, child)
                      for i, child in enumerate(seq.spawn(cfg.envs_parallel))]
        self.sample_rng = np.random.default_rng(seq.spawn(1)[0])
        for slot in self.slots:
            self._reset_slot(slot)
        self.adam_state: Optional[AdamState] = None
        self.params = dict(self.model.named_parameters())
        self.loss_history: list[dict] = []
        self.episode_stats: list[dict] = []
        self.env_steps = 0

    # -- episode management ----------------------------------------------

    def _reset_slot(self, slot: _Slot) -> None:
        slot.goal_id = int(slot.env_rng.integers(len(self.goal_set)))
        goal = self.goal_set.goals[slot.goal_id]
        slot.goal_cells = np.asarray(goal.cells).ravel().astype(np.int8)
        slot.state = W.new_episode(self.env_cfg, goal,
                                   int(slot.env_rng.integers(2 ** 31)))
        slot.horizon = self.env_cfg.horizon
        if slot.first_episode and self.cfg.randomize_first_episode:
            slot.horizon = int(slot.env_rng.integers(1, self.env_cfg.horizon + 1))
        slot.first_episode = False
        slot.steps = []
        slot.prev_agent_action = -1
        slot.carry = None
        slot.min_d = W.edit_distance(slot.state, slot.goal_cells.reshape(
            self.env_cfg.dims))
        slot.since_min = 0

    def _finalize_episode(self, slot: _Slot) -> None:
        steps = slot.steps
        if steps:
            returns = np.zeros(len(steps), dtype=np.float32)
            acc = 0.0
            for t in reversed(range(len(steps))):
                acc = steps[t]["reward"] + self.cfg.gamma * acc
                returns[t] = acc
            for t, step in enumerate(steps):
                step["value_target"] = returns[t]
            length = self.cfg.fragment_length
            for start in range(0, len(steps), length):
                chunk = steps[start:start + length]
                self.buffer.add(self._make_fragment(slot, chunk))
            d0 = steps[0]["d_before"]
            d_final = steps[-1]["d_after"]
            if d0 > 0:
                self.episode_stats.append({
                    "goal_pct": 100.0 * (1 - d_final / d0),
                    "length": len(steps),
                })
        self._reset_slot(slot)

    def _make_fragment(self, slot: _Slot, chunk: list[dict]) -> Fragment:
        keys = ("grid", "last_mod", "self_pos", "other_pos", "timestep",
                "prev_action", "agent_mask", "other_mask", "pol_idx",
                "pol_probs", "pol_len", "other_action", "belief",
                "value_target")
        arrays = {k: np.stack([s[k] for s in chunk]) for k in keys}
        return Fragment(arrays=arrays, goal_id=slot.goal_id,
                        goal_cells=slot.goal_cells, length=len(chunk))

    # -- collection --------------------------------------------------------

    def collect(self) -> None:
        cfg = self.cfg
        sims_pad = cfg.mcts.num_simulations
        for _ in range(cfg.fragment_length):
            searches = []
            for slot in self.slots:
                ctx = M.SearchContext(
                    env_cfg=self.env_cfg, agent_slot=self.agent_slot,
                    reward_mode=(M.KNOWN_THETA if self.known_theta
                                 else cfg.mcts.reward_mode),
                    goal=(slot.goal_cells.reshape(self.env_cfg.dims)
                          if self.known_theta else None),
                    noop_penalty=cfg.noop_penalty,
                    horizon=slot.horizon)
                other = M.NoopOther() if self.known_theta else M.NetworkOther()
                searches.append(M.Search(ctx, cfg.mcts, slot.search_rng,
                                         slot.state, other,
                                         root_carry=slot.carry))
            policies = M.run_searches(searches, self.evaluator)
            for slot, search, pol in zip(self.slots, searches, policies):
                slot.carry = search.root.carry
                agent_idx = pol.sample(slot.search_rng)
                goal_grid = slot.goal_cells.reshape(self.env_cfg.dims)
                if self.known_theta:
                    other_idx = 0
                else:
                    other_idx, _ = self.builder_model.act(
                        slot.state, goal_grid, slot.builder_rng)
                self._step_slot(slot, search, pol, agent_idx, other_idx,
                                sims_pad)

    def _step_slot(self, slot: _Slot, search: M.Search, pol: M.SearchPolicy,
                   agent_idx: int, other_idx: int, sims_pad: int) -> None:
        env_cfg = self.env_cfg
        b = env_cfg.num_block_types
        goal_grid = slot.goal_cells.reshape(env_cfg.dims)
        agent_action = (W.NOOP_ACTION if agent_idx == 0 else
                        W.action_from_index(agent_idx, env_cfg.dims, b))
        other_action = (W.NOOP_ACTION if other_idx == 0 else
                        W.action_from_index(other_idx, env_cfg.dims, b))
        if self.agent_slot == W.ASSISTANT:
            a0, a1 = other_action, agent_action
        else:
            a0, a1 = agent_action, other_action
        d_before = W.edit_distance(slot.state, goal_grid)
        res = W.apply(slot.state, a0, a1, goal_grid, env_cfg)
        reward = res.shared_reward
        if agent_idx == 0:
            reward += self.cfg.noop_penalty
        d_after = W.edit_distance(res.next_state, goal_grid)

        nz = np.flatnonzero(pol.counts)
        pol_idx = np.zeros(sims_pad, dtype=np.int32)
        pol_probs = np.zeros(sims_pad, dtype=np.float32)
        pol_idx[:len(nz)] = nz
        pol_probs[:len(nz)] = pol.probs[nz]

        me = slot.state.players[self.agent_slot].position
        other_pos = slot.state.players[1 - self.agent_slot].position
        agent_mask = W.valid_action_mask(slot.state, self.agent_slot,
                                         env_cfg.reach, b)
        other_mask = W.valid_action_mask(slot.state, 1 - self.agent_slot,
                                         env_cfg.reach, b)
        slot.steps.append({
            "grid": slot.state.grid.ravel().copy(),
            "last_mod": slot.state.last_modifier.ravel().copy(),
            "self_pos": np.asarray((-1, -1, -1) if me is None else me,
                                   dtype=np.int16),
            "other_pos": np.asarray((-1, -1, -1) if other_pos is None else other_pos,
                                    dtype=np.int16),
            "timestep": np.int32(slot.state.timestep),
            "prev_action": np.int32(slot.prev_agent_action),
            "agent_mask": np.packbits(agent_mask),
            "other_mask": np.packbits(other_mask),
            "pol_idx": pol_idx,
            "pol_probs": pol_probs,
            "pol_len": np.int32(len(nz)),
            "other_action": np.int32(other_idx),
            # keep the net's own precision: the stored prediction must equal
            # the live prediction bit-for-bit until the first update
            "belief": np.asarray(pol.belief).copy(),
            "reward": float(reward),
            "d_before": d_before,
            "d_after": d_after,
        })
        slot.prev_agent_action = agent_idx
        slot.state = res.next_state
        self.env_steps += 1

        done = res.next_state.timestep >= slot.horizon or d_after == 0
        if self.cfg.stagnation_limit is not None:
            if d_after < slot.min_d:
                slot.min_d = d_after
                slot.since_min = 0
            else:
                slot.since_min += 1
                if slot.since_min >= self.cfg.stagnation_limit:
                    done = True
        if done:
            self._finalize_episode(slot)

    # -- optimization -------------------------------------------------------

    def _batch_from_fragments(self, fragments: list[Fragment]) -> TrainBatch:
        env_cfg = self.env_cfg
        net_cfg = self.cfg.net
        b = env_cfg.num_block_types
        a = env_cfg.num_actions
        cat = {k: np.concatenate([f.arrays[k] for f in fragments])
               for k in fragments[0].arrays}
        n_steps = len(cat["grid"])
        goals = None
        goal_target = np.concatenate([
            np.repeat(f.goal_cells[None, :], f.length, axis=0)
            for f in fragments]).astype(np.int64)
        if self.known_theta:
            goals = goal_target.reshape(-1, *env_cfg.dims)
        prev_actions = None
        if net_cfg.include_prev_action:
            prev_actions = [None if c < 0 else
                            W.action_from_index(int(c), env_cfg.dims, b)
                            for c in cat["prev_action"]]
        np_dtype = np.float64 if net_cfg.dtype == "float64" else np.float32
        obs = encode_batch(
            grids=cat["grid"].reshape(-1, *env_cfg.dims),
            last_mods=cat["last_mod"].reshape(-1, *env_cfg.dims),
            self_positions=cat["self_pos"], other_positions=cat["other_pos"],
            self_player_idx=np.full(n_steps, self.agent_slot, dtype=np.int8),
            timesteps=cat["timestep"].astype(np.int64),
            goals=goals, prev_actions=prev_actions,
            num_block_types=b, include_prev_action=net_cfg.include_prev_action,
            dtype=np_dtype)
        agent_mask = np.unpackbits(cat["agent_mask"], axis=1)[:, :a].astype(bool)
        other_mask = np.unpackbits(cat["other_mask"], axis=1)[:, :a].astype(bool)
        target = np.zeros((n_steps, a), dtype=np_dtype)
        rows = np.arange(n_steps)
        for j in range(cat["pol_idx"].shape[1]):
            live = j < cat["pol_len"]
            target[rows[live], cat["pol_idx"][live, j]] = cat["pol_probs"][live, j]
        dtype_t = net_cfg.torch_dtype
        return TrainBatch(
            obs=torch.from_numpy(obs).to(dtype_t),
            policy_mask=torch.from_numpy(agent_mask),
            human_mask=torch.from_numpy(other_mask),
            target_policy=torch.from_numpy(target).to(dtype_t),
            value_target=torch.from_numpy(cat["value_target"]).to(dtype_t),
            goal_target=torch.from_numpy(goal_target),
            human_action=torch.from_numpy(cat["other_action"].astype(np.int64)),
            stored_goal_pred=torch.from_numpy(cat["belief"]).to(dtype_t),
            fragment_lengths=tuple(f.length for f in fragments),
        )

    def optimize(self, weights: LossWeights) -> Optional[dict]:
        cfg = self.cfg
        min_steps = cfg.min_buffer_steps or cfg.sgd_batch_size
        if self.buffer.total_steps < min_steps:
            return None
        parts_acc: dict[str, list[float]] = {}
        for _ in range(cfg.epochs_per_iteration):
            fragments = self.buffer.sample_steps(cfg.steps_per_iteration,
                                                 self.sample_rng)
            batch_frames: list[Fragment] = []
            batch_steps = 0
            batches = []
            for frag in fragments:
                batch_frames.append(frag)
                batch_steps += frag.length
                if batch_steps >= cfg.sgd_batch_size:
                    batches.append(batch_frames)
                    batch_frames, batch_steps = [], 0
            if batch_frames:
                batches.append(batch_frames)
            for frames in batches:
                batch = self._batch_from_fragments(frames)
                total, parts = compute_loss(self.model, batch, weights)
                self.model.zero_grad(set_to_none=True)
                total.backward()
                grads = {k: (p.grad.detach().clone() if p.grad is not None
                             else torch.zeros_like(p))
                         for k, p in self.params.items()}
                self.adam_state = adam_step(self.params, grads, lr=cfg.lr,
                                            grad_clip=cfg.grad_clip,
                                            state=self.adam_state)
                parts["total"] = float(total.detach())
                for k, v in parts.items():
                    parts_acc.setdefault(k, []).append(v)
        return {k: float(np.mean(v)) for k, v in parts_acc.items()}


def _run_training(trainer: SelfPlayTrainer, cfg: TrainerConfig,
                  kind: str,
                  callback: Optional[Callable[[int, FourHeadNet], None]] = None
                  ) -> Checkpoint:
    start = time.time()
    for iteration in range(cfg.iterations):
        trainer.model.eval()
        trainer.collect()
        trainer.model.train()
        progress = iteration / max(cfg.iterations - 1, 1)
        weights = cfg.weights.at_progress(progress)
        losses = trainer.optimize(weights)
        if losses is not None:
            losses["iteration"] = iteration
            trainer.loss_history.append(losses)
        recent = trainer.episode_stats[-50:]
        mean_goal = (float(np.mean([e["goal_pct"] for e in recent]))
                     if recent else float("nan"))
        logger.info("%s iter %d/%d buffer=%d goal%%=%.1f loss=%s (%.0fs)",
                    kind, iteration + 1, cfg.iterations,
                    trainer.buffer.total_steps, mean_goal,
                    {k: round(v, 3) for k, v in (losses or {}).items()
                     if k != "iteration"},
                    time.time() - start)
        if callback is not None:
            callback(iteration, trainer.model)
    trainer.model.eval()
    return checkpoint_from_model(trainer.model, metadata={
        "kind": kind,
        "iterations": cfg.iterations,
        "env_steps": trainer.env_steps,
        "loss_history": trainer.loss_history,
        "episode_stats": trainer.episode_stats[-200:],
        "seed": cfg.seed,
        "sample_rng_state": trainer.sample_rng.bit_generator.state,
    })


def train_assistant(env_cfg: W.EnvConfig, goal_train: GoalSet, builder_model,
                    cfg: TrainerConfig,
                    callback: Optional[Callable] = None) -> Checkpoint:
    """Belief-search self-play against a fixed builder model."""
    trainer = SelfPlayTrainer(env_cfg, goal_train, cfg, W.ASSISTANT,
                              builder_model=builder_model)
    return _run_training(trainer, cfg, "assistant-search", callback)


def train_solo_builder(env_cfg: W.EnvConfig, goal_set: GoalSet,
                       cfg: TrainerConfig,
                       callback: Optional[Callable] = None) -> Checkpoint:
    """Single-seat planning builder: goal visible, partner frozen to no-ops."""
    trainer = SelfPlayTrainer(env_cfg, goal_set, cfg, W.BUILDER)
    return _run_training(trainer, cfg, "solo-builder", callback)
