"""Clipped-surrogate policy-gradient baseline for the assistant seat.

Standard PPO with GAE, an entropy bonus, and two optional assistant-specific
aids: `reward_engineering` feeds the assistant only the reward of its own
place/break actions (ignoring the builder's), and a block-placing auxiliary
loss adds cross-entropy between the block type the assistant places and the
goal's block type at that cell, its coefficient decaying linearly to zero.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .. import world as W
from ..evaluators import states_to_arrays
from ..goals import GoalSet
from ..net import NetConfig, adam_step, make_model, net_forward
from ..net.checkpoint import Checkpoint, checkpoint_from_model
from ..net.optim import AdamState

logger = logging.getLogger(__name__)


@dataclass
class PpoConfig:
    iterations: int = 60
    envs_parallel: int = 32
    rollout_length: int = 32
    sgd_batch_size: int = 512
    epochs_per_iteration: int = 3
    lr: float = 3e-4
    gamma: float = 0.95
    gae_lambda: float = 0.95
    clip: float = 0.2
    value_coeff: float = 0.01
    entropy_coeff: float = 0.03
    entropy_coeff_final: Optional[float] = None
    entropy_decay_steps: int = 0          # env steps; 0 = constant
    block_loss_coeff: float = 0.0
    block_loss_decay_steps: int = 0
    reward_engineering: bool = False
    grad_clip: float = 10.0
    seed: int = 0
    net: NetConfig = field(default_factory=NetConfig)


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                bootstrap: float, gamma: float, lam: float
                ) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and value targets for one env stream.

    `dones[t]` marks that the episode ended at step t; the value after a done
    is zero. `bootstrap` is V(s_T) for the truncated tail.
    """
    t_len = len(rewards)
    adv = np.zeros(t_len)
    last = 0.0
    for t in reversed(range(t_len)):
        next_value = 0.0 if dones[t] else (bootstrap if t == t_len - 1
                                           else values[t + 1])
        delta = rewards[t] + gamma * next_value - values[t]
        last = delta + gamma * lam * (0.0 if dones[t] else last)
        adv[t] = last
    return adv, adv + values


def clipped_surrogate(logp_new: torch.Tensor, logp_old: torch.Tensor,
                      advantages: torch.Tensor, clip: float) -> torch.Tensor:
    ratio = torch.exp(logp_new - logp_old)
    unclipped = ratio * advantages
    clipped = torch.clamp(ratio, 1.0 - clip, 1.0 + clip) * advantages
    return -torch.minimum(unclipped, clipped).mean()


def step_reward(result: W.StepResult, reward_engineering: bool) -> float:
    """The assistant's training reward for one tick."""
    if reward_engineering:
        return result.reward_assistant
    return result.shared_reward


def place_block_log_probs(policy_log_probs: torch.Tensor, actions: np.ndarray,
                          goal_codes: np.ndarray, env_cfg: W.EnvConfig
                          ) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-step -log p(goal block | place at that cell) for steps whose action
    placed a block where the goal wants one; returns (losses, count_mask)."""
    n = env_cfg.n_cells
    b = env_cfg.num_block_types
    place_base = W.NUM_GLOBAL_ACTIONS + n
    losses = []
    for row, action in enumerate(actions):
        if action < place_base:
            continue
        cell = (action - place_base) % n
        goal_block = int(goal_codes[row, cell])
        if goal_block == W.AIR:
            continue
        idx = torch.tensor([place_base + blk * n + cell for blk in range(1, b)])
        logits = policy_log_probs[row, idx]
        cond = logits - torch.logsumexp(logits, dim=0)
        losses.append(-cond[goal_block - 1])
    if not losses:
        return (torch.zeros((), dtype=policy_log_probs.dtype),
                torch.tensor(0.0))
    return torch.stack(losses).mean(), torch.tensor(float(len(losses)))


class PpoTrainer:
    def __init__(self, env_cfg: W.EnvConfig, goal_set: GoalSet,
                 builder_model, cfg: PpoConfig):
        if cfg.net.recurrent:
            raise NotImplementedError("recurrent PPO is not wired up")
        self.env_cfg = env_cfg
        self.goal_set = goal_set
        self.builder_model = builder_model
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.model = make_model(cfg.net, seed=cfg.seed)
        self.params = dict(self.model.named_parameters())
        self.adam_state: Optional[AdamState] = None
        seq = np.random.SeedSequence(cfg.seed)
        children = seq.spawn(cfg.envs_parallel * 2 + 1)
        self.env_rngs = [np.random.default_rng(c)
                         for c in children[:cfg.envs_parallel]]
        self.builder_rngs = [np.random.default_rng(c)
                             for c in children[cfg.envs_parallel:-1]]
        self.torch_rng = torch.Generator().manual_seed(cfg.seed)
        self.sample_rng = np.random.default_rng(children[-1])
        self.states: list[W.WorldState] = []
        self.goal_ids: list[int] = []
        self.first_episode = [True] * cfg.envs_parallel
        self.horizons = [env_cfg.horizon] * cfg.envs_parallel
        self.lengths = [0] * cfg.envs_parallel
        for i in range(cfg.envs_parallel):
            self._reset_env(i)
        self.env_steps = 0
        self.episode_stats: list[dict] = []
        self.loss_history: list[dict] = []

    def _reset_env(self, i: int) -> None:
        rng = self.env_rngs[i]
        goal_id = int(rng.integers(len(self.goal_set)))
        goal = self.goal_set.goals[goal_id]
        state = W.new_episode(self.env_cfg, goal, int(rng.integers(2 ** 31)))
        if len(self.states) <= i:
            self.states.append(state)
            self.goal_ids.append(goal_id)
        else:
            self.states[i] = state
            self.goal_ids[i] = goal_id
        self.horizons[i] = self.env_cfg.horizon
        if self.first_episode[i]:
            self.horizons[i] = int(rng.integers(1, self.env_cfg.horizon + 1))
            self.first_episode[i] = False
        self.lengths[i] = 0

    def _policy_values(self, states: list[W.WorldState]
                       ) -> tuple[torch.Tensor, torch.Tensor, np.ndarray]:
        cfg = self.cfg.net
        np_dtype = np.float64 if cfg.dtype == "float64" else np.float32
        obs = states_to_arrays(states, W.ASSISTANT, None,
                               cfg.include_prev_action, cfg.num_block_types,
                               np_dtype)
        masks = np.stack([W.valid_action_mask(s, W.ASSISTANT,
                                              self.env_cfg.reach,
                                              cfg.num_block_types)
                          for s in states])
        masks_t = torch.from_numpy(masks)
        with torch.no_grad():
            out = net_forward(self.model, torch.from_numpy(obs).to(cfg.torch_dtype),
                              masks_t, masks_t)
        return out.policy_log_probs, out.value, masks

    def collect(self) -> dict:
        cfg = self.cfg
        n_env = cfg.envs_parallel
        rollout: dict[str, list] = {k: [] for k in
                                    ("state", "mask", "action", "logp", "value",
                                     "reward", "done", "goal")}
        for _ in range(cfg.rollout_length):
            log_probs, values, masks = self._policy_values(self.states)
            probs = log_probs.exp().double().numpy()
            for i in range(n_env):
                rng = self.env_rngs[i]
                p = probs[i] / probs[i].sum()
                action = int(np.searchsorted(np.cumsum(p), rng.random(),
                                             side="right"))
                goal = self.goal_set.goals[self.goal_ids[i]]
                b_action, _ = self.builder_model.act(self.states[i], goal,
                                                     self.builder_rngs[i])
                act_b = (W.NOOP_ACTION if b_action == 0 else
                         W.action_from_index(b_action, self.env_cfg.dims,
                                             self.env_cfg.num_block_types))
                act_a = (W.NOOP_ACTION if action == 0 else
                         W.action_from_index(action, self.env_cfg.dims,
                                             self.env_cfg.num_block_types))
                res = W.apply(self.states[i], act_b, act_a, goal, self.env_cfg)
                reward = step_reward(res, cfg.reward_engineering)
                self.lengths[i] += 1
                done = res.done or self.lengths[i] >= self.horizons[i]
                rollout["state"].append(self.states[i])
                rollout["mask"].append(masks[i])
                rollout["action"].append(action)
                rollout["logp"].append(float(log_probs[i, action]))
                rollout["value"].append(float(values[i]))
                rollout["reward"].append(reward)
                rollout["done"].append(done)
                rollout["goal"].append(
                    np.asarray(goal.cells).ravel().astype(np.int8))
                self.states[i] = res.next_state
                self.env_steps += 1
                if done:
                    d0 = W.edit_distance(
                        np.zeros(self.env_cfg.dims, dtype=np.int8), goal)
                    d_final = W.edit_distance(self.states[i], goal)
                    self.episode_stats.append(
                        {"goal_pct": 100.0 * (1 - d_final / max(d0, 1))})
                    self._reset_env(i)
        _, boot_values, _ = self._policy_values(self.states)
        return self._assemble(rollout, boot_values.double().numpy())

    def _assemble(self, rollout: dict, bootstraps: np.ndarray) -> dict:
        cfg = self.cfg
        n_env = cfg.envs_parallel
        t_len = cfg.rollout_length
        adv = np.zeros(n_env * t_len)
        ret = np.zeros(n_env * t_len)
        for i in range(n_env):
            sel = slice(i, None, n_env)
            rewards = np.array(rollout["reward"][sel])
            values = np.array(rollout["value"][sel])
            dones = np.array(rollout["done"][sel])
            a, r = compute_gae(rewards, values, dones, float(bootstraps[i]),
                               cfg.gamma, cfg.gae_lambda)
            adv[sel] = a
            ret[sel] = r
        return {
            "states": rollout["state"],
            "masks": np.stack(rollout["mask"]),
            "actions": np.array(rollout["action"], dtype=np.int64),
            "logp_old": np.array(rollout["logp"]),
            "advantages": adv,
            "returns": ret,
            "goals": np.stack(rollout["goal"]),
        }

    def _schedule(self, start: float, final: Optional[float],
                  decay_steps: int) -> float:
        if final is None or decay_steps <= 0:
            return start
        frac = min(self.env_steps / decay_steps, 1.0)
        return start + (final - start) * frac

    def optimize(self, data: dict) -> dict:
        cfg = self.cfg
        net_cfg = cfg.net
        n = len(data["actions"])
        adv = data["advantages"]
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        ent_coeff = self._schedule(cfg.entropy_coeff, cfg.entropy_coeff_final,
                                   cfg.entropy_decay_steps)
        block_coeff = self._schedule(cfg.block_loss_coeff, 0.0,
                                     cfg.block_loss_decay_steps)
        if cfg.block_loss_decay_steps <= 0:
            block_coeff = cfg.block_loss_coeff
        parts_acc: dict[str, list[float]] = {}
        np_dtype = np.float64 if net_cfg.dtype == "float64" else np.float32
        for _ in range(cfg.epochs_per_iteration):
            order = self.sample_rng.permutation(n)
            for start in range(0, n, cfg.sgd_batch_size):
                idx = order[start:start + cfg.sgd_batch_size]
                states = [data["states"][j] for j in idx]
                obs = states_to_arrays(states, W.ASSISTANT, None,
                                       net_cfg.include_prev_action,
                                       net_cfg.num_block_types, np_dtype)
                masks = torch.from_numpy(data["masks"][idx])
                out = net_forward(self.model,
                                  torch.from_numpy(obs).to(net_cfg.torch_dtype),
                                  masks, masks)
                actions_t = torch.from_numpy(data["actions"][idx])
                logp_new = out.policy_log_probs.gather(
                    1, actions_t.unsqueeze(1)).squeeze(1)
                logp_old = torch.from_numpy(data["logp_old"][idx]).to(logp_new.dtype)
                adv_t = torch.from_numpy(adv[idx]).to(logp_new.dtype)
                policy_loss = clipped_surrogate(logp_new, logp_old, adv_t,
                                                cfg.clip)
                value_loss = ((out.value - torch.from_numpy(
                    data["returns"][idx]).to(out.value.dtype)) ** 2).mean()
                plp = out.policy_log_probs
                ent = -(plp.exp() * torch.where(torch.isfinite(plp), plp,
                                                torch.zeros_like(plp))).sum(-1).mean()
                block_loss, block_n = place_block_log_probs(
                    out.policy_log_probs, data["actions"][idx],
                    data["goals"][idx], self.env_cfg)
                total = (policy_loss + cfg.value_coeff * value_loss
                         - ent_coeff * ent + block_coeff * block_loss)
                self.model.zero_grad(set_to_none=True)
                total.backward()
                grads = {k: (p.grad.detach().clone() if p.grad is not None
                             else torch.zeros_like(p))
                         for k, p in self.params.items()}
                self.adam_state = adam_step(self.params, grads, lr=cfg.lr,
                                            grad_clip=cfg.grad_clip,
                                            state=self.adam_state)
                for key, value in (("policy", policy_loss), ("value", value_loss),
                                   ("entropy", ent), ("block", block_loss),
                                   ("total", total)):
                    parts_acc.setdefault(key, []).append(float(value.detach()))
        return {k: float(np.mean(v)) for k, v in parts_acc.items()}


def train_ppo_assistant(env_cfg: W.EnvConfig, goal_train: GoalSet,
                        builder_model, cfg: PpoConfig) -> Checkpoint:
    trainer = PpoTrainer(env_cfg, goal_train, builder_model, cfg)
    start = time.time()
    for iteration in range(cfg.iterations):
        trainer.model.eval()
        data = trainer.collect()
        trainer.model.train()
        losses = trainer.optimize(data)
        losses["iteration"] = iteration
        trainer.loss_history.append(losses)
        recent = trainer.episode_stats[-50:]
        mean_goal = (float(np.mean([e["goal_pct"] for e in recent]))
                     if recent else float("nan"))
        logger.info("ppo iter %d/%d goal%%=%.1f loss=%s (%.0fs)",
                    iteration + 1, cfg.iterations, mean_goal,
                    {k: round(v, 3) for k, v in losses.items()
                     if k != "iteration"}, time.time() - start)
    trainer.model.eval()
    return checkpoint_from_model(trainer.model, metadata={
        "kind": "ppo-assistant",
        "iterations": cfg.iterations,
        "env_steps": trainer.env_steps,
        "loss_history": trainer.loss_history,
        "episode_stats": trainer.episode_stats[-200:],
        "seed": cfg.seed,
    })
