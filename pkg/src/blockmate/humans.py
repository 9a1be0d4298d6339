"""Builder (human-side) behavior models.

Three families, mirroring how people get modeled in cooperative games:

* ``BoltzmannBuilder`` — a scripted noisily-greedy builder. Place and break
  actions are scored by their true immediate reward, moves by how much they
  shrink the distance to the nearest cell that still needs work, and actions
  are drawn from a softmax at inverse temperature beta.
* ``BcModel`` — a network cloned from recorded behavior.
* ``PiklPolicy`` — search with the cloned network as prior: the c_puct knob
  slides between reward-greedy play and faithful imitation. Its action
  distribution is the full-support asymptotic policy, so no action ever has
  probability zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np
import torch

from . import world as W
from . import mcts as M
from .evaluators import NetEvaluator, states_to_arrays
from .net import ROLE_BUILDER, net_forward
from .net.checkpoint import Checkpoint
from .net.model import FourHeadNet


class BuilderModel(Protocol):
    """act() returns (sampled flat action index, dense action distribution)."""

    def act(self, state: W.WorldState, goal, rng: np.random.Generator
            ) -> tuple[int, np.ndarray]:
        ...


# ------------------------------------------------------------- Boltzmann

@dataclass
class BoltzmannBuilderConfig:
    beta: float = 3.0
    noop_bias: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.beta) or self.beta < 0:
            raise ValueError("beta must be finite and non-negative")


def action_scores(state: W.WorldState, goal, env_cfg: W.EnvConfig,
                  player: int = W.BUILDER) -> tuple[np.ndarray, np.ndarray]:
    """(scores, valid mask) over the flat action space for one player.

    Place/break actions score their immediate reward; moves score the drop in
    distance-to-nearest-incorrect-cell (clamped by reach); no-op scores 0.
    """
    cells = W.goal_cells(goal)
    dims = state.grid.shape
    n = state.grid.size
    b = env_cfg.num_block_types
    mask = W.valid_action_mask(state, player, env_cfg.reach, b)
    scores = np.zeros(len(mask))

    grid_flat = state.grid.ravel().astype(np.int64)
    goal_flat = cells.ravel().astype(np.int64)
    cost_now = _cost_vec(grid_flat, goal_flat)

    # break: cost(current) - cost(air)
    scores[W.NUM_GLOBAL_ACTIONS:W.NUM_GLOBAL_ACTIONS + n] = (
        cost_now - _cost_vec(np.zeros(n, dtype=np.int64), goal_flat))
    # place block v: cost(air) - cost(v), defined on air cells
    base = W.NUM_GLOBAL_ACTIONS + n
    cost_air = _cost_vec(np.zeros(n, dtype=np.int64), goal_flat)
    for v in range(1, b):
        cost_v = _cost_vec(np.full(n, v, dtype=np.int64), goal_flat)
        scores[base + v * n: base + (v + 1) * n] = cost_air - cost_v

    pos = state.players[player].position
    wrong = np.flatnonzero(grid_flat != goal_flat)
    if pos is not None and len(wrong):
        coords = np.stack(np.unravel_index(wrong, dims), axis=1)

        def eff_dist(p):
            cheb = np.abs(coords - np.asarray(p)).max(axis=1)
            return float(np.maximum(cheb - env_cfg.reach, 0).min())

        here = eff_dist(pos)
        for i, (dx, dy, dz) in enumerate(W.MOVE_DIRS):
            if mask[1 + i]:
                there = (pos[0] + dx, pos[1] + dy, pos[2] + dz)
                scores[1 + i] = here - eff_dist(there)
    scores[~mask] = 0.0
    return scores, mask


def _cost_vec(values: np.ndarray, goals: np.ndarray) -> np.ndarray:
    differ = values != goals
    both_solid = differ & (values != W.AIR) & (goals != W.AIR)
    return differ.astype(np.float64) + both_solid.astype(np.float64)


def boltzmann_distribution(scores: np.ndarray, mask: np.ndarray, beta: float,
                           noop_bias: float = 0.0) -> np.ndarray:
    """Softmax over valid actions of beta * score, plus a flat no-op bonus."""
    logits = beta * scores.astype(np.float64)
    logits[0] += noop_bias
    logits[~mask] = -np.inf
    logits -= logits[mask].max()
    probs = np.exp(logits, where=np.isfinite(logits), out=np.zeros_like(logits))
    return probs / probs.sum()


def boltzmann_act(state: W.WorldState, goal, beta: float,
                  rng: np.random.Generator, env_cfg: W.EnvConfig,
                  noop_bias: float = 0.0,
                  player: int = W.BUILDER) -> tuple[int, np.ndarray]:
    scores, mask = action_scores(state, goal, env_cfg, player)
    probs = boltzmann_distribution(scores, mask, beta, noop_bias)
    action = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    return action, probs


class BoltzmannBuilder:
    def __init__(self, env_cfg: W.EnvConfig, config: BoltzmannBuilderConfig,
                 player: int = W.BUILDER):
        self.env_cfg = env_cfg
        self.config = config
        self.player = player

    def act(self, state, goal, rng):
        return boltzmann_act(state, goal, self.config.beta, rng, self.env_cfg,
                             self.config.noop_bias, self.player)

    def act_batch(self, states, goals, rngs):
        return [self.act(s, g, r)[0] for s, g, r in zip(states, goals, rngs)]


# ------------------------------------------------------------- cloned nets

class BcModel:
    """Builder policy read off a trained network's action head."""

    def __init__(self, checkpoint: Checkpoint):
        self.checkpoint = checkpoint
        self.model: FourHeadNet = checkpoint.build_model()
        self.model.eval()
        cfg = self.model.config
        if cfg.recurrent:
            raise NotImplementedError("recurrent builder models are not wired "
                                      "into live play yet")
        self.env_dims = cfg.dims
        self.num_block_types = cfg.num_block_types

    def distribution_batch(self, states: Sequence[W.WorldState], goals,
                           env_cfg: W.EnvConfig) -> np.ndarray:
        cfg = self.model.config
        obs = states_to_arrays(states, W.BUILDER, goals,
                               cfg.include_prev_action, cfg.num_block_types,
                               np.float64 if cfg.dtype == "float64" else np.float32)
        masks = np.stack([W.valid_action_mask(s, W.BUILDER, env_cfg.reach,
                                              cfg.num_block_types)
                          for s in states])
        with torch.no_grad():
            out = net_forward(self.model, torch.from_numpy(obs).to(cfg.torch_dtype),
                              torch.from_numpy(masks), torch.from_numpy(masks))
            return out.policy_probs.double().numpy()

    def act(self, state, goal, rng, env_cfg: Optional[W.EnvConfig] = None):
        env_cfg = env_cfg or W.EnvConfig(dims=self.env_dims,
                                         num_block_types=self.num_block_types)
        probs = self.distribution_batch([state], [goal], env_cfg)[0]
        action = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
        return action, probs

    def act_batch(self, states, goals, rngs, env_cfg: W.EnvConfig):
        probs = self.distribution_batch(states, goals, env_cfg)
        return [int(np.searchsorted(np.cumsum(p), r.random(), side="right"))
                for p, r in zip(probs, rngs)]


@dataclass
class PiklConfig:
    c_puct: float = 30.0
    num_simulations: int = 32
    gamma: float = 0.95

    def __post_init__(self):
        if self.c_puct <= 0:
            raise ValueError("c_puct must be positive")


class PiklPolicy:
    """Search-improved imitation: plan with the cloned policy as prior while
    the other seat is assumed idle, then act from the full-support policy."""

    def __init__(self, prior: BcModel, config: PiklConfig, env_cfg: W.EnvConfig):
        self.prior = prior
        self.config = config
        self.env_cfg = env_cfg
        self.evaluator = NetEvaluator(self.prior.model, env_cfg, ROLE_BUILDER,
                                      use_value_head=False)
        self.mcts_cfg = M.MctsConfig(
            num_simulations=config.num_simulations, c_puct=config.c_puct,
            gamma=config.gamma, reward_mode=M.KNOWN_THETA,
            dirichlet_epsilon=0.0, bilevel=True)

    def distribution_batch(self, states, goals, rngs) -> list[np.ndarray]:
        searches = []
        for state, goal, rng in zip(states, goals, rngs):
            ctx = M.SearchContext(env_cfg=self.env_cfg, agent_slot=W.BUILDER,
                                  reward_mode=M.KNOWN_THETA,
                                  goal=W.goal_cells(goal))
            searches.append(M.Search(ctx, self.mcts_cfg, rng, state, M.NoopOther()))
        M.run_searches(searches, self.evaluator)
        dists = []
        for s in searches:
            pi_valid = M.full_support_policy(s.root, self.config.c_puct)
            dense = np.zeros(self.env_cfg.num_actions)
            dense[s.root.valid_idx] = pi_valid
            dists.append(dense)
        return dists

    def act(self, state, goal, rng):
        probs = self.distribution_batch([state], [goal], [rng])[0]
        action = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
        return action, probs

    def act_batch(self, states, goals, rngs):
        dists = self.distribution_batch(states, goals, rngs)
        return [int(np.searchsorted(np.cumsum(p), r.random(), side="right"))
                for p, r in zip(dists, rngs)]


def pikl_act(prior: BcModel, state: W.WorldState, goal, config: PiklConfig,
             rng: np.random.Generator,
             env_cfg: W.EnvConfig) -> tuple[int, np.ndarray]:
    """One-shot search-anchored action; build a PiklPolicy for repeated use."""
    return PiklPolicy(prior, config, env_cfg).act(state, goal, rng)


def bc_train(corpus, goal_set, env_cfg: W.EnvConfig, net_cfg,
             hyper) -> BcModel:
    """Clone builder behavior from a corpus into a BcModel."""
    from .training.bc import train_builder_clone
    return BcModel(train_builder_clone(corpus, goal_set, env_cfg, net_cfg, hyper))


# ------------------------------------------------------------- evaluation

@dataclass
class CrossEntropyResult:
    mean_nats: float
    steps: int
    infinite_at: Optional[tuple[int, int]] = None   # (episode, timestep)

    @property
    def is_finite(self) -> bool:
        return self.infinite_at is None


def cross_entropy_eval(distribution_fn, corpus, goal_set,
                       env_cfg: W.EnvConfig, rng_seed: int = 0,
                       max_episodes: Optional[int] = None) -> CrossEntropyResult:
    """Mean -log p(observed builder action) over a held-out corpus.

    `distribution_fn(states, goals, rngs) -> list of dense action
    distributions` lets one evaluator cover scripted, cloned, and
    search-based models. A model that assigns exact probability zero to any
    observed action yields an infinite result, flagged with its location.
    """
    from .trajectories import replay_episode

    total = 0.0
    steps = 0
    rng = np.random.default_rng(rng_seed)
    episodes = corpus.episodes[:max_episodes] if max_episodes else corpus.episodes
    for ep_idx, trace in enumerate(episodes):
        states, actions = [], []
        for state, ab, _, _ in replay_episode(trace, goal_set, env_cfg):
            states.append(state)
            actions.append(ab)
        goal = goal_set.goals[trace.goal_id]
        dists = distribution_fn(states, [goal] * len(states),
                                [rng] * len(states))
        for t, (dist, action) in enumerate(zip(dists, actions)):
            p = float(dist[action])
            if p <= 0.0:
                return CrossEntropyResult(mean_nats=math.inf, steps=steps,
                                          infinite_at=(ep_idx, t))
            total += -math.log(p)
            steps += 1
    return CrossEntropyResult(mean_nats=total / max(steps, 1), steps=steps)
