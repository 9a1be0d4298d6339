"""Live agents and the lockstep episode driver.

Everything that plays episodes — evaluation, corpus generation, interactive
play — funnels through `run_episodes`, which steps many episodes in parallel
so network-backed agents can batch their forward passes. Agents receive env
indices so stateful implementations can keep per-episode context; every env
owns independent rng streams, keeping episodes deterministic regardless of
how they are batched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np
import torch

from . import mcts as M
from . import world as W
from .evaluators import NetEvaluator, states_to_arrays
from .goals import GoalSet
from .net import ROLE_ASSISTANT, ROLE_BUILDER, net_forward
from .net.model import FourHeadNet
from .trajectories import EpisodeTrace, TrajectoryCorpus


class BuilderAgent(Protocol):
    def act_batch(self, env_indices: Sequence[int], states: Sequence[W.WorldState],
                  goals: Sequence, rngs: Sequence[np.random.Generator]) -> list[int]:
        ...


class AssistantAgent(Protocol):
    def act_batch(self, env_indices: Sequence[int], states: Sequence[W.WorldState],
                  rngs: Sequence[np.random.Generator]) -> list[int]:
        ...


class NoopAssistant:
    def act_batch(self, env_indices, states, rngs):
        return [0] * len(states)


class ScriptedBuilder:
    """Adapter for scripted or cloned builder models with per-env configs."""

    def __init__(self, models, env_cfg: W.EnvConfig):
        # `models` is either one model or a list indexed by env
        self.models = models
        self.env_cfg = env_cfg

    def _model_for(self, env_idx: int):
        if isinstance(self.models, (list, tuple)):
            return self.models[env_idx]
        return self.models

    def act_batch(self, env_indices, states, goals, rngs):
        if not isinstance(self.models, (list, tuple)):
            return self._act_one_model(self.models, states, goals, rngs)
        actions = [0] * len(states)
        for j, env_idx in enumerate(env_indices):
            model = self._model_for(env_idx)
            actions[j] = self._act_one_model(model, [states[j]], [goals[j]],
                                             [rngs[j]])[0]
        return actions

    def _act_one_model(self, model, states, goals, rngs):
        if hasattr(model, "act_batch"):
            try:
                return model.act_batch(states, goals, rngs, self.env_cfg)
            except TypeError:
                return model.act_batch(states, goals, rngs)
        return [model.act(s, g, r)[0] for s, g, r in zip(states, goals, rngs)]


class PolicyHeadAssistant:
    """Assistant acting straight from the policy head, optionally tempered."""

    def __init__(self, model: FourHeadNet, env_cfg: W.EnvConfig,
                 temperature: float = 1.0, argmax: bool = False):
        self.model = model
        self.model.eval()
        self.env_cfg = env_cfg
        self.temperature = temperature
        self.argmax = argmax

    def act_batch(self, env_indices, states, rngs):
        cfg = self.model.config
        np_dtype = np.float64 if cfg.dtype == "float64" else np.float32
        obs = states_to_arrays(states, W.ASSISTANT, None,
                               cfg.include_prev_action, cfg.num_block_types,
                               np_dtype)
        masks = np.stack([W.valid_action_mask(s, W.ASSISTANT, self.env_cfg.reach,
                                              cfg.num_block_types)
                          for s in states])
        with torch.no_grad():
            out = net_forward(self.model, torch.from_numpy(obs).to(cfg.torch_dtype),
                              torch.from_numpy(masks), torch.from_numpy(masks))
            probs = out.policy_probs.double().numpy()
        actions = []
        for i, rng in enumerate(rngs):
            p = probs[i]
            if self.temperature != 1.0:
                with np.errstate(divide="ignore"):
                    p = np.where(p > 0, p ** (1.0 / self.temperature), 0.0)
                p = p / p.sum()
            if self.argmax:
                actions.append(int(np.argmax(p)))
            else:
                actions.append(int(np.searchsorted(np.cumsum(p), rng.random(),
                                                   side="right")))
        return actions


class MctsAssistant:
    """Assistant that plans with belief-MCTS before every action."""

    def __init__(self, model: FourHeadNet, env_cfg: W.EnvConfig,
                 mcts_cfg: M.MctsConfig, sample: bool = True):
        self.model = model
        self.model.eval()
        self.env_cfg = env_cfg
        self.mcts_cfg = mcts_cfg
        self.sample = sample
        self.evaluator = NetEvaluator(model, env_cfg, ROLE_ASSISTANT)

    def search_batch(self, states, rngs) -> list[M.SearchPolicy]:
        searches = []
        for state, rng in zip(states, rngs):
            ctx = M.SearchContext(env_cfg=self.env_cfg, agent_slot=W.ASSISTANT,
                                  reward_mode=self.mcts_cfg.reward_mode)
            searches.append(M.Search(ctx, self.mcts_cfg, rng, state,
                                     M.NetworkOther()))
        return M.run_searches(searches, self.evaluator)

    def act_batch(self, env_indices, states, rngs):
        policies = self.search_batch(states, rngs)
        return [pol.sample(rng) if self.sample else pol.argmax()
                for pol, rng in zip(policies, rngs)]


class BuilderSeatAssistant:
    """Runs a builder-seated scripted model in the assistant seat (the
    goal-aware demonstrator used to script assistant behavior)."""

    def __init__(self, model, goals_by_env: dict[int, object]):
        self.model = model
        self.goals_by_env = goals_by_env

    def act_batch(self, env_indices, states, rngs):
        actions = []
        for env_idx, state, rng in zip(env_indices, states, rngs):
            goal = self.goals_by_env[env_idx]
            actions.append(self.model.act(state, goal, rng)[0])
        return actions


@dataclass
class EpisodeOutcome:
    goal_id: int
    seed: int
    record: W.EpisodeRecord
    trace: Optional[EpisodeTrace] = None


def env_rngs(master_seed: int, n: int, streams: int = 2) -> list[list[np.random.Generator]]:
    """Independent per-env, per-seat generators: rngs[stream][env]."""
    seq = np.random.SeedSequence(master_seed)
    children = seq.spawn(n * streams)
    return [[np.random.default_rng(children[s * n + i]) for i in range(n)]
            for s in range(streams)]


def run_episodes(env_cfg: W.EnvConfig, goal_set: GoalSet,
                 goal_ids: Sequence[int], seeds: Sequence[int],
                 builder: BuilderAgent, assistant: AssistantAgent,
                 master_seed: int = 0, record_traces: bool = False,
                 stagnation_limit: Optional[int] = None,
                 horizons: Optional[Sequence[int]] = None) -> list[EpisodeOutcome]:
    """Play episodes to completion in lockstep and report per-episode metrics."""
    n = len(goal_ids)
    assert len(seeds) == n
    goals = [goal_set.goals[g] for g in goal_ids]
    builder_rngs, assistant_rngs = env_rngs(master_seed, n)
    states = [W.new_episode(env_cfg, goals[i], seeds[i]) for i in range(n)]
    d0 = [W.edit_distance(states[i], goals[i]) for i in range(n)]
    builder_pb = [0] * n
    assistant_reward = [0.0] * n
    length = [0] * n
    final_d = list(d0)
    traces = [EpisodeTrace(goal_ids[i], seeds[i], [], []) for i in range(n)]
    min_d = list(d0)
    since_min = [0] * n
    alive = [i for i in range(n) if d0[i] > 0]
    done_flags = [False] * n

    while alive:
        live_states = [states[i] for i in alive]
        b_actions = builder.act_batch(alive, live_states,
                                      [goals[i] for i in alive],
                                      [builder_rngs[i] for i in alive])
        a_actions = assistant.act_batch(alive, live_states,
                                        [assistant_rngs[i] for i in alive])
        next_alive = []
        for j, i in enumerate(alive):
            ab, aa = b_actions[j], a_actions[j]
            action_b = (W.NOOP_ACTION if ab == 0 else
                        W.action_from_index(ab, env_cfg.dims, env_cfg.num_block_types))
            action_a = (W.NOOP_ACTION if aa == 0 else
                        W.action_from_index(aa, env_cfg.dims, env_cfg.num_block_types))
            res = W.apply(states[i], action_b, action_a, goals[i], env_cfg)
            states[i] = res.next_state
            length[i] += 1
            assistant_reward[i] += res.reward_assistant
            builder_pb[i] += sum(1 for m in res.mutations if m.player == W.BUILDER)
            if record_traces:
                traces[i].builder_actions.append(ab)
                traces[i].assistant_actions.append(aa)
            d_now = W.edit_distance(states[i], goals[i])
            final_d[i] = d_now
            done = res.done
            if horizons is not None and length[i] >= horizons[i]:
                done = True
            if stagnation_limit is not None:
                if d_now < min_d[i]:
                    min_d[i] = d_now
                    since_min[i] = 0
                else:
                    since_min[i] += 1
                    if since_min[i] >= stagnation_limit:
                        done = True
            if done:
                done_flags[i] = True
            else:
                next_alive.append(i)
        alive = next_alive

    outcomes = []
    for i in range(n):
        record = W.EpisodeRecord(
            initial_distance=d0[i], final_distance=final_d[i],
            builder_place_break=builder_pb[i],
            assistant_reward_sum=assistant_reward[i], length=length[i])
        outcomes.append(EpisodeOutcome(
            goal_id=goal_ids[i], seed=seeds[i], record=record,
            trace=traces[i] if record_traces else None))
    return outcomes


def generate_rollouts(builder, goal_set: GoalSet, n_episodes: int,
                      strip_goal: bool, env_cfg: W.EnvConfig, seed: int = 0,
                      assistant: Optional[AssistantAgent] = None,
                      demonstrator=None, tag: str = "", batch: int = 32,
                      meta_by_episode: Optional[Sequence[dict]] = None
                      ) -> TrajectoryCorpus:
    """Roll episodes and pack the action streams into a corpus.

    `demonstrator` puts a goal-aware scripted builder model in the assistant
    seat (used to script assistant demonstrations); it overrides `assistant`.
    """
    if n_episodes < 1:
        raise ValueError("need at least one episode")
    rng = np.random.default_rng(seed)
    goal_ids = [int(rng.integers(len(goal_set))) for _ in range(n_episodes)]
    seeds = [int(rng.integers(2 ** 31)) for _ in range(n_episodes)]
    episodes = []
    for start in range(0, n_episodes, batch):
        stop = min(start + batch, n_episodes)
        batch_ids = goal_ids[start:stop]
        if demonstrator is not None:
            goals_by_env = {i: goal_set.goals[g] for i, g in enumerate(batch_ids)}
            seat = BuilderSeatAssistant(demonstrator, goals_by_env)
        else:
            seat = assistant or NoopAssistant()
        outcomes = run_episodes(
            env_cfg, goal_set, batch_ids, seeds[start:stop], builder, seat,
            master_seed=seed + 7919 * start, record_traces=True)
        for k, out in enumerate(outcomes):
            if meta_by_episode is not None:
                out.trace.meta = dict(meta_by_episode[start + k])
            episodes.append(out.trace)
    return TrajectoryCorpus(env=env_cfg, episodes=episodes,
                            strip_goal=strip_goal, tag=tag)
