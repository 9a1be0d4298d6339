"""Headline metrics, assistant x builder cross-evaluation, report emission.

Reports carry three columns per pairing: overall goal completion percentage,
the builder's place/break action count, and the share of the goal built by
the assistant (negative when it does damage). Confidence intervals are 90%
normal-approximation half-widths over per-episode values.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from . import mcts as M
from . import world as W
from .evaluators import states_to_arrays
from .goals import GoalSet
from .net import net_forward
from .net.checkpoint import Checkpoint
from .runtime import (MctsAssistant, NoopAssistant, PolicyHeadAssistant,
                      ScriptedBuilder, run_episodes)
from .trajectories import TrajectoryCorpus, replay_episode

logger = logging.getLogger(__name__)

Z90 = 1.6448536269514722       # two-sided 90% normal quantile


@dataclass
class MetricSummary:
    mean: float
    ci90: Optional[float]      # half-width; None when n < 2

    @staticmethod
    def from_values(values: Sequence[float]) -> "MetricSummary":
        arr = np.asarray(values, dtype=np.float64)
        if len(arr) < 2:
            return MetricSummary(mean=float(arr.mean()), ci90=None)
        half = Z90 * arr.std(ddof=1) / math.sqrt(len(arr))
        return MetricSummary(mean=float(arr.mean()), ci90=float(half))


@dataclass
class PairReport:
    assistant: str
    human: str
    n: int
    overall_goal_pct: MetricSummary
    human_actions: MetricSummary
    assistant_goal_pct: Optional[MetricSummary]
    per_episode: dict[str, list[float]] = field(default_factory=dict)

    def to_dict(self, include_per_episode: bool = True) -> dict:
        out = {
            "assistant": self.assistant,
            "human": self.human,
            "n": self.n,
            "overall_goal_pct": dataclasses.asdict(self.overall_goal_pct),
            "human_actions": dataclasses.asdict(self.human_actions),
            "assistant_goal_pct": (dataclasses.asdict(self.assistant_goal_pct)
                                   if self.assistant_goal_pct else None),
        }
        if include_per_episode:
            out["per_episode"] = self.per_episode
        return out


def make_assistant_agent(checkpoint: Optional[Checkpoint], mode: str,
                         env_cfg: W.EnvConfig, sims: int = 20,
                         temperature: float = 1.0):
    """mode: 'none' (idle seat), 'policy' (head only), or 'mcts' (plan with
    the stated simulation budget)."""
    if checkpoint is None or mode == "none":
        return NoopAssistant()
    model = checkpoint.build_model()
    if mode == "policy":
        return PolicyHeadAssistant(model, env_cfg, temperature=temperature)
    if mode == "mcts":
        cfg = M.MctsConfig(num_simulations=sims, dirichlet_epsilon=0.0,
                           reward_mode=M.SPLIT)
        return MctsAssistant(model, env_cfg, cfg)
    raise W.ConfigurationError(f"unknown assistant mode {mode!r}")


def evaluate_pair(assistant_agent, human_model, goals: GoalSet,
                  n_episodes: int, seed: int, env_cfg: W.EnvConfig,
                  assistant_name: str = "assistant",
                  human_name: str = "human") -> PairReport:
    if n_episodes < 1:
        raise W.ConfigurationError("need at least one evaluation episode")
    if goals.tag != "test":
        logger.warning("evaluating on goals tagged %r, not 'test'; "
                       "headline numbers should use held-out goals", goals.tag)
    rng = np.random.default_rng(seed)
    goal_ids = [int(rng.integers(len(goals))) for _ in range(n_episodes)]
    ep_seeds = [int(rng.integers(2 ** 31)) for _ in range(n_episodes)]
    builder = ScriptedBuilder(human_model, env_cfg)
    alone = isinstance(assistant_agent, NoopAssistant) or assistant_agent is None
    agent = assistant_agent or NoopAssistant()
    outcomes = run_episodes(env_cfg, goals, goal_ids, ep_seeds, builder, agent,
                            master_seed=seed)
    overall, actions, asst = [], [], []
    for out in outcomes:
        o, a, s = W.goal_metrics(out.record)
        overall.append(o)
        actions.append(float(a))
        asst.append(s)
    per_episode = {"overall_goal_pct": overall, "human_actions": actions}
    if not alone:
        per_episode["assistant_goal_pct"] = asst
    return PairReport(
        assistant=assistant_name if not alone else "none",
        human=human_name, n=n_episodes,
        overall_goal_pct=MetricSummary.from_values(overall),
        human_actions=MetricSummary.from_values(actions),
        assistant_goal_pct=(MetricSummary.from_values(asst) if not alone
                            else None),
        per_episode=per_episode)


@dataclass
class CrossEvalReport:
    cells: list[PairReport]
    baselines: list[PairReport]            # one per human model, acting alone
    deltas: list[dict]                     # cell minus matching baseline

    def to_dict(self, include_per_episode: bool = False) -> dict:
        return {
            "pairs": [c.to_dict(include_per_episode) for c in self.cells],
            "baselines": [b.to_dict(include_per_episode) for b in self.baselines],
            "deltas": self.deltas,
        }


def cross_eval(assistants: Sequence[tuple[str, object]],
               humans: Sequence[tuple[str, object]], goals: GoalSet,
               n_per_cell: int, seed: int, env_cfg: W.EnvConfig
               ) -> CrossEvalReport:
    if not assistants or not humans:
        raise W.ConfigurationError("need at least one assistant and one human")
    baselines = []
    for h_name, human in humans:
        baselines.append(evaluate_pair(None, human, goals, n_per_cell, seed,
                                       env_cfg, human_name=h_name))
    cells = []
    deltas = []
    for a_name, agent in assistants:
        for (h_name, human), base in zip(humans, baselines):
            cell = evaluate_pair(agent, human, goals, n_per_cell, seed, env_cfg,
                                 assistant_name=a_name, human_name=h_name)
            cells.append(cell)
            deltas.append({
                "assistant": a_name,
                "human": h_name,
                "overall_goal_pct": cell.overall_goal_pct.mean
                                    - base.overall_goal_pct.mean,
                "human_actions": cell.human_actions.mean
                                 - base.human_actions.mean,
            })
    return CrossEvalReport(cells=cells, baselines=baselines, deltas=deltas)


def report_json(reports: Sequence[PairReport],
                include_per_episode: bool = True) -> str:
    return json.dumps(
        {"pairs": [r.to_dict(include_per_episode) for r in reports]},
        indent=2, sort_keys=True)


def _fmt(summary: Optional[MetricSummary]) -> str:
    if summary is None:
        return "---".rjust(16)
    if summary.ci90 is None:
        return f"{summary.mean:10.1f}  (n/a)"
    return f"{summary.mean:10.1f} ± {summary.ci90:4.1f}"


def render_table(reports: Sequence[PairReport]) -> str:
    lines = [f"{'Assistant':<24}{'Human':<18}{'Overall goal %':>16}"
             f"{'Human actions':>16}{'Assistant goal %':>18}"]
    for r in reports:
        lines.append(f"{r.assistant:<24}{r.human:<18}"
                     f"{_fmt(r.overall_goal_pct):>16}"
                     f"{_fmt(r.human_actions):>16}"
                     f"{_fmt(r.assistant_goal_pct):>18}")
    return "\n".join(lines)


def goal_head_nll(checkpoint_or_model, corpus: TrajectoryCorpus,
                  goal_set: GoalSet, env_cfg: W.EnvConfig,
                  batch: int = 256) -> float:
    """Mean per-step negative log-likelihood of the true goal under the
    assistant's per-cell goal head, over replayed held-out episodes."""
    model = (checkpoint_or_model.build_model()
             if isinstance(checkpoint_or_model, Checkpoint)
             else checkpoint_or_model)
    model.eval()
    cfg = model.config
    states, targets = [], []
    for trace in corpus.episodes:
        goal_flat = np.asarray(goal_set.goals[trace.goal_id].cells).ravel()
        for state, _, _, _ in replay_episode(trace, goal_set, env_cfg):
            states.append(state)
            targets.append(goal_flat)
    total = 0.0
    count = 0
    np_dtype = np.float64 if cfg.dtype == "float64" else np.float32
    for start in range(0, len(states), batch):
        chunk = states[start:start + batch]
        obs = states_to_arrays(chunk, W.ASSISTANT, None,
                               cfg.include_prev_action, cfg.num_block_types,
                               np_dtype)
        masks = torch.ones((len(chunk), cfg.num_actions), dtype=torch.bool)
        with torch.no_grad():
            out = net_forward(model, torch.from_numpy(obs).to(cfg.torch_dtype),
                              masks, masks)
            logp = torch.clamp(out.goal_log_probs, min=-30.0)
        tgt = torch.from_numpy(np.stack(targets[start:start + batch])
                               .astype(np.int64))
        picked = logp.gather(-1, tgt.unsqueeze(-1)).squeeze(-1)
        total += float(-picked.sum())
        count += len(chunk)
    return total / max(count, 1)
