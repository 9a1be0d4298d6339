"""Episode corpora: versioned JSON-line record streams.

A corpus stores, per episode, the goal id, the episode seed, and both
players' action sequences as flat integer codes; states are reproduced
deterministically by replaying the actions. A `strip_goal` flag tells
downstream dataset builders to zero the goal channels when re-encoding
observations (used for pretraining-style corpora).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Optional

from . import world as W
from .goals import GoalSet

FORMAT_NAME = "blockmate-trajectories"
FORMAT_VERSION = 1


class CorpusError(ValueError):
    pass


@dataclass
class EpisodeTrace:
    goal_id: int
    seed: int
    builder_actions: list[int]
    assistant_actions: list[int]
    meta: dict = field(default_factory=dict)


@dataclass
class TrajectoryCorpus:
    env: W.EnvConfig
    episodes: list[EpisodeTrace]
    strip_goal: bool = False
    tag: str = ""

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def total_steps(self) -> int:
        return sum(len(e.builder_actions) for e in self.episodes)


def _env_to_dict(cfg: W.EnvConfig) -> dict:
    return {"dims": list(cfg.dims), "num_block_types": cfg.num_block_types,
            "horizon": cfg.horizon, "reach": cfg.reach}


def _env_from_dict(d: dict) -> W.EnvConfig:
    return W.EnvConfig(dims=tuple(d["dims"]), num_block_types=d["num_block_types"],
                       horizon=d["horizon"], reach=d["reach"])


def dumps_corpus(corpus: TrajectoryCorpus) -> str:
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "env": _env_to_dict(corpus.env),
        "strip_goal": corpus.strip_goal,
        "tag": corpus.tag,
        "episodes": len(corpus.episodes),
    }
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    for ep in corpus.episodes:
        lines.append(json.dumps({
            "goal_id": ep.goal_id,
            "seed": ep.seed,
            "builder_actions": ep.builder_actions,
            "assistant_actions": ep.assistant_actions,
            "meta": ep.meta,
        }, sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def loads_corpus(text: str) -> TrajectoryCorpus:
    lines = [ln for ln in text.split("\n") if ln]
    if not lines:
        raise CorpusError("empty corpus")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise CorpusError(f"bad corpus header: {e}")
    if header.get("format") != FORMAT_NAME:
        raise CorpusError("not a trajectory corpus")
    if header.get("version") != FORMAT_VERSION:
        raise CorpusError(f"unsupported corpus version {header.get('version')}")
    if header["episodes"] != len(lines) - 1:
        raise CorpusError(f"expected {header['episodes']} episodes, "
                          f"found {len(lines) - 1}")
    episodes = []
    for i, ln in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(ln)
        except json.JSONDecodeError as e:
            raise CorpusError(f"line {i}: {e}")
        if len(rec["builder_actions"]) != len(rec["assistant_actions"]):
            raise CorpusError(f"line {i}: per-player action lengths differ")
        episodes.append(EpisodeTrace(
            goal_id=rec["goal_id"], seed=rec["seed"],
            builder_actions=rec["builder_actions"],
            assistant_actions=rec["assistant_actions"],
            meta=rec.get("meta", {})))
    return TrajectoryCorpus(env=_env_from_dict(header["env"]), episodes=episodes,
                            strip_goal=header.get("strip_goal", False),
                            tag=header.get("tag", ""))


def save_corpus(corpus: TrajectoryCorpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(dumps_corpus(corpus))


def load_corpus(path) -> TrajectoryCorpus:
    with open(path, "r", encoding="utf-8") as f:
        return loads_corpus(f.read())


def replay_episode(trace: EpisodeTrace, goal_set: GoalSet,
                   env: W.EnvConfig) -> Iterator[tuple[W.WorldState, int, int, W.StepResult]]:
    """Yield (state, builder action, assistant action, step result) tuples by
    deterministic re-simulation."""
    goal = goal_set.goals[trace.goal_id]
    state = W.new_episode(env, goal, trace.seed)
    for ab, aa in zip(trace.builder_actions, trace.assistant_actions):
        action_b = (W.NOOP_ACTION if ab == 0
                    else W.action_from_index(ab, env.dims, env.num_block_types))
        action_a = (W.NOOP_ACTION if aa == 0
                    else W.action_from_index(aa, env.dims, env.num_block_types))
        result = W.apply(state, action_b, action_a, goal, env)
        yield state, ab, aa, result
        state = result.next_state
