"""Command-line entry point.

Subcommands: gen-goals, train-az, train-alphazero, train-ppo, pretrain, sft,
rollout, eval, cross-eval, play. Exit codes: 0 success, 2 configuration
error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import mcts as M
from . import world as W
from .goals import (GoalFileError, GoalSet, generate_goal_set, load_goals,
                    save_goals, split)
from .humans import (BcModel, BoltzmannBuilder, BoltzmannBuilderConfig,
                     PiklConfig, PiklPolicy)
from .net import LossWeights, NetConfig
from .net.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .trajectories import load_corpus, save_corpus

logger = logging.getLogger(__name__)


class CliConfigError(ValueError):
    pass


def _from_dict(cls, data: dict, context: str, **overrides):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise CliConfigError(f"{context}: unknown keys {sorted(unknown)}")
    merged = dict(data)
    merged.update(overrides)
    try:
        return cls(**merged)
    except (TypeError, ValueError) as e:
        raise CliConfigError(f"{context}: {e}")


def load_config(path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise CliConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise CliConfigError(f"config file {path}: {e}")


def build_env(cfg: dict) -> W.EnvConfig:
    data = dict(cfg.get("env", {}))
    if "dims" in data:
        data["dims"] = tuple(data["dims"])
    return _from_dict(W.EnvConfig, data, "env")


def build_net(cfg: dict, env: W.EnvConfig, **overrides) -> NetConfig:
    data = dict(cfg.get("net", {}))
    data.setdefault("dims", env.dims)
    data["dims"] = tuple(data["dims"])
    data.setdefault("num_block_types", env.num_block_types)
    data.update(overrides)
    return _from_dict(NetConfig, data, "net")


def build_mcts(cfg: dict, key: str = "mcts") -> M.MctsConfig:
    return _from_dict(M.MctsConfig, dict(cfg.get(key, {})), key)


def build_weights(data: dict) -> LossWeights:
    data = dict(data)
    if "prev_rew_schedule" in data and data["prev_rew_schedule"] is not None:
        data["prev_rew_schedule"] = tuple(data["prev_rew_schedule"])
    return _from_dict(LossWeights, data, "weights")


def build_human(cfg: dict, env: W.EnvConfig, key: str = "human"):
    data = dict(cfg.get(key, {"kind": "boltzmann"}))
    kind = data.pop("kind", "boltzmann")
    if kind == "boltzmann":
        player = data.pop("player", W.BUILDER)
        bcfg = _from_dict(BoltzmannBuilderConfig, data, key)
        return BoltzmannBuilder(env, bcfg, player=player)
    if kind == "bc":
        path = data.pop("checkpoint", None)
        if path is None:
            raise CliConfigError(f"{key}: bc human needs a checkpoint path")
        return BcModel(load_checkpoint(path))
    if kind == "pikl":
        path = data.pop("checkpoint", None)
        if path is None:
            raise CliConfigError(f"{key}: pikl human needs a bc checkpoint")
        prior = BcModel(load_checkpoint(path))
        pcfg = _from_dict(PiklConfig, data, key)
        return PiklPolicy(prior, pcfg, env)
    raise CliConfigError(f"{key}: unknown human kind {kind!r}")


def load_goal_set(cfg: dict, env: W.EnvConfig, tag: str = "train") -> GoalSet:
    data = cfg.get("goals", {})
    if "file" in data:
        return load_goals(data["file"], tag=data.get("tag", tag))
    gen = data.get("generate")
    if gen:
        return generate_goal_set(gen.get("n", 64), gen.get("seed", 0),
                                 dims=env.dims,
                                 num_block_types=env.num_block_types, tag=tag)
    raise CliConfigError("config needs goals.file or goals.generate")


def _require(args, flag: str):
    value = getattr(args, flag.lstrip("-").replace("-", "_"), None)
    if value is None:
        raise CliConfigError(f"{flag} is required")
    return value


# ------------------------------------------------------------ subcommands

def cmd_gen_goals(args) -> int:
    dims = tuple(int(v) for v in args.dims.split(","))
    if len(dims) != 3:
        raise CliConfigError("--dims must be W,H,D")
    if args.n < 1:
        raise CliConfigError("--n must be >= 1")
    goal_set = generate_goal_set(args.n, args.seed, dims=dims,
                                 num_block_types=args.blocks)
    if args.test_fraction:
        train, test = split(goal_set, args.test_fraction, args.seed)
        save_goals(train, args.out, num_block_types=args.blocks)
        test_path = str(args.out) + ".test"
        save_goals(test, test_path, num_block_types=args.blocks)
        print(f"wrote {len(train)} train goals to {args.out}, "
              f"{len(test)} test goals to {test_path}")
    else:
        save_goals(goal_set, args.out, num_block_types=args.blocks)
        print(f"wrote {len(goal_set)} goals to {args.out}")
    return 0


def cmd_train_az(args) -> int:
    from .training.az import TrainerConfig, train_assistant
    if args.config is None:
        raise CliConfigError("--config is required for train-az")
    cfg = load_config(args.config)
    env = build_env(cfg)
    goals = load_goal_set(cfg, env)
    human = build_human(cfg, env)
    trainer_data = dict(cfg.get("trainer", {}))
    weights = build_weights(trainer_data.pop("weights", {}))
    overrides = {"net": build_net(cfg, env), "mcts": build_mcts(cfg),
                 "weights": weights}
    if args.seed is not None:
        overrides["seed"] = args.seed
    tcfg = _from_dict(TrainerConfig, trainer_data, "trainer", **overrides)
    ckpt = train_assistant(env, goals, human, tcfg)
    save_checkpoint(_require(args, "--out"), ckpt)
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_train_alphazero(args) -> int:
    from .training.az import TrainerConfig, train_solo_builder
    if args.config is None:
        raise CliConfigError("--config is required for train-alphazero")
    cfg = load_config(args.config)
    env = build_env(cfg)
    goals = load_goal_set(cfg, env)
    trainer_data = dict(cfg.get("trainer", {}))
    weights = build_weights(trainer_data.pop("weights", {}))
    overrides = {"net": build_net(cfg, env, include_prev_action=True),
                 "mcts": build_mcts(cfg), "weights": weights}
    if args.seed is not None:
        overrides["seed"] = args.seed
    tcfg = _from_dict(TrainerConfig, trainer_data, "trainer", **overrides)
    ckpt = train_solo_builder(env, goals, tcfg)
    save_checkpoint(_require(args, "--out"), ckpt)
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_train_ppo(args) -> int:
    from .training.ppo import PpoConfig, train_ppo_assistant
    if args.config is None:
        raise CliConfigError("--config is required for train-ppo")
    cfg = load_config(args.config)
    env = build_env(cfg)
    goals = load_goal_set(cfg, env)
    human = build_human(cfg, env)
    data = dict(cfg.get("ppo", {}))
    overrides = {"net": build_net(cfg, env)}
    if args.seed is not None:
        overrides["seed"] = args.seed
    pcfg = _from_dict(PpoConfig, data, "ppo", **overrides)
    ckpt = train_ppo_assistant(env, goals, human, pcfg)
    save_checkpoint(_require(args, "--out"), ckpt)
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_rollout(args) -> int:
    from .runtime import ScriptedBuilder, generate_rollouts
    if args.config is None:
        raise CliConfigError("--config is required for rollout")
    cfg = load_config(args.config)
    env = build_env(cfg)
    goals = load_goal_set(cfg, env)
    human = build_human(cfg, env)
    demonstrator = None
    if "demonstrator" in cfg:
        demonstrator = build_human(cfg, env, key="demonstrator")
    corpus = generate_rollouts(
        ScriptedBuilder(human, env), goals, args.episodes,
        strip_goal=args.strip_goal, env_cfg=env, seed=args.seed or 0,
        demonstrator=demonstrator)
    save_corpus(corpus, _require(args, "--out"))
    print(f"wrote {len(corpus)} episodes ({corpus.total_steps} steps) "
          f"to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    from .training.bc import BcHyper, pretrain_assistant
    if args.config is None:
        raise CliConfigError("--config is required for pretrain")
    cfg = load_config(args.config)
    env = build_env(cfg)
    goals = load_goal_set(cfg, env)
    corpus_path = cfg.get("corpus", {}).get("file")
    if not corpus_path:
        raise CliConfigError("config needs corpus.file")
    corpus = load_corpus(corpus_path)
    hyper = _from_dict(BcHyper, dict(cfg.get("bc", {})), "bc",
                       **({"seed": args.seed} if args.seed is not None else {}))
    net_cfg = build_net(cfg, env, include_prev_action=True)
    ckpt = pretrain_assistant(corpus, goals, env, net_cfg, hyper)
    save_checkpoint(_require(args, "--out"), ckpt)
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_sft(args) -> int:
    from .training.bc import BcHyper, sft_assistant
    if args.config is None:
        raise CliConfigError("--config is required for sft")
    cfg = load_config(args.config)
    env = build_env(cfg)
    goals = load_goal_set(cfg, env)
    sft_data = dict(cfg.get("sft", {}))
    pre_path = sft_data.pop("pretrained", None)
    demo_path = sft_data.pop("demo_corpus", None)
    if not pre_path or not demo_path:
        raise CliConfigError("config needs sft.pretrained and sft.demo_corpus")
    init_head = sft_data.pop("init_action_head", True)
    temperature = sft_data.pop("temperature", 0.3)
    if sft_data:
        raise CliConfigError(f"sft: unknown keys {sorted(sft_data)}")
    hyper = _from_dict(BcHyper, dict(cfg.get("bc", {})), "bc",
                       **({"seed": args.seed} if args.seed is not None else {}))
    ckpt = sft_assistant(load_checkpoint(pre_path), load_corpus(demo_path),
                         goals, env, hyper, init_action_head=init_head,
                         temperature=temperature)
    save_checkpoint(_require(args, "--out"), ckpt)
    print(f"saved checkpoint to {args.out}")
    return 0


def _eval_human(args, cfg, env):
    if cfg:
        return build_human(cfg, env)
    return BoltzmannBuilder(env, BoltzmannBuilderConfig(beta=args.beta,
                                                        noop_bias=args.noop_bias))


def cmd_eval(args) -> int:
    from .evaluation import evaluate_pair, make_assistant_agent, render_table, report_json
    if args.episodes < 1:
        raise CliConfigError("--episodes must be >= 1")
    cfg = load_config(args.config) if args.config else {}
    if args.goals:
        goals = load_goals(args.goals, tag="test")
        if cfg:
            env = build_env(cfg)
        else:
            env = W.EnvConfig(dims=goals.dims,
                              num_block_types=goals.num_block_types or 4)
    else:
        env = build_env(cfg) if cfg else W.EnvConfig()
        goals = load_goal_set(cfg, env, tag="test")
    human = _eval_human(args, cfg, env)
    checkpoint = load_checkpoint(args.checkpoint) if args.checkpoint else None
    agent = make_assistant_agent(checkpoint, args.mode, env, sims=args.sims,
                                 temperature=args.temperature)
    report = evaluate_pair(agent, human, goals, args.episodes, args.seed or 0,
                           env, assistant_name=args.mode, human_name="human")
    print(render_table([report]))
    if args.out:
        Path(args.out).write_text(report_json([report]))
        print(f"wrote report to {args.out}")
    return 0


def cmd_cross_eval(args) -> int:
    from .evaluation import cross_eval, make_assistant_agent, render_table
    if args.config is None:
        raise CliConfigError("--config is required for cross-eval")
    if args.episodes < 1:
        raise CliConfigError("--episodes must be >= 1")
    cfg = load_config(args.config)
    env = build_env(cfg)
    goals = load_goal_set(cfg, env, tag="test")
    assistants = []
    for spec in cfg.get("assistants", []):
        ckpt = load_checkpoint(spec["checkpoint"]) if spec.get("checkpoint") else None
        agent = make_assistant_agent(ckpt, spec.get("mode", "policy"), env,
                                     sims=spec.get("sims", 20),
                                     temperature=spec.get("temperature", 1.0))
        assistants.append((spec.get("name", spec.get("mode", "assistant")), agent))
    humans = []
    for spec in cfg.get("humans", []):
        spec = dict(spec)
        name = spec.pop("name", spec.get("kind", "human"))
        humans.append((name, build_human({"human": spec}, env)))
    if not assistants or not humans:
        raise CliConfigError("cross-eval config needs assistants and humans")
    report = cross_eval(assistants, humans, goals, args.episodes,
                        args.seed or 0, env)
    print(render_table(report.baselines + report.cells))
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2,
                                             sort_keys=True))
        print(f"wrote report to {args.out}")
    return 0


def cmd_play(args) -> int:
    from .playd import serve
    checkpoint = load_checkpoint(_require(args, "--checkpoint"))
    cfg = load_config(args.config) if args.config else {}
    env = build_env(cfg) if cfg else W.EnvConfig(
        dims=tuple(checkpoint.net_config.dims),
        num_block_types=checkpoint.net_config.num_block_types)
    goals = (load_goals(args.goals) if args.goals
             else load_goal_set(cfg, env))
    serve(checkpoint, env, goals, port=args.port, tick_ms=args.tick_ms,
          mode=args.mode, sims=args.sims, host=args.host,
          static_dir=args.static_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blockmate",
        description="cooperative voxel-building assistant toolkit")
    sub = parser.add_subparsers(dest="command")

    def common(p, config=True):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        if config:
            p.add_argument("--config", default=None)

    p = sub.add_parser("gen-goals", help="generate procedural goal files")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--dims", default="6,6,6")
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--test-fraction", type=float, default=None)
    p.add_argument("--out", required=True)

    for name in ("train-az", "train-alphazero", "train-ppo", "pretrain", "sft"):
        p = sub.add_parser(name)
        common(p)

    p = sub.add_parser("rollout", help="generate an episode corpus")
    common(p)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--strip-goal", action="store_true")

    p = sub.add_parser("eval", help="evaluate an assistant with a human model")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--mode", default="policy",
                   choices=["none", "policy", "mcts"])
    p.add_argument("--sims", type=int, default=20)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--goals", default=None)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--beta", type=float, default=3.0)
    p.add_argument("--noop-bias", type=float, default=0.0)

    p = sub.add_parser("cross-eval")
    common(p)
    p.add_argument("--episodes", type=int, default=100)

    p = sub.add_parser("play", help="serve the interactive play session")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--goals", default=None)
    p.add_argument("--port", type=int, default=8712)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--tick-ms", type=int, default=250)
    p.add_argument("--mode", default="policy", choices=["policy", "mcts"])
    p.add_argument("--sims", type=int, default=20)
    p.add_argument("--static-dir", default=None)
    return parser


HANDLERS = {
    "gen-goals": cmd_gen_goals,
    "train-az": cmd_train_az,
    "train-alphazero": cmd_train_alphazero,
    "train-ppo": cmd_train_ppo,
    "rollout": cmd_rollout,
    "pretrain": cmd_pretrain,
    "sft": cmd_sft,
    "eval": cmd_eval,
    "cross-eval": cmd_cross_eval,
    "play": cmd_play,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    if args.command is None:
        parser.print_usage()
        return 2
    handler = HANDLERS.get(args.command)
    try:
        return handler(args)
    except (CliConfigError, W.ConfigurationError, GoalFileError,
            CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        logger.exception("command failed")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
