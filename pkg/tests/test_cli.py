import json

import numpy as np
import pytest
import torch

from blockmate import world as W
from blockmate.cli import main
from blockmate.goals import load_goals
from blockmate.net.checkpoint import load_checkpoint
from blockmate.trajectories import load_corpus

torch.set_num_threads(2)


def micro_config(tmp_path, goals_file, extra=None):
    cfg = {
        "env": {"dims": [6, 4, 6], "num_block_types": 3, "horizon": 8,
                "reach": 3},
        "net": {"channels": 4, "num_res_blocks": 1, "dtype": "float64"},
        "mcts": {"num_simulations": 4, "dirichlet_epsilon": 0.25},
        "trainer": {"iterations": 1, "envs_parallel": 2, "fragment_length": 3,
                     "buffer_capacity": 64, "steps_per_iteration": 6,
                     "sgd_batch_size": 6, "min_buffer_steps": 3},
        "human": {"kind": "boltzmann", "beta": 3.0},
        "goals": {"file": str(goals_file)},
    }
    cfg.update(extra or {})
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_gen_goals_and_eval_roundtrip(tmp_path, capsys):
    goals_file = tmp_path / "g.txt"
    assert main(["gen-goals", "--seed", "0", "--n", "6", "--dims", "6,4,6",
                 "--blocks", "3", "--out", str(goals_file)]) == 0
    goal_set = load_goals(goals_file)
    assert len(goal_set) == 6

    out = tmp_path / "report.json"
    code = main(["eval", "--goals", str(goals_file), "--mode", "none",
                 "--episodes", "3", "--seed", "1", "--beta", "2.0",
                 "--out", str(out)])
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["pairs"][0]["assistant"] == "none"
    code2 = main(["eval", "--goals", str(goals_file), "--mode", "none",
                  "--episodes", "3", "--seed", "1", "--beta", "2.0"])
    assert code2 == 0
    captured = capsys.readouterr()
    assert "Overall goal %" in captured.out


def test_gen_goals_split(tmp_path):
    goals_file = tmp_path / "g.txt"
    assert main(["gen-goals", "--seed", "3", "--n", "10", "--dims", "6,4,6",
                 "--blocks", "3", "--test-fraction", "0.2",
                 "--out", str(goals_file)]) == 0
    train = load_goals(goals_file)
    test = load_goals(str(goals_file) + ".test", tag="test")
    assert len(train) == 8 and len(test) == 2


def test_train_az_requires_config(capsys):
    assert main(["train-az", "--out", "x.ckpt"]) == 2
    err = capsys.readouterr().err
    assert "--config" in err


def test_eval_zero_episodes_is_config_error(tmp_path):
    goals_file = tmp_path / "g.txt"
    main(["gen-goals", "--n", "4", "--dims", "6,4,6", "--blocks", "3",
          "--out", str(goals_file)])
    assert main(["eval", "--goals", str(goals_file), "--mode", "none",
                 "--episodes", "0"]) == 2


def test_unknown_subcommand_exits_2():
    assert main(["frobnicate"]) == 2
    assert main([]) == 2


def test_unknown_config_key_is_config_error(tmp_path):
    goals_file = tmp_path / "g.txt"
    main(["gen-goals", "--n", "4", "--dims", "6,4,6", "--blocks", "3",
          "--out", str(goals_file)])
    cfg_path = micro_config(tmp_path, goals_file,
                            extra={"trainer": {"iterations": 1,
                                               "warp_factor": 9}})
    assert main(["train-az", "--config", str(cfg_path),
                 "--out", str(tmp_path / "x.ckpt")]) == 2


def test_full_micro_pipeline(tmp_path):
    goals_file = tmp_path / "g.txt"
    assert main(["gen-goals", "--seed", "0", "--n", "6", "--dims", "6,4,6",
                 "--blocks", "3", "--out", str(goals_file)]) == 0
    cfg_path = micro_config(tmp_path, goals_file)

    ckpt_path = tmp_path / "az.ckpt"
    assert main(["train-az", "--config", str(cfg_path), "--seed", "0",
                 "--out", str(ckpt_path)]) == 0
    ckpt = load_checkpoint(ckpt_path)
    assert ckpt.metadata["kind"] == "assistant-search"

    # rollout a corpus, then pretrain and sft from it
    corpus_path = tmp_path / "corpus.jsonl"
    assert main(["rollout", "--config", str(cfg_path), "--episodes", "3",
                 "--strip-goal", "--out", str(corpus_path)]) == 0
    corpus = load_corpus(corpus_path)
    assert corpus.strip_goal and len(corpus) == 3

    demo_path = tmp_path / "demo.jsonl"
    cfg2 = json.loads(cfg_path.read_text())
    cfg2["demonstrator"] = {"kind": "boltzmann", "beta": 6.0, "player": 1}
    cfg2_path = tmp_path / "config2.json"
    cfg2_path.write_text(json.dumps(cfg2))
    assert main(["rollout", "--config", str(cfg2_path), "--episodes", "2",
                 "--out", str(demo_path)]) == 0

    pre_path = tmp_path / "pre.ckpt"
    cfg3 = json.loads(cfg_path.read_text())
    cfg3["corpus"] = {"file": str(corpus_path)}
    cfg3["bc"] = {"epochs": 1, "batch_size": 8}
    cfg3_path = tmp_path / "config3.json"
    cfg3_path.write_text(json.dumps(cfg3))
    assert main(["pretrain", "--config", str(cfg3_path),
                 "--out", str(pre_path)]) == 0

    sft_path = tmp_path / "sft.ckpt"
    cfg4 = json.loads(cfg3_path.read_text())
    cfg4["sft"] = {"pretrained": str(pre_path), "demo_corpus": str(demo_path),
                   "init_action_head": True, "temperature": 0.3}
    cfg4_path = tmp_path / "config4.json"
    cfg4_path.write_text(json.dumps(cfg4))
    assert main(["sft", "--config", str(cfg4_path), "--out", str(sft_path)]) == 0
    sft = load_checkpoint(sft_path)
    assert sft.metadata["kind"] == "sft-assistant"

    # evaluate the trained assistant with mcts mode
    assert main(["eval", "--config", str(cfg_path), "--checkpoint",
                 str(ckpt_path), "--mode", "mcts", "--sims", "4",
                 "--episodes", "2", "--seed", "3"]) == 0

    # ppo micro run
    cfg5 = json.loads(cfg_path.read_text())
    cfg5["ppo"] = {"iterations": 1, "envs_parallel": 2, "rollout_length": 4,
                   "sgd_batch_size": 8, "epochs_per_iteration": 1}
    cfg5_path = tmp_path / "config5.json"
    cfg5_path.write_text(json.dumps(cfg5))
    assert main(["train-ppo", "--config", str(cfg5_path),
                 "--out", str(tmp_path / "ppo.ckpt")]) == 0

    # solo builder micro run
    assert main(["train-alphazero", "--config", str(cfg_path),
                 "--out", str(tmp_path / "solo.ckpt")]) == 0

    # cross-eval over the trained checkpoints
    cfg6 = json.loads(cfg_path.read_text())
    cfg6["assistants"] = [{"name": "az", "checkpoint": str(ckpt_path),
                           "mode": "policy"}]
    cfg6["humans"] = [{"name": "boltz", "kind": "boltzmann", "beta": 3.0}]
    cfg6_path = tmp_path / "config6.json"
    cfg6_path.write_text(json.dumps(cfg6))
    report_path = tmp_path / "cross.json"
    assert main(["cross-eval", "--config", str(cfg6_path), "--episodes", "2",
                 "--seed", "0", "--out", str(report_path)]) == 0
    payload = json.loads(report_path.read_text())
    assert payload["pairs"] and payload["baselines"] and payload["deltas"]
