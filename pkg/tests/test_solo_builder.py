"""Solo planning builder trained on one fixed goal must learn to build it
near-optimally: within 3x the oracle step count (edits plus the shortest
approach walk). Slowish (a couple of minutes): a real training run."""

import numpy as np
import pytest
import torch

from blockmate import mcts as M
from blockmate import world as W
from blockmate.goals import GoalGrid, GoalSet
from blockmate.net import LossWeights, NetConfig
from blockmate.runtime import NoopAssistant, ScriptedBuilder, run_episodes
from blockmate.training import TrainerConfig, train_solo_builder

torch.set_num_threads(2)


def fixed_goal():
    cells = np.zeros((4, 4, 4), dtype=np.int8)
    cells[1:3, 0, 1:3] = 1       # 2x2 slab
    cells[1, 1, 1] = 1           # one block on top
    return GoalGrid(dims=(4, 4, 4), cells=cells)


def optimal_steps(goal: GoalGrid, start: tuple[int, int, int],
                  reach: int) -> int:
    """Edits needed plus the shortest walk to bring every edit in reach.

    With reach 3 on a 4x4x4 grid every cell is reachable from any corner, so
    the walk term is the distance until the farthest needed cell is in reach
    (usually zero)."""
    cells = np.argwhere(np.asarray(goal.cells) != W.AIR)
    edits = len(cells)
    walk = 0
    far = max(int(np.abs(c - np.asarray(start)).max()) for c in cells)
    walk = max(0, far - reach)
    return edits + walk


class GreedyBuilderAgent:
    """Builder wrapper sampling the search policy greedily (argmax)."""

    def __init__(self, model, env_cfg, goal, sims=24):
        from blockmate.evaluators import NetEvaluator
        self.model = model
        self.env_cfg = env_cfg
        self.goal = np.asarray(goal.cells)
        self.evaluator = NetEvaluator(model, env_cfg, "builder")
        self.cfg = M.MctsConfig(num_simulations=sims, dirichlet_epsilon=0.0,
                                reward_mode=M.KNOWN_THETA, gamma=0.95)

    def act_batch(self, states, goals, rngs):
        searches = [
            M.Search(M.SearchContext(env_cfg=self.env_cfg, agent_slot=W.BUILDER,
                                     reward_mode=M.KNOWN_THETA, goal=self.goal),
                     self.cfg, rng, state, M.NoopOther())
            for state, rng in zip(states, rngs)]
        policies = M.run_searches(searches, self.evaluator)
        return [p.argmax() for p in policies]


def test_solo_builder_reaches_goal_within_3x_optimal():
    env = W.EnvConfig(dims=(4, 4, 4), num_block_types=2, horizon=60, reach=3)
    goal = fixed_goal()
    goals = GoalSet(goals=(goal,))
    net = NetConfig(dims=(4, 4, 4), num_block_types=2, channels=16,
                    num_res_blocks=2, kernel_size=3,
                    include_prev_action=True, dtype="float32")
    cfg = TrainerConfig(
        iterations=26, envs_parallel=16, fragment_length=16,
        buffer_capacity=4096, steps_per_iteration=1024, sgd_batch_size=256,
        epochs_per_iteration=2, lr=1e-3, gamma=0.95,
        weights=LossWeights(policy=1.0, value=0.05, reward=0.0, prev_rew=0.0,
                            action=0.0),
        mcts=M.MctsConfig(num_simulations=20, c_puct=1.0, tau=1.5,
                          dirichlet_epsilon=0.25, reward_mode=M.KNOWN_THETA),
        seed=3, net=net, noop_penalty=-0.2, stagnation_limit=20,
        min_buffer_steps=256)
    ckpt = train_solo_builder(env, goals, cfg)

    model = ckpt.build_model()
    model.eval()
    agent = ScriptedBuilder(GreedyBuilderAgent(model, env, goal), env)
    outcomes = run_episodes(env, goals, [0] * 10, list(range(100, 110)),
                            agent, NoopAssistant(), master_seed=9)
    budgets = []
    for seed, out in zip(range(100, 110), outcomes):
        start = W.new_episode(env, goal, seed).players[0].position
        budgets.append(3 * optimal_steps(goal, start, env.reach))
    completed_fast = sum(1 for out, budget in zip(outcomes, budgets)
                         if out.record.final_distance == 0
                         and out.record.length <= budget)
    assert completed_fast >= 8, (
        f"{completed_fast}/10 episodes finished within 3x optimal; "
        f"lengths={[o.record.length for o in outcomes]} budgets={budgets}")
