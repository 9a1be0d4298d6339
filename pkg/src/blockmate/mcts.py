"""Belief-aware Monte Carlo tree search over the building game.

One engine serves three callers: the assistant planner (hidden goal, rewards
estimated from the network's per-cell goal belief), the solo builder planner
(goal visible, exact rewards), and imitation-anchored search (goal visible,
priors from a cloned policy, partner modeled as idle).

Nodes are keyed by history: each edge carries the planning agent's action
plus a freshly sampled action for the other player, so one action edge may
fan out into several children. Per-node Q values are min-max normalized over
the values backed up through that node, and unvisited actions inherit the
node's visit-weighted average.

Because the goal belief factorizes per cell, the expected reward of any
single-cell edit is a local dot product against that cell's distribution;
searches never enumerate whole goal grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from . import world as W

KNOWN_THETA = "known_theta"
MARGINAL = "marginal"
SPLIT = "split"

ALPHA_RULE_FIXED = "fixed"
ALPHA_RULE_TEN_OVER_VALID = "ten_over_valid"


@dataclass
class MctsConfig:
    num_simulations: int = 100
    c_puct: float = 1.0
    tau: float = 1.5                      # exponent on visit counts
    dirichlet_alpha_type: float = 0.25    # stage-1 noise over action types
    dirichlet_alpha_param_rule: str = ALPHA_RULE_TEN_OVER_VALID
    dirichlet_alpha_param: float = 0.25   # used when the rule is "fixed"
    dirichlet_epsilon: float = 0.0
    gamma: float = 0.95
    reward_mode: str = SPLIT
    bilevel: bool = True

    def __post_init__(self):
        if self.num_simulations < 1:
            raise ValueError("need at least one simulation")
        if self.c_puct <= 0 or self.tau <= 0:
            raise ValueError("c_puct and tau must be positive")
        if not (0.0 <= self.dirichlet_epsilon <= 1.0):
            raise ValueError("dirichlet_epsilon must be in [0, 1]")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if self.reward_mode not in (KNOWN_THETA, MARGINAL, SPLIT):
            raise ValueError(f"unknown reward mode {self.reward_mode!r}")
        if self.dirichlet_alpha_param_rule not in (ALPHA_RULE_FIXED,
                                                   ALPHA_RULE_TEN_OVER_VALID):
            raise ValueError("unknown dirichlet alpha rule")


@dataclass
class SearchContext:
    """Environment bindings for one search: who plans, how rewards are scored."""
    env_cfg: W.EnvConfig
    agent_slot: int = W.ASSISTANT
    reward_mode: str = SPLIT
    goal: Optional[np.ndarray] = None     # required for known_theta
    noop_penalty: float = 0.0             # added to the agent's no-op reward
    horizon: Optional[int] = None

    def __post_init__(self):
        if self.reward_mode == KNOWN_THETA and self.goal is None:
            raise ValueError("known-theta rewards need the goal grid")
        if self.goal is not None:
            self.goal = np.asarray(W.goal_cells(self.goal))

    @property
    def effective_horizon(self) -> int:
        return self.env_cfg.horizon if self.horizon is None else self.horizon


@dataclass
class EvaluationResult:
    priors: np.ndarray                    # (A,) masked probabilities, agent seat
    value: float
    belief: Optional[np.ndarray] = None   # (n_cells, B) per-cell goal distribution
    other_probs: Optional[np.ndarray] = None  # (A,) masked, other seat
    carry: object = None


@dataclass
class EvalRequest:
    state: W.WorldState
    agent_mask: np.ndarray
    other_mask: np.ndarray
    parent_carry: object = None
    goal: Optional[np.ndarray] = None     # visible-goal searches only


class Evaluator(Protocol):
    def evaluate_batch(self, requests: Sequence[EvalRequest]) -> list[EvaluationResult]:
        ...


def puct_score(q_normalized: float, prior: float, parent_visits: int,
               edge_visits: int, c_puct: float) -> float:
    return q_normalized + c_puct * prior * math.sqrt(parent_visits) / (1 + edge_visits)


def _segment_sums(values: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    cs = np.concatenate(([0.0], np.cumsum(values)))
    return cs[bounds[1:]] - cs[bounds[:-1]]


def _cost(value: int, goal_value: int) -> int:
    if value == goal_value:
        return 0
    if value != W.AIR and goal_value != W.AIR:
        return 2
    return 1


_COST_TABLE: dict[int, np.ndarray] = {}


def _cost_table(num_block_types: int) -> np.ndarray:
    """(B, B) table of per-cell costs indexed [current value, goal value]."""
    if num_block_types not in _COST_TABLE:
        table = np.zeros((num_block_types, num_block_types))
        for v in range(num_block_types):
            for g in range(num_block_types):
                table[v, g] = _cost(v, g)
        _COST_TABLE[num_block_types] = table
    return _COST_TABLE[num_block_types]


class Node:
    __slots__ = (
        "state", "depth", "terminal", "valid_idx", "priors", "n", "w",
        "children", "value", "belief", "other_probs", "other_cumsum", "carry",
        "total_n", "total_w", "q_min", "q_max", "reward_in", "type_bounds",
        "mutations_in", "agent_idx_in",
    )

    def __init__(self, state: W.WorldState, depth: int, terminal: bool):
        self.state = state
        self.depth = depth
        self.terminal = terminal
        self.valid_idx: Optional[np.ndarray] = None
        self.priors: Optional[np.ndarray] = None
        self.n: Optional[np.ndarray] = None
        self.w: Optional[np.ndarray] = None
        self.children: dict[tuple[int, int], Node] = {}
        self.value = 0.0
        self.belief: Optional[np.ndarray] = None
        self.other_probs: Optional[np.ndarray] = None
        self.other_cumsum: Optional[np.ndarray] = None
        self.carry = None
        self.total_n = 0
        self.total_w = 0.0
        self.q_min = math.inf
        self.q_max = -math.inf
        self.reward_in = 0.0          # cached edge reward from the parent
        self.type_bounds: Optional[np.ndarray] = None
        self.mutations_in: tuple[W.Mutation, ...] = ()
        self.agent_idx_in = 0

    @property
    def expanded(self) -> bool:
        return self.valid_idx is not None

    def expand(self, valid_idx: np.ndarray, result: EvaluationResult,
               n_cells: int) -> None:
        self.valid_idx = valid_idx
        priors = np.asarray(result.priors, dtype=np.float64)[valid_idx]
        total = priors.sum()
        self.priors = (priors / total if total > 0
                       else np.full(len(valid_idx), 1.0 / len(valid_idx)))
        self.n = np.zeros(len(valid_idx), dtype=np.int64)
        self.w = np.zeros(len(valid_idx), dtype=np.float64)
        self.value = 0.0 if self.terminal else float(result.value)
        self.belief = result.belief
        self.other_probs = result.other_probs
        self.carry = result.carry
        # contiguous type segments: noop, moves 1..6, break block, place block
        type_edges = [0, 1, 2, 3, 4, 5, 6, W.NUM_GLOBAL_ACTIONS,
                      W.NUM_GLOBAL_ACTIONS + n_cells]
        bounds = np.searchsorted(valid_idx, type_edges, side="left")
        self.type_bounds = np.append(bounds, len(valid_idx))

    def sample_other(self, rng: np.random.Generator) -> int:
        if self.other_cumsum is None:
            self.other_cumsum = np.cumsum(self.other_probs)
        u = rng.random() * self.other_cumsum[-1]
        return int(np.searchsorted(self.other_cumsum, u, side="right"))

    def node_average(self) -> float:
        return self.total_w / self.total_n if self.total_n > 0 else 0.0

    def normalized_q(self) -> np.ndarray:
        raw = np.where(self.n > 0, self.w / np.maximum(self.n, 1),
                       self.node_average())
        if self.q_max > self.q_min:
            return (raw - self.q_min) / (self.q_max - self.q_min)
        return np.full(len(raw), 0.5)

    def select_slot(self, config: MctsConfig) -> int:
        qn = self.normalized_q()
        sqrt_total = math.sqrt(self.total_n)
        if not config.bilevel:
            scores = qn + config.c_puct * self.priors * sqrt_total / (1 + self.n)
            return int(np.argmax(scores))
        b = self.type_bounds
        type_p = _segment_sums(self.priors, b)
        type_n = _segment_sums(self.n.astype(np.float64), b)
        type_w = _segment_sums(self.w, b)
        present = (b[1:] - b[:-1]) > 0
        type_raw = np.where(type_n > 0, type_w / np.maximum(type_n, 1e-300),
                            self.node_average())
        if self.q_max > self.q_min:
            type_qn = (type_raw - self.q_min) / (self.q_max - self.q_min)
        else:
            type_qn = np.full(len(type_raw), 0.5)
        type_scores = type_qn + config.c_puct * type_p * sqrt_total / (1 + type_n)
        type_scores[~present] = -math.inf
        t = int(np.argmax(type_scores))
        lo, hi = int(b[t]), int(b[t + 1])
        if hi - lo == 1:
            return lo
        cond = self.priors[lo:hi]
        total = cond.sum()
        cond = cond / total if total > 0 else np.full(hi - lo, 1.0 / (hi - lo))
        scores = qn[lo:hi] + config.c_puct * cond * sqrt_total / (1 + self.n[lo:hi])
        return lo + int(np.argmax(scores))

    def record(self, slot: int, value: float) -> None:
        self.n[slot] += 1
        self.w[slot] += value
        self.total_n += 1
        self.total_w += value
        if value < self.q_min:
            self.q_min = value
        if value > self.q_max:
            self.q_max = value


def q_for_selection(node: Node, slot: int) -> float:
    """Min-max normalized Q used for selection at one edge (0.5 when the node
    has seen at most one distinct backed-up value)."""
    raw = node.w[slot] / node.n[slot] if node.n[slot] > 0 else node.node_average()
    if node.q_max > node.q_min:
        return float((raw - node.q_min) / (node.q_max - node.q_min))
    return 0.5


def select_action(node: Node, config: MctsConfig) -> int:
    """Flat action index chosen by (bi-level) PUCT at an expanded node."""
    if not node.expanded or len(node.valid_idx) == 0:
        raise ValueError("cannot select at an unexpanded or actionless node")
    return int(node.valid_idx[node.select_slot(config)])


class OtherAgentSource(Protocol):
    """Supplies the other player's action at an expanded node."""

    def sample(self, node: Node, rng: np.random.Generator) -> int:
        ...


class NoopOther:
    def sample(self, node: Node, rng: np.random.Generator) -> int:
        return 0


class NetworkOther:
    """Sample the other player from the evaluator's action-prediction head."""

    def sample(self, node: Node, rng: np.random.Generator) -> int:
        return node.sample_other(rng)


class CallableOther:
    def __init__(self, dist_fn: Callable[[W.WorldState], np.ndarray]):
        self.dist_fn = dist_fn

    def sample(self, node: Node, rng: np.random.Generator) -> int:
        dist = np.asarray(self.dist_fn(node.state), dtype=np.float64)
        u = rng.random() * dist.sum()
        return int(np.searchsorted(np.cumsum(dist), u, side="right"))


def estimate_reward(belief: np.ndarray, state: W.WorldState,
                    a_builder: W.Action, a_assistant: W.Action, mode: str,
                    env_cfg: W.EnvConfig, next_belief: Optional[np.ndarray] = None,
                    goal=None, agent_slot: int = W.ASSISTANT) -> float:
    """Expected shared reward of one joint action under factorized beliefs.

    `belief` is the (n_cells, B) distribution at the current history; for the
    split estimator the planning agent's own component uses it while the other
    player's component uses `next_belief` (the distribution after observing
    the joint action). Marginal mode scores both components with
    `next_belief`. Defaults make the two coincide when only one belief exists.
    """
    if mode == KNOWN_THETA:
        if goal is None:
            raise ValueError("known-theta rewards need the goal")
        _, mutations = W.apply_actions(state, a_builder, a_assistant, env_cfg)
        r0, r1 = W.mutation_rewards(mutations, goal)
        return r0 + r1
    if next_belief is None:
        next_belief = belief
    if belief.shape[0] != env_cfg.n_cells:
        raise ValueError("belief does not match the grid")
    _, mutations = W.apply_actions(state, a_builder, a_assistant, env_cfg)
    table = _cost_table(env_cfg.num_block_types)
    total = 0.0
    for mut in mutations:
        if mode == SPLIT and mut.player == agent_slot:
            cell_belief = belief
        else:
            cell_belief = next_belief
        cell = W.cell_index(mut.cell, env_cfg.dims)
        probs = cell_belief[cell]
        total += float(np.dot(probs, table[mut.before] - table[mut.after]))
    return total


@dataclass
class SearchPolicy:
    probs: np.ndarray                     # (A,) dense, zeros at invalid actions
    counts: np.ndarray                    # (A,) dense visit counts
    root_q: np.ndarray                    # (A,) raw W/N, NaN where unvisited
    belief: Optional[np.ndarray]          # root per-cell goal distribution
    valid_idx: np.ndarray

    def sample(self, rng: np.random.Generator) -> int:
        return int(np.searchsorted(np.cumsum(self.probs), rng.random(), side="right"))

    def argmax(self) -> int:
        return int(np.argmax(self.probs))


class Search:
    """One tree search, drivable in lockstep with others through shared
    batched network evaluations."""

    def __init__(self, ctx: SearchContext, config: MctsConfig,
                 rng: np.random.Generator, root_state: W.WorldState,
                 other_source: OtherAgentSource, root_carry=None):
        self.ctx = ctx
        self.config = config
        self.rng = rng
        self.other_source = other_source
        if root_state.timestep >= ctx.effective_horizon or (
                ctx.reward_mode == KNOWN_THETA
                and W.edit_distance(root_state, ctx.goal) == 0):
            raise ValueError("cannot search from a terminal state")
        self.root = Node(root_state, depth=0, terminal=False)
        self.root_carry = root_carry
        self.simulations_done = 0
        self._pending_path: Optional[list[tuple[Node, int]]] = None
        self._pending_child: Optional[Node] = None
        self._pending_masks: Optional[tuple[np.ndarray, np.ndarray]] = None
        _cost_table(ctx.env_cfg.num_block_types)

    def _masks(self, state: W.WorldState) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.ctx.env_cfg
        agent = W.valid_action_mask(state, self.ctx.agent_slot, cfg.reach,
                                    cfg.num_block_types)
        other = W.valid_action_mask(state, 1 - self.ctx.agent_slot, cfg.reach,
                                    cfg.num_block_types)
        return agent, other

    def needs_root_eval(self) -> Optional[EvalRequest]:
        if self.root.expanded:
            return None
        agent_mask, other_mask = self._masks(self.root.state)
        return EvalRequest(state=self.root.state, agent_mask=agent_mask,
                           other_mask=other_mask, parent_carry=self.root_carry,
                           goal=self.ctx.goal)

    def provide_root(self, request: EvalRequest, result: EvaluationResult) -> None:
        valid_idx = np.flatnonzero(request.agent_mask).astype(np.int64)
        self.root.expand(valid_idx, result, self.ctx.env_cfg.n_cells)
        self._apply_root_noise()

    def _apply_root_noise(self) -> None:
        eps = self.config.dirichlet_epsilon
        if eps == 0.0:
            return
        node = self.root
        priors = node.priors

        def stage2_alpha(size: int) -> float:
            if self.config.dirichlet_alpha_param_rule == ALPHA_RULE_TEN_OVER_VALID:
                return 10.0 / size
            return self.config.dirichlet_alpha_param

        if not self.config.bilevel:
            alpha = stage2_alpha(len(priors))
            noise = self.rng.dirichlet(np.full(len(priors), alpha))
            node.priors = (1 - eps) * priors + eps * noise
            return
        b = node.type_bounds
        sizes = b[1:] - b[:-1]
        present = np.flatnonzero(sizes > 0)
        type_p = _segment_sums(priors, b)
        type_noise = self.rng.dirichlet(
            np.full(len(present), self.config.dirichlet_alpha_type))
        noisy_type = type_p.copy()
        noisy_type[present] = (1 - eps) * type_p[present] + eps * type_noise
        new_priors = np.empty_like(priors)
        for k_i, t in enumerate(present):
            lo, hi = int(b[t]), int(b[t + 1])
            seg = priors[lo:hi]
            total = seg.sum()
            cond = seg / total if total > 0 else np.full(hi - lo, 1.0 / (hi - lo))
            if hi - lo > 1:
                noise = self.rng.dirichlet(np.full(hi - lo, stage2_alpha(hi - lo)))
                cond = (1 - eps) * cond + eps * noise
            new_priors[lo:hi] = noisy_type[t] * cond
        node.priors = new_priors

    def begin_simulation(self) -> Optional[EvalRequest]:
        """Descend to a fresh leaf. Returns its evaluation request, or None if
        the simulation ended inside the tree (backup already applied)."""
        assert self.root.expanded, "root must be evaluated before searching"
        node = self.root
        path: list[tuple[Node, int]] = []
        while True:
            slot = node.select_slot(self.config)
            path.append((node, slot))
            agent_action_idx = int(node.valid_idx[slot])
            other_action_idx = self.other_source.sample(node, self.rng)
            key = (slot, other_action_idx)
            child = node.children.get(key)
            if child is None:
                child = self._make_child(node, agent_action_idx, other_action_idx)
                node.children[key] = child
                if child.terminal and self.ctx.reward_mode == KNOWN_THETA:
                    # exact rewards need no network call; back up immediately
                    self._backup(path, child)
                    self.simulations_done += 1
                    return None
                self._pending_path = path
                self._pending_child = child
                self._pending_masks = self._masks(child.state)
                return EvalRequest(state=child.state,
                                   agent_mask=self._pending_masks[0],
                                   other_mask=self._pending_masks[1],
                                   parent_carry=node.carry, goal=self.ctx.goal)
            if child.terminal:
                self._backup(path, child)
                self.simulations_done += 1
                return None
            node = child

    def finish_simulation(self, result: EvaluationResult) -> None:
        path, child = self._pending_path, self._pending_child
        agent_mask, _ = self._pending_masks
        valid_idx = np.flatnonzero(agent_mask).astype(np.int64)
        child.expand(valid_idx, result, self.ctx.env_cfg.n_cells)
        parent = path[-1][0]
        child.reward_in = self._edge_reward(parent, child)
        self._backup(path, child)
        self.simulations_done += 1
        self._pending_path = None
        self._pending_child = None
        self._pending_masks = None

    def _make_child(self, parent: Node, agent_idx: int, other_idx: int) -> Node:
        cfg = self.ctx.env_cfg
        agent_action = W.action_from_index(agent_idx, cfg.dims, cfg.num_block_types)
        other_action = (W.NOOP_ACTION if other_idx == 0 else
                        W.action_from_index(other_idx, cfg.dims, cfg.num_block_types))
        if self.ctx.agent_slot == W.ASSISTANT:
            a0, a1 = other_action, agent_action
        else:
            a0, a1 = agent_action, other_action
        state, mutations = W.apply_actions(parent.state, a0, a1, cfg)
        terminal = state.timestep >= self.ctx.effective_horizon
        if self.ctx.reward_mode == KNOWN_THETA and not terminal:
            terminal = W.edit_distance(state, self.ctx.goal) == 0
        child = Node(state, parent.depth + 1, terminal)
        child.mutations_in = mutations
        child.agent_idx_in = agent_idx
        if self.ctx.reward_mode == KNOWN_THETA:
            r0, r1 = W.mutation_rewards(mutations, self.ctx.goal)
            reward = r0 + r1
            if agent_idx == 0:
                reward += self.ctx.noop_penalty
            child.reward_in = reward
        return child

    def _edge_reward(self, parent: Node, child: Node) -> float:
        if self.ctx.reward_mode == KNOWN_THETA:
            return child.reward_in
        total = 0.0
        cfg = self.ctx.env_cfg
        table = _cost_table(cfg.num_block_types)
        for mut in child.mutations_in:
            if self.ctx.reward_mode == SPLIT and mut.player == self.ctx.agent_slot:
                belief = parent.belief
            else:
                belief = child.belief
            cell = W.cell_index(mut.cell, cfg.dims)
            probs = belief[cell]
            total += float(np.dot(probs, table[mut.before] - table[mut.after]))
        if child.agent_idx_in == 0:
            total += self.ctx.noop_penalty
        return total

    def _backup(self, path: list[tuple[Node, int]], leaf: Node) -> None:
        value = 0.0 if leaf.terminal else leaf.value
        gamma = self.config.gamma
        child: Node = leaf
        for node, slot in reversed(path):
            value = child.reward_in + gamma * value
            node.record(slot, value)
            child = node

    @property
    def done(self) -> bool:
        return self.simulations_done >= self.config.num_simulations

    def policy(self) -> SearchPolicy:
        cfg = self.ctx.env_cfg
        a = cfg.num_actions
        probs = np.zeros(a)
        counts = np.zeros(a)
        root_q = np.full(a, np.nan)
        node = self.root
        weights = node.n.astype(np.float64) ** self.config.tau
        total = weights.sum()
        if total > 0:
            probs[node.valid_idx] = weights / total
        counts[node.valid_idx] = node.n
        visited = node.n > 0
        root_q[node.valid_idx[visited]] = node.w[visited] / node.n[visited]
        return SearchPolicy(probs=probs, counts=counts, root_q=root_q,
                            belief=node.belief, valid_idx=node.valid_idx.copy())


def run_searches(searches: Sequence[Search], evaluator: Evaluator) -> list[SearchPolicy]:
    """Drive many independent searches in lockstep, batching evaluations."""
    pending = [(s, s.needs_root_eval()) for s in searches]
    pending = [(s, r) for s, r in pending if r is not None]
    if pending:
        results = evaluator.evaluate_batch([r for _, r in pending])
        for (s, r), res in zip(pending, results):
            s.provide_root(r, res)
    while any(not s.done for s in searches):
        batch: list[tuple[Search, EvalRequest]] = []
        for s in searches:
            if s.done:
                continue
            req = s.begin_simulation()
            if req is not None:
                batch.append((s, req))
        if batch:
            results = evaluator.evaluate_batch([r for _, r in batch])
            for (s, _), res in zip(batch, results):
                s.finish_simulation(res)
    return [s.policy() for s in searches]


def run_search(root_state: W.WorldState, ctx: SearchContext, config: MctsConfig,
               evaluator: Evaluator, other_source: OtherAgentSource,
               rng: np.random.Generator, root_carry=None) -> SearchPolicy:
    search = Search(ctx, config, rng, root_state, other_source, root_carry)
    return run_searches([search], evaluator)[0]


def full_support_policy(node: Node, c_puct: float) -> np.ndarray:
    """Strictly positive policy over the node's valid actions.

    Solves pi(a) = lam * P(a) / (nu - Qn(a)) with nu found by bisection so the
    probabilities sum to one; lam grows with visit counts, moving weight from
    the prior toward high-value actions as search effort increases.
    """
    if not node.expanded or node.total_n < 1:
        raise ValueError("need an expanded node with at least one backup")
    qn = node.normalized_q()
    p = node.priors.astype(np.float64)
    k = len(p)
    if k == 1:
        return np.ones(1)
    total_n = node.total_n
    lam = c_puct * math.sqrt(total_n) / (k + total_n)
    lo = float(np.max(qn + lam * p))
    hi = float(np.max(qn) + lam)

    def mass(nu: float) -> float:
        return float(np.sum(lam * p / (nu - qn)))

    # mass(lo) >= 1 >= mass(hi); bisect until the bracket collapses
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if mass(mid) >= 1.0:
            lo = mid
        else:
            hi = mid
    nu = 0.5 * (lo + hi)
    pi = lam * p / (nu - qn)
    total = pi.sum()
    if abs(total - 1.0) > 1e-8:
        raise RuntimeError(f"full-support normalization failed: sum={total}")
    return pi / total
