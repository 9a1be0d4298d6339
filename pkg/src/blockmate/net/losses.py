"""The five-term training loss and its gradients.

Per timestep the loss combines: KL from the search policy to the policy head,
squared error of the value head against the discounted reward-to-go, negative
log-likelihood of the true goal under the per-cell goal head (summed over
cells), a KL penalty keeping the current goal prediction near the prediction
stored when the step was collected, and negative log-likelihood of the other
player's observed action.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .model import FourHeadNet, NetOutput, net_forward_sequence

LOG_EPS = 1e-9


@dataclass
class LossWeights:
    policy: float = 1.0
    value: float = 0.01
    reward: float = 3.0
    prev_rew: float = 0.0
    action: float = 1.0
    # linear ramp for prev_rew across training: (start, end); None = constant
    prev_rew_schedule: Optional[tuple[float, float]] = None

    def __post_init__(self):
        for name in ("policy", "value", "reward", "prev_rew", "action"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")

    def at_progress(self, progress: float) -> "LossWeights":
        """Weights with prev_rew annealed to `progress` in [0, 1]."""
        if self.prev_rew_schedule is None:
            return self
        lo, hi = self.prev_rew_schedule
        value = lo + (hi - lo) * min(max(progress, 0.0), 1.0)
        return LossWeights(self.policy, self.value, self.reward, value,
                           self.action, self.prev_rew_schedule)


@dataclass
class TrainBatch:
    """Fragments flattened time-major; `fragment_lengths` partitions the rows.

    Shapes (N = total timesteps, A = actions, n = cells, B = block types):
      obs (N, C, W, H, D); policy_mask, human_mask (N, A) bool;
      target_policy (N, A); value_target (N,); goal_target (N, n) int64;
      human_action (N,) int64; stored_goal_pred (N, n, B).
    """
    obs: torch.Tensor
    policy_mask: torch.Tensor
    human_mask: torch.Tensor
    target_policy: torch.Tensor
    value_target: torch.Tensor
    goal_target: torch.Tensor
    human_action: torch.Tensor
    stored_goal_pred: torch.Tensor
    fragment_lengths: tuple[int, ...] = ()

    def __post_init__(self):
        n = self.obs.shape[0]
        if not self.fragment_lengths:
            self.fragment_lengths = (n,)
        if sum(self.fragment_lengths) != n:
            raise ValueError("fragment lengths do not cover the batch")


def _safe_log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(x, min=LOG_EPS))


def forward_train(model: FourHeadNet, batch: TrainBatch) -> NetOutput:
    """Feedforward models see one flat batch; recurrent models run each
    fragment as its own sequence with a fresh carry."""
    if model.gru is None:
        from .model import net_forward
        return net_forward(model, batch.obs, batch.policy_mask, batch.human_mask)
    outs = []
    start = 0
    for length in batch.fragment_lengths:
        carry = None
        rows = slice(start, start + length)
        seq = net_forward_sequence(
            model, batch.obs[rows].unsqueeze(1),
            batch.policy_mask[rows].unsqueeze(1),
            batch.human_mask[rows].unsqueeze(1), carry)
        outs.append(seq)
        start += length
    return NetOutput(
        policy_log_probs=torch.cat([o.policy_log_probs.squeeze(1) for o in outs]),
        value=torch.cat([o.value.squeeze(1) for o in outs]),
        goal_log_probs=torch.cat([o.goal_log_probs.squeeze(1) for o in outs]),
        human_log_probs=torch.cat([o.human_log_probs.squeeze(1) for o in outs]),
    )


MIN_LOG = float(np.log(LOG_EPS))


def loss_terms(out: NetOutput, batch: TrainBatch) -> dict[str, torch.Tensor]:
    """Mean-per-timestep value of each of the five terms."""
    target = batch.target_policy
    log_pi = torch.clamp(out.policy_log_probs, min=MIN_LOG)
    # KL(target || pi) over valid actions; entries with zero target contribute 0
    contrib = target * (_safe_log(target) - log_pi)
    policy_kl = torch.where(target > 0, contrib, torch.zeros_like(contrib)).sum(-1).mean()

    value_se = ((out.value - batch.value_target) ** 2).mean()

    goal_logp = torch.clamp(out.goal_log_probs, min=MIN_LOG)
    picked = goal_logp.gather(-1, batch.goal_target.unsqueeze(-1)).squeeze(-1)
    goal_nll = (-picked.sum(-1)).mean()

    cur = out.goal_probs
    stored = batch.stored_goal_pred
    prev_kl = (cur * (_safe_log(cur) - _safe_log(stored))).sum(-1).sum(-1).mean()

    human_logp = torch.clamp(out.human_log_probs, min=MIN_LOG)
    action_nll = (-human_logp.gather(-1, batch.human_action.unsqueeze(-1))
                  .squeeze(-1)).mean()

    return {
        "policy": policy_kl,
        "value": value_se,
        "reward": goal_nll,
        "prev_rew": prev_kl,
        "action": action_nll,
    }


def compute_loss(model: FourHeadNet, batch: TrainBatch,
                 weights: LossWeights) -> tuple[torch.Tensor, dict[str, float]]:
    out = forward_train(model, batch)
    terms = loss_terms(out, batch)
    total = (weights.policy * terms["policy"]
             + weights.value * terms["value"]
             + weights.reward * terms["reward"]
             + weights.prev_rew * terms["prev_rew"]
             + weights.action * terms["action"])
    return total, {k: float(v.detach()) for k, v in terms.items()}


def loss_and_grads(model: FourHeadNet, batch: TrainBatch,
                   weights: LossWeights) -> tuple[float, dict[str, torch.Tensor]]:
    """Scalar loss and a gradient tensor for every parameter (zeros where a
    term with weight 0 leaves a head untouched)."""
    model.zero_grad(set_to_none=True)
    total, _ = compute_loss(model, batch, weights)
    total.backward()
    grads = {}
    for name, param in model.named_parameters():
        grads[name] = (param.grad.detach().clone() if param.grad is not None
                       else torch.zeros_like(param))
    return float(total.detach()), grads
