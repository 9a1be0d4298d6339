"""Adam with global-norm gradient clipping, over named parameter dicts."""

from __future__ import annotations

import math
from typing import Optional

import torch


class TrainingError(RuntimeError):
    """Raised when optimization hits non-finite gradients."""


class AdamState:
    def __init__(self):
        self.step_count = 0
        self.m: dict[str, torch.Tensor] = {}
        self.v: dict[str, torch.Tensor] = {}


def global_grad_norm(grads: dict[str, torch.Tensor]) -> float:
    total = 0.0
    for g in grads.values():
        total += float((g.double() ** 2).sum())
    return math.sqrt(total)


def clip_grads(grads: dict[str, torch.Tensor],
               max_norm: Optional[float]) -> tuple[dict[str, torch.Tensor], float]:
    """Scale gradients so their global norm is at most max_norm."""
    norm = global_grad_norm(grads)
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def adam_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor],
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, grad_clip: Optional[float] = 10.0,
              state: Optional[AdamState] = None) -> AdamState:
    """In-place Adam update after global-norm clipping. Returns the carried
    optimizer state; pass it back in on the next call."""
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in {name}")
    if state is None:
        state = AdamState()
    grads, _ = clip_grads(grads, grad_clip)
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if name not in state.m:
                state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            m = state.m[name]
            v = state.v[name]
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            p.addcdiv_(m / bc1, (v / bc2).sqrt().add_(eps), value=-lr)
    return state
