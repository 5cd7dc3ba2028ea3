"""ADAM as written for this method: the update uses the raw moving averages
(no bias correction) unless ``bias_correction`` is enabled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import torch

from ..core import ConfigError, TrainingError

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-10


def adam_update(w, g, m, v, lr, beta1=BETA1, beta2=BETA2, eps=EPS, k=1, bias_correction=False):
    """One update of a single parameter; works on floats, numpy arrays and tensors alike.

    Returns ``(w, m, v)`` after iteration ``k`` (1-based).
    """
    m = beta1 * m + (1 - beta1) * g
    v = beta2 * v + (1 - beta2) * g * g
    m_use, v_use = m, v
    if bias_correction:
        m_use = m / (1 - beta1 ** k)
        v_use = v / (1 - beta2 ** k)
    w = w - lr * m_use / (v_use ** 0.5 + eps)
    return w, m, v


@dataclass
class OptimizerState:
    lr: float
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    k: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPS
    bias_correction: bool = False

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not self.eps > 0:
            raise ConfigError(f"epsilon must be positive, got {self.eps}")


def adam_step(weights: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: OptimizerState) -> tuple[dict, OptimizerState]:
    """Functional step over named arrays; inputs are left untouched."""
    k = state.k + 1
    new_w, new_m, new_v = {}, {}, {}
    for name, w in weights.items():
        g = np.asarray(grads[name], dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        if g.shape != w.shape:
            raise TrainingError(f"gradient shape {g.shape} != weight shape {w.shape} for {name}", step=k)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name}", step=k)
        m = state.m.get(name, np.zeros_like(w))
        v = state.v.get(name, np.zeros_like(w))
        new_w[name], new_m[name], new_v[name] = adam_update(
            w, g, m, v, state.lr, state.beta1, state.beta2, state.eps, k, state.bias_correction)
    new_state = OptimizerState(state.lr, new_m, new_v, k, state.beta1, state.beta2, state.eps,
                               state.bias_correction)
    return new_w, new_state


class Adam(torch.optim.Optimizer):
    """In-place torch optimizer using :func:`adam_update`."""

    def __init__(self, params, lr=1e-5, betas=(BETA1, BETA2), eps=EPS, bias_correction=False):
        if not lr > 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        super().__init__(params, dict(lr=lr, betas=betas, eps=eps, bias_correction=bias_correction))
        self.steps = 0

    @torch.no_grad()
    def step(self, closure=None):
        loss = closure() if closure is not None else None
        self.steps += 1
        for group in self.param_groups:
            b1, b2 = group["betas"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                if not torch.isfinite(p.grad).all():
                    raise TrainingError("non-finite gradient", step=self.steps)
                st = self.state[p]
                if not st:
                    st["m"] = torch.zeros_like(p)
                    st["v"] = torch.zeros_like(p)
                    st["k"] = 0
                st["k"] += 1
                w, st["m"], st["v"] = adam_update(p, p.grad, st["m"], st["v"], group["lr"], b1, b2,
                                                  group["eps"], st["k"], group["bias_correction"])
                p.copy_(w)
        return loss


def lr_for_epoch(schedule, epoch: int) -> float:
    """``schedule`` is a list of ``(first_epoch, lr)`` pairs, epochs 1-based."""
    lr = None
    for start, value in sorted(schedule):
        if epoch >= start:
            lr = value
    if lr is None:
        raise ConfigError(f"learning-rate schedule has no entry for epoch {epoch}")
    if not math.isfinite(lr) or lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    return lr
