"""
optim.py - AdamW with decoupled weight decay, and the warmup/cosine schedule.

Public API
----------
OptimState
    First/second moment accumulators per parameter name plus a step counter.

adamw_step(store, state, *, lr, beta1, beta2, eps, weight_decay, grads=None, skip_decay=())
    One in-place update of every tensor in *store*.

lr_at_step(step, schedule)
    Linear warmup 0 -> base_lr, then cosine base_lr -> min_lr.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Container, Mapping

import numpy as np

from .errors import ConfigError, ContractError
from .params import ParamStore

if TYPE_CHECKING:  # pragma: no cover
    from .training import ScheduleConfig

__all__ = ["OptimState", "adamw_step", "lr_at_step"]


@dataclass
class OptimState:
    """Adam moments keyed by parameter name; ``step`` counts applied updates."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_store(cls, store: ParamStore) -> "OptimState":
        state = cls()
        for name, tensor in store.items():
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        return state


def adamw_step(
    store: ParamStore,
    state: OptimState,
    *,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.95,
    eps: float = 1e-8,
    weight_decay: float = 0.05,
    grads: Mapping[str, np.ndarray] | None = None,
    skip_decay: Container[str] = (),
) -> None:
    """Apply one AdamW update to every parameter in *store*.

    The decay is decoupled: ``param *= 1 - lr·wd`` happens before the
    bias-corrected moment update is subtracted.  Gradients come from *grads*
    when given, otherwise from each tensor's ``grad`` slot; a missing
    gradient counts as zero.
    """
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ConfigError(f"betas must lie in [0, 1), got ({beta1}, {beta2})")
    if weight_decay < 0:
        raise ConfigError(f"weight_decay must be non-negative, got {weight_decay}")

    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t

    for name, param in store.items():
        g = grads[name] if grads is not None and name in grads else param.grad
        if g is None:
            g = np.zeros_like(param.data)
        if g.shape != param.shape:
            raise ContractError(f"gradient for '{name}' has shape {g.shape}, expected {param.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        m, v = state.m[name], state.v[name]
        if m.shape != param.shape:
            raise ContractError(f"optimizer state for '{name}' does not match parameter shape")

        p = param.data
        if weight_decay and name not in skip_decay:
            p *= 1.0 - lr * weight_decay
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)


def lr_at_step(step: int, schedule: "ScheduleConfig") -> float:
    """Learning rate at *step* in ``[0, total_steps]``."""
    total, warmup = schedule.total_steps, schedule.warmup_steps
    base, floor = schedule.effective_base_lr, schedule.min_lr
    if step < 0 or step > max(total, 0):
        raise ContractError(f"step {step} outside [0, {total}]")
    if warmup and step < warmup:
        return base * step / warmup
    if total <= warmup:
        return base
    progress = (step - warmup) / (total - warmup)
    return floor + (base - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))
