"""Adam and the step-decay learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def lr_schedule(epoch: int, base_lr: float = 1e-3, decay_every: int = 25,
                decay_factor: float = 10.0, epochs: int | None = None) -> float:
    """base_lr / decay_factor ** floor(epoch / decay_every)."""
    if epoch < 0 or (epochs is not None and epoch >= epochs):
        raise ValueError(f"epoch {epoch} outside [0, {epochs})")
    return base_lr / decay_factor ** (epoch // decay_every)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], **hyper) -> AdamState:
        return cls(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
            **hyper,
        )


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update. Returns new (params, state); inputs are untouched."""
    if params.keys() != grads.keys():
        raise ValueError("parameter and gradient names differ")
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {k} at Adam step {state.step + 1}")
    b1, b2 = state.beta1, state.beta2
    t = state.step + 1
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    new_params, m, v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m[k] = b1 * state.m[k] + (1 - b1) * g
        v[k] = b2 * state.v[k] + (1 - b2) * g * g
        update = lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + state.eps)
        new_params[k] = (p - update).astype(p.dtype, copy=False)
    return new_params, AdamState(m, v, t, b1, b2, state.eps)
