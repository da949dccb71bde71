"""Adam optimizer over named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import EngineError, Tensor


class OptimizerError(EngineError):
    """Raised on invalid optimizer inputs (e.g. non-finite gradients)."""


@dataclass
class AdamState:
    """Per-parameter moment accumulators plus shared hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor],
              grads: dict[str, np.ndarray]) -> dict[str, Tensor]:
    """One Adam update with bias-corrected moments; returns new parameter dict.

    The state is mutated in place (moments, step counter); params are
    replaced, never mutated.
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t

    new_params: dict[str, Tensor] = {}
    for name, p in params.items():
        if name not in grads:
            raise OptimizerError(f"no gradient supplied for parameter '{name}'")
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise OptimizerError(
                f"gradient shape {g.shape} does not match parameter '{name}' {p.shape}")
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient for parameter '{name}'")

        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v

        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_params[name] = Tensor(p.data - update, requires_grad=p.requires_grad)
    return new_params
