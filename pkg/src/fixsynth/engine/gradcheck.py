"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import EngineError, Tape, Tensor, backward


class NondeterministicError(EngineError):
    """The loss is stochastic (dropout in training mode); finite differences
    would compare two different random functions."""


@dataclass
class GradCheckReport:
    per_param: dict[str, float]     # max relative error per parameter
    max_rel_error: float
    h: float


def _rel_err(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)


def gradient_check(loss_fn: Callable[[dict[str, Tensor]], Tensor],
                   params: dict[str, Tensor],
                   h: float = 1e-5) -> GradCheckReport:
    """Compare tape gradients of ``loss_fn(params)`` against central differences.

    ``loss_fn`` must be a pure function of the parameter dict (dropout off,
    fixed inputs baked in).  A dropout record on the tape means the forward
    pass is stochastic and the check refuses to run.
    """
    for name, p in params.items():
        if not p.requires_grad:
            raise EngineError(f"parameter '{name}' must have requires_grad=True")
    with Tape() as tape:
        loss = loss_fn(params)
    if any(op == "dropout" for op in tape.op_names()):
        raise NondeterministicError(
            "gradient_check requires deterministic mode: disable dropout")
    grads = backward(tape, loss)
    ad = {name: grads.get(p, np.zeros_like(p.data)) for name, p in params.items()}

    per_param: dict[str, float] = {}
    for name, p in params.items():
        base = p.data
        fd = np.zeros_like(base)
        flat = fd.reshape(-1)
        for i in range(base.size):
            bumped = base.reshape(-1).copy()
            bumped[i] += h
            plus = loss_fn({**params, name: Tensor(bumped.reshape(base.shape))}).item()
            bumped[i] -= 2.0 * h
            minus = loss_fn({**params, name: Tensor(bumped.reshape(base.shape))}).item()
            flat[i] = (plus - minus) / (2.0 * h)
        per_param[name] = float(_rel_err(ad[name], fd).max()) if base.size else 0.0

    return GradCheckReport(per_param=per_param,
                           max_rel_error=max(per_param.values(), default=0.0),
                           h=h)
