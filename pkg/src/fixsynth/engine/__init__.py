"""Minimal dense-tensor engine: forward ops, tape autodiff, Adam, weight IO."""

from .gradcheck import GradCheckReport, NondeterministicError, gradient_check
from .optim import AdamState, OptimizerError, adam_step
from .serialize import SerializationError, load_params, save_params
from .tensor import (
    EngineError,
    ShapeError,
    Tape,
    Tensor,
    active_tape,
    add,
    apply,
    backward,
    conv1d,
    conv2d,
    dropout,
    leaky_relu,
    linear,
    matmul,
    mean_all,
    mse_loss,
    neg,
    reshape,
    scale,
    softplus,
    sub,
    tanh,
    transposed_conv2d,
    upsample1d_nearest,
    upsample2d_nearest,
)

__all__ = [
    "AdamState",
    "EngineError",
    "GradCheckReport",
    "NondeterministicError",
    "OptimizerError",
    "SerializationError",
    "ShapeError",
    "Tape",
    "Tensor",
    "active_tape",
    "adam_step",
    "add",
    "apply",
    "backward",
    "conv1d",
    "conv2d",
    "dropout",
    "gradient_check",
    "leaky_relu",
    "linear",
    "load_params",
    "matmul",
    "mean_all",
    "mse_loss",
    "neg",
    "reshape",
    "save_params",
    "scale",
    "softplus",
    "sub",
    "tanh",
    "transposed_conv2d",
    "upsample1d_nearest",
    "upsample2d_nearest",
]
