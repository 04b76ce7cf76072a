"""Minimal dense-tensor numerics with reverse-mode differentiation."""

from . import ops
from .ops import (
    add,
    batch_norm,
    bce_with_logits,
    concat,
    conv2d,
    dropout,
    gather,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scatter_add,
    segment_softmax,
    sigmoid,
    softmax,
    sub,
    tanh,
    transpose,
)
from .optim import Adam, adam_step
from .serialize import load_tensor, save_tensor
from .tensor import Tape, Tensor, as_tensor, backward, current_tape, no_grad

__all__ = [
    "Adam", "Tape", "Tensor", "adam_step", "add", "as_tensor", "backward", "batch_norm",
    "bce_with_logits", "concat", "conv2d", "current_tape", "dropout", "gather", "load_tensor",
    "matmul", "mean", "mul", "no_grad", "ops", "relu", "reshape", "save_tensor", "scatter_add",
    "segment_softmax", "sigmoid", "softmax", "sub", "tanh", "transpose",
]
