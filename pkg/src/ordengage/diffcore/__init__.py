"""Minimal dense-tensor reverse-mode autodiff: tensors, tape, ops, optimizers."""

from .gradcheck import grad_check
from .optim import Optimizer
from .tensor import Tape, Tensor, active_tape, backward
from . import ops
from .ops import (
    activation,
    add,
    concat,
    conv1d_causal,
    dropout,
    l2_normalize_rows,
    log_softmax,
    masked_logsumexp_rows,
    matmul,
    mean_axis,
    mul,
    narrow,
    neg,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    softplus,
    sub,
    take_per_row,
    tanh,
    tmean,
    transpose,
    tsum,
    weighted_sum,
)

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "active_tape",
    "grad_check",
    "Optimizer",
    "ops",
    "activation",
    "add",
    "concat",
    "conv1d_causal",
    "dropout",
    "l2_normalize_rows",
    "log_softmax",
    "masked_logsumexp_rows",
    "matmul",
    "mean_axis",
    "mul",
    "narrow",
    "neg",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "softmax",
    "softplus",
    "sub",
    "take_per_row",
    "tanh",
    "tmean",
    "transpose",
    "tsum",
    "weighted_sum",
]
