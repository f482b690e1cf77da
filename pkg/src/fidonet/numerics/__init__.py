"""Differentiable computation substrate: tensors, ops, Adam, grad checking."""

from .gradcheck import grad_check
from .ops import bilstm, conv2d_same, cross_entropy_logits, lstm, softmax, softmax_rows
from .optim import AdamState, adam_step
from .tensor import (
    Parameter,
    Tensor,
    checked_mode,
    concat,
    custom_op,
    flip0,
    is_checked,
    matmul,
    mean_axis,
    reshape,
    set_checked,
    tensor,
    transpose,
)

__all__ = [
    "AdamState",
    "bilstm",
    "Parameter",
    "Tensor",
    "adam_step",
    "checked_mode",
    "concat",
    "conv2d_same",
    "cross_entropy_logits",
    "custom_op",
    "flip0",
    "grad_check",
    "is_checked",
    "lstm",
    "matmul",
    "mean_axis",
    "reshape",
    "set_checked",
    "softmax",
    "softmax_rows",
    "tensor",
    "transpose",
]
