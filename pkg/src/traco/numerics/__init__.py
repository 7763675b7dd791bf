"""Dense float64 substrate: autodiff tape, Adam, finite-difference oracle."""

from .check import finite_diff_grad, relative_error
from .optim import AdamState, adam_step, clip_global_norm
from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    constant,
    div,
    exp,
    log,
    log_softmax,
    logsumexp,
    matmul,
    mean,
    mul,
    neg,
    pairwise_sq_dist,
    reshape,
    softmax,
    softmax_stable,
    softplus,
    square,
    sub,
    sum_,
    take,
    transpose,
    where,
)

__all__ = [
    "AdamState",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "clip_global_norm",
    "constant",
    "div",
    "exp",
    "finite_diff_grad",
    "log",
    "log_softmax",
    "logsumexp",
    "matmul",
    "mean",
    "mul",
    "neg",
    "pairwise_sq_dist",
    "relative_error",
    "reshape",
    "softmax",
    "softmax_stable",
    "softplus",
    "square",
    "sub",
    "sum_",
    "take",
    "transpose",
    "where",
]
