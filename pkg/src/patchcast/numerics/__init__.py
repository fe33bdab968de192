"""Tape-based reverse-mode autodiff, kernels, optimizer, and gradient checks."""

from .adamw import AdamWConfig, AdamWState, adamw_step
from .gradcheck import GradCheckReport, grad_check
from .ops import (
    NormState,
    add,
    append_token,
    causal_attention,
    matmul,
    mse,
    normalize,
    relu,
    reshape,
    scale,
    select_position,
    softmax_lastdim,
    sum_all,
)
from .tensor import (
    DEFAULT_DTYPE,
    Tape,
    Tensor,
    backward,
    current_tape,
    debug_checks,
    debug_checks_enabled,
    set_debug_checks,
    zero_grads,
)

__all__ = [
    "AdamWConfig",
    "AdamWState",
    "DEFAULT_DTYPE",
    "GradCheckReport",
    "NormState",
    "Tape",
    "Tensor",
    "adamw_step",
    "add",
    "append_token",
    "backward",
    "causal_attention",
    "current_tape",
    "debug_checks",
    "debug_checks_enabled",
    "grad_check",
    "matmul",
    "mse",
    "normalize",
    "relu",
    "reshape",
    "scale",
    "select_position",
    "set_debug_checks",
    "softmax_lastdim",
    "sum_all",
    "zero_grads",
]
