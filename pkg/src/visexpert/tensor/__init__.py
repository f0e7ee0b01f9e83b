"""Minimal dense tensors with reverse-mode autodiff."""
from . import checkpoint, ops
from .core import (
    Tape,
    Tensor,
    backward,
    default_dtype,
    full,
    get_precision,
    gradients,
    identity,
    no_record,
    ones,
    precision,
    set_precision,
    tensor,
    zeros,
)
from .gradcheck import grad_check, numeric_grad
from .kernels import BACKEND as KERNEL_BACKEND
from .ops import (
    conv2x2_s2,
    cross_entropy,
    matmul,
    softmax,
    swiglu,
)

__all__ = [
    "KERNEL_BACKEND",
    "Tape",
    "Tensor",
    "backward",
    "checkpoint",
    "conv2x2_s2",
    "cross_entropy",
    "default_dtype",
    "full",
    "get_precision",
    "grad_check",
    "gradients",
    "identity",
    "matmul",
    "no_record",
    "numeric_grad",
    "ones",
    "ops",
    "precision",
    "set_precision",
    "softmax",
    "swiglu",
    "tensor",
    "zeros",
]
