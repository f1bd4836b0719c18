from .core import (
    Tape,
    Tensor,
    as_tensor,
    backward,
    default_dtype,
    grad_enabled,
    make_rng,
    no_grad,
    parameter,
    precision,
)
from .gradcheck import GradReport, grad_check, relative_error
from . import ops

__all__ = [
    "GradReport",
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "default_dtype",
    "grad_check",
    "grad_enabled",
    "make_rng",
    "no_grad",
    "ops",
    "parameter",
    "precision",
    "relative_error",
]
