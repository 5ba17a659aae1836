"""Dense tensors with tape-based reverse-mode differentiation."""

from . import ops
from .gradcheck import check_parameter_gradients, finite_difference_check
from .module import Conv2d, LayerNorm, Linear, Module, parameter
from .optim import Adam, clip_global_norm, step_decay_lr
from .tensor import Tape, Tensor, active_tape, as_tensor, grad, record

matmul = ops.matmul

__all__ = [
    "Adam", "Conv2d", "LayerNorm", "Linear", "Module", "Tape", "Tensor",
    "active_tape", "as_tensor", "check_parameter_gradients", "clip_global_norm",
    "finite_difference_check", "grad", "matmul", "ops", "parameter", "record",
    "step_decay_lr",
]
