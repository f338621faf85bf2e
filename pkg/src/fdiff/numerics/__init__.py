"""Dense tensor arithmetic with reverse-mode automatic differentiation."""
from fdiff.numerics import ops
from fdiff.numerics.gradcheck import GradCheckReport, grad_check
from fdiff.numerics.nn import BatchNorm3d, Conv3d, Linear, Module
from fdiff.numerics.rng import SeededRng
from fdiff.numerics.tensor import Tape, Tensor, backprop, is_grad_enabled, no_grad, tensor_create

__all__ = [
    "ops", "Tensor", "Tape", "backprop", "no_grad", "is_grad_enabled", "tensor_create",
    "SeededRng", "grad_check", "GradCheckReport", "Module", "Conv3d", "BatchNorm3d", "Linear",
]
