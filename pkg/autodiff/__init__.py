"""Reverse-mode autodiff over numpy arrays."""

from autodiff import ops
from autodiff.gradcheck import check_gradients, finite_difference_check
from autodiff.nn import Conv2d, Embedding, LayerNorm, Linear, Module, parameter
from autodiff.ops import OpKind, forward_op
from autodiff.optim import Adam
from autodiff.rng import make_rng
from autodiff.snapshot import load_named_tensors, load_tensor, save_named_tensors, save_tensor
from autodiff.tensor import Tensor, as_tensor, backward, default_dtype, no_grad

__all__ = [
    "ops", "OpKind", "forward_op", "Tensor", "as_tensor", "backward", "default_dtype",
    "no_grad", "Module", "Linear", "LayerNorm", "Conv2d", "Embedding", "parameter", "Adam",
    "make_rng", "save_tensor", "load_tensor", "save_named_tensors", "load_named_tensors",
    "check_gradients", "finite_difference_check",
]
