"""
Layers
======

Responsibility: Parameter containers built on the op catalog. A Module finds its
parameters by walking its attributes, so subclasses only assign layers and
tensors in __init__ and implement forward().
"""

import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from autodiff import ops
from autodiff.tensor import Tensor


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


class Module:
    """Base class for everything that owns trainable tensors."""

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        """Yield (dotted name, tensor) in attribute definition order."""
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.astype(p.dtype, copy=True)


class Linear(Module):
    """y = x @ weight + bias with weight stored as (in_features, out_features)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, zero_init: bool = False):
        if zero_init:
            w = np.zeros((in_features, out_features))
        else:
            limit = math.sqrt(6.0 / (in_features + out_features))
            w = rng.uniform(-limit, limit, size=(in_features, out_features))
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(out_features)) if bias else None
        self.in_features = in_features
        self.out_features = out_features

    def forward(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.weight)
        if self.bias is not None:
            y = ops.add(y, self.bias)
        return y


class LayerNorm(Module):
    """Layer norm over the last axis with an optional learned scale and shift."""

    def __init__(self, dim: int, affine: bool = True, eps: float = 1e-5):
        self.eps = eps
        self.gamma = parameter(np.ones(dim)) if affine else None
        self.beta = parameter(np.zeros(dim)) if affine else None

    def forward(self, x: Tensor) -> Tensor:
        y = ops.layer_norm(x, eps=self.eps)
        if self.gamma is not None:
            y = ops.add(ops.mul(y, self.gamma), self.beta)
        return y


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: Optional[int] = None,
                 zero_init: bool = False):
        fan_in = in_channels * kernel_size * kernel_size
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        if zero_init:
            w = np.zeros(shape)
        else:
            bound = math.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=shape)
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(out_channels))
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Embedding(Module):
    def __init__(self, num_embeddings: int, dim: int, rng: np.random.Generator, std: float = 0.02):
        self.table = parameter(rng.normal(0.0, std, size=(num_embeddings, dim)))

    def forward(self, indices) -> Tensor:
        return ops.embedding(self.table, indices)
