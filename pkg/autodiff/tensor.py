"""
Tensor and reverse-mode graph
=============================

Responsibility: Hold dense numpy arrays together with the op node that produced
them, and run reverse-mode differentiation over the recorded graph.

Precision:
- float32 is the default for training.
- `default_dtype(np.float64)` switches every tensor created inside the block to
  float64 (used by gradient checks).
"""

import contextlib
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import GradientError

_DTYPE = np.float32
_GRAD_ENABLED = True


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily change the floating dtype of newly created tensors."""
    global _DTYPE
    previous = _DTYPE
    _DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = previous


def get_default_dtype():
    return _DTYPE


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording (sampling, evaluation, finite differences)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@dataclass
class OpNode:
    """One recorded op: its kind, its inputs and the closure that maps the output
    gradient to one gradient per input (None where an input gets nothing)."""
    kind: str
    inputs: Tuple["Tensor", ...]
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    saved: Dict[str, Any] = field(default_factory=dict)


class Tensor:
    """
    Dense array with an optional gradient.

    Leaves created with requires_grad=True accumulate into `.grad` on backward.
    Tensors produced by ops carry the `node` that created them.
    """

    def __init__(self, data, requires_grad: bool = False, node: Optional[OpNode] = None):
        self.data: np.ndarray = np.asarray(data, dtype=_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node = node

    # ------------------------------------------------------------------
    # Properties
    # ------------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise GradientError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # ------------------------------------------------------------------
    # Operator sugar (delegates to the op catalog)
    # ------------------------------------------------------------------
    def __add__(self, other):
        from autodiff import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from autodiff import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from autodiff import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from autodiff import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from autodiff import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from autodiff import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from autodiff import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from autodiff import ops
        return ops.div(other, self)

    def __neg__(self):
        from autodiff import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from autodiff import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from autodiff import ops
        return ops.index(self, index)

    def reshape(self, *shape):
        from autodiff import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from autodiff import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        from autodiff import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from autodiff import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value) -> Tensor:
    """Wrap arrays and scalars as constant tensors; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _topological_order(root: Tensor) -> List[Tensor]:
    """Post-order of every tensor reachable from root that requires a gradient."""
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]

    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor.node is not None:
            for parent in tensor.node.inputs:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

    return order


def backward(loss: Tensor) -> None:
    """
    Accumulate d(loss)/d(leaf) into `.grad` of every requires_grad leaf.

    Args:
        loss: Scalar tensor produced by recorded ops.

    Raises:
        GradientError: If loss is not a scalar or does not depend on any leaf.
    """
    if loss.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradientError("loss does not depend on any tensor with requires_grad=True")

    order = _topological_order(loss)
    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    # Reverse post-order visits each node once, after all of its consumers.
    for tensor in reversed(order):
        grad = pending.pop(id(tensor), None)
        if grad is None:
            continue

        if tensor.node is None:
            if tensor.grad is None:
                tensor.grad = np.array(grad, dtype=tensor.dtype, copy=True)
            else:
                tensor.grad = tensor.grad + grad
            continue

        input_grads = tensor.node.backward_fn(grad)
        for parent, parent_grad in zip(tensor.node.inputs, input_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            parent_grad = np.asarray(parent_grad, dtype=parent.dtype)
            if parent_grad.shape != parent.shape:
                raise GradientError(
                    f"{tensor.node.kind}: gradient shape {parent_grad.shape} "
                    f"does not match input shape {parent.shape}"
                )
            if id(parent) in pending:
                pending[id(parent)] = pending[id(parent)] + parent_grad
            else:
                pending[id(parent)] = parent_grad
