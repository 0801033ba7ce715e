"""
Finite-difference gradient checks
=================================

Responsibility: Compare reverse-mode gradients with central differences.

Both checks run in float64. The scalar being differentiated is sum(out * w)
with a fixed random cotangent w, so every output element contributes.
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from autodiff.ops import forward_op
from autodiff.rng import make_rng
from autodiff.tensor import Tensor, backward, default_dtype, no_grad

logger = logging.getLogger(__name__)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(fn: Callable[[List[Tensor]], Tensor], inputs: Sequence[np.ndarray],
                    eps: float = 1e-5, max_elements: Optional[int] = None,
                    seed: int = 0) -> float:
    """
    Max relative error between backward() and central differences of a scalar fn.

    Args:
        fn: Maps a list of tensors (one per input) to a scalar tensor.
        inputs: Input values; all are treated as differentiable.
        eps: Finite-difference step.
        max_elements: When set, only this many randomly chosen elements per
            input are perturbed.
        seed: Seed for choosing the checked elements.

    Returns:
        float: max over checked elements of |a - n| / max(|a|, |n|, 1e-8).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")

    with default_dtype(np.float64):
        values = [np.array(x, dtype=np.float64) for x in inputs]
        leaves = [Tensor(v, requires_grad=True) for v in values]
        backward(fn(leaves))
        analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

        def evaluate(k: int, perturbed: np.ndarray) -> float:
            args = [Tensor(perturbed if i == k else values[i]) for i in range(len(values))]
            with no_grad():
                return float(fn(args).item())

        rng = make_rng(seed, "gradcheck")
        worst = 0.0
        for k, value in enumerate(values):
            flat_indices = np.arange(value.size)
            if max_elements is not None and value.size > max_elements:
                flat_indices = np.sort(rng.choice(value.size, size=max_elements, replace=False))
            numeric = np.empty(len(flat_indices))
            for n, flat in enumerate(flat_indices):
                idx = np.unravel_index(flat, value.shape)
                plus = value.copy()
                plus[idx] += eps
                minus = value.copy()
                minus[idx] -= eps
                numeric[n] = (evaluate(k, plus) - evaluate(k, minus)) / (2.0 * eps)
            checked = analytic[k].reshape(-1)[flat_indices]
            worst = max(worst, relative_error(checked, numeric))

    return worst


def finite_difference_check(kind, inputs: Sequence[np.ndarray], eps: float = 1e-5,
                            attrs: Optional[Dict] = None, seed: int = 0,
                            max_elements: Optional[int] = None) -> float:
    """
    Gradient check of one catalog op.

    Args:
        kind: OpKind or its name.
        inputs: Differentiable inputs in the op's argument order.
        eps: Finite-difference step (> 0).
        attrs: Non-differentiable op attributes (axis, stride, indices, ...).

    Returns:
        float: Max relative error over every input element.
    """
    attrs = dict(attrs or {})
    with default_dtype(np.float64), no_grad():
        probe = forward_op(kind, *[Tensor(x) for x in inputs], **attrs)
    weights = make_rng(seed, "cotangent", str(kind)).standard_normal(probe.shape)

    def scalar(tensors: List[Tensor]) -> Tensor:
        out = forward_op(kind, *tensors, **attrs)
        return (out * Tensor(weights)).sum()

    error = check_gradients(scalar, inputs, eps=eps, max_elements=max_elements, seed=seed)
    logger.debug(f"gradcheck {kind}: max relative error {error:.3e}")
    return error
