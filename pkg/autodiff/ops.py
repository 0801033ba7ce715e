"""
Op catalog
==========

Responsibility: Forward definitions and backward rules of every differentiable
op used by the triplane fitter, the renderer and the denoiser.

Each op computes its value with numpy and records an OpNode whose backward
closure returns one gradient per input. `forward_op(kind, *inputs)` dispatches
by OpKind for callers (and gradient checks) that select ops by name.
"""

from enum import Enum
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from einops import rearrange
from numpy.lib.stride_tricks import sliding_window_view

from autodiff.tensor import OpNode, Tensor, as_tensor, is_grad_enabled
from core.errors import ShapeError


class OpKind(Enum):
    """Names of the catalog ops."""
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    NEG = "neg"
    MATMUL = "matmul"
    EXP = "exp"
    LOG = "log"
    ABS = "abs"
    SQUARE = "square"
    SIGMOID = "sigmoid"
    SOFTPLUS = "softplus"
    SILU = "silu"
    RELU = "relu"
    SUM = "sum"
    MEAN = "mean"
    RESHAPE = "reshape"
    TRANSPOSE = "transpose"
    INDEX = "index"
    CONCAT = "concat"
    SOFTMAX = "softmax"
    LAYER_NORM = "layer_norm"
    CUMSUM = "cumsum"
    CONV2D = "conv2d"
    UPSAMPLE_NEAREST = "upsample_nearest"
    GRID_SAMPLE = "grid_sample"
    EMBEDDING = "embedding"
    PATCHIFY = "patchify"
    INTEGRATE = "integrate"


# ============================================================================
# HELPERS
# ============================================================================

def _record(kind: OpKind, value: np.ndarray, inputs: Sequence[Tensor],
            backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    inputs = tuple(inputs)
    needs_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs_grad)
    if needs_grad:
        out.node = OpNode(kind.value, inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(kind: OpKind, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(kind.value, "operands cannot be broadcast together", a.shape, b.shape)


def _normalize_axis(axis: int, ndim: int, kind: OpKind, shape) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(kind.value, f"axis {axis} out of range", shape)
    return axis % ndim


# ============================================================================
# ELEMENTWISE ARITHMETIC
# ============================================================================

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(OpKind.ADD, a, b)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(OpKind.ADD, a.data + b.data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(OpKind.SUB, a, b)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(OpKind.SUB, a.data - b.data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(OpKind.MUL, a, b)

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(OpKind.MUL, a.data * b.data, (a, b), backward_fn)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(OpKind.DIV, a, b)
    value = a.data / b.data

    def backward_fn(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * value / b.data, b.shape))

    return _record(OpKind.DIV, value, (a, b), backward_fn)


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _record(OpKind.NEG, -x.data, (x,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes, leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(OpKind.MATMUL.value, "inner dimensions do not match", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(OpKind.MATMUL.value, "batch dimensions do not broadcast", a.shape, b.shape)

    def backward_fn(g):
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _record(OpKind.MATMUL, a.data @ b.data, (a, b), backward_fn)


# ============================================================================
# UNARY FUNCTIONS
# ============================================================================

def exp(x) -> Tensor:
    x = as_tensor(x)
    value = np.exp(x.data)
    return _record(OpKind.EXP, value, (x,), lambda g: (g * value,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _record(OpKind.LOG, np.log(x.data), (x,), lambda g: (g / x.data,))


def abs(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    """Absolute value; the subgradient at 0 is 0."""
    x = as_tensor(x)
    return _record(OpKind.ABS, np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _record(OpKind.SQUARE, x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Split by sign so neither branch overflows.
    out = np.empty_like(z)
    positive = z >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
    ez = np.exp(z[~positive])
    out[~positive] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    value = _sigmoid(x.data)
    return _record(OpKind.SIGMOID, value, (x,), lambda g: (g * value * (1.0 - value),))


def softplus(x) -> Tensor:
    x = as_tensor(x)
    value = np.logaddexp(0.0, x.data)
    return _record(OpKind.SOFTPLUS, value, (x,), lambda g: (g * _sigmoid(x.data),))


def silu(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)

    def backward_fn(g):
        return (g * (s + x.data * s * (1.0 - s)),)

    return _record(OpKind.SILU, x.data * s, (x,), backward_fn)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _record(OpKind.RELU, np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


# ============================================================================
# REDUCTIONS AND SHAPE OPS
# ============================================================================

def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    value = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(OpKind.SUM, value, (x,), backward_fn)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    value = np.mean(x.data, axis=axis, keepdims=keepdims)
    count = x.size / max(value.size, 1)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _record(OpKind.MEAN, value, (x,), backward_fn)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        value = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(OpKind.RESHAPE.value, f"cannot reshape to {tuple(shape)}", x.shape)
    return _record(OpKind.RESHAPE, value, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(OpKind.TRANSPOSE.value, f"invalid permutation {axes}", x.shape)
    inverse = np.argsort([a % x.ndim for a in axes])
    return _record(OpKind.TRANSPOSE, np.transpose(x.data, axes), (x,),
                   lambda g: (np.transpose(g, inverse),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer, type(None), type(Ellipsis))) for i in items)


def index(x, idx) -> Tensor:
    """Slicing and integer-array indexing (`x[idx]`)."""
    x = as_tensor(x)
    try:
        value = x.data[idx]
    except IndexError as exc:
        raise ShapeError(OpKind.INDEX.value, str(exc), x.shape)
    basic = _is_basic_index(idx)

    def backward_fn(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _record(OpKind.INDEX, np.array(value, copy=True), (x,), backward_fn)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError(OpKind.CONCAT.value, "nothing to concatenate")
    ndim = tensors[0].ndim
    axis = _normalize_axis(axis, ndim, OpKind.CONCAT, tensors[0].shape)
    for t in tensors[1:]:
        if t.ndim != ndim or any(
                t.shape[d] != tensors[0].shape[d] for d in range(ndim) if d != axis):
            raise ShapeError(OpKind.CONCAT.value, f"shapes differ outside axis {axis}",
                             *[u.shape for u in tensors])
    boundaries = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, boundaries, axis=axis))

    value = np.concatenate([t.data for t in tensors], axis=axis)
    return _record(OpKind.CONCAT, value, tensors, backward_fn)


# ============================================================================
# NORMALIZATION AND ATTENTION PRIMITIVES
# ============================================================================

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / np.sum(e, axis=axis, keepdims=True)

    def backward_fn(g):
        inner = np.sum(g * value, axis=axis, keepdims=True)
        return (value * (g - inner),)

    return _record(OpKind.SOFTMAX, value, (x,), backward_fn)


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (no affine part).
    A zero-variance row maps to zeros because eps stays in the denominator."""
    x = as_tensor(x)
    mu = np.mean(x.data, axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def backward_fn(g):
        g_mean = np.mean(g, axis=-1, keepdims=True)
        gx_mean = np.mean(g * xhat, axis=-1, keepdims=True)
        return (inv_std * (g - g_mean - xhat * gx_mean),)

    return _record(OpKind.LAYER_NORM, xhat, (x,), backward_fn)


def _reverse_cumsum(g: np.ndarray, axis: int) -> np.ndarray:
    return np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)


def cumsum(x, axis: int = -1, exclusive: bool = False) -> Tensor:
    """Running sum along `axis`. The exclusive variant starts at 0 and skips the
    current element. Accumulation is strictly sequential."""
    x = as_tensor(x)
    axis = _normalize_axis(axis, x.ndim, OpKind.CUMSUM, x.shape)
    inclusive = np.cumsum(x.data, axis=axis)
    if not exclusive:
        return _record(OpKind.CUMSUM, inclusive, (x,), lambda g: (_reverse_cumsum(g, axis),))

    value = np.zeros_like(inclusive)
    dst = [slice(None)] * x.ndim
    src = [slice(None)] * x.ndim
    dst[axis] = slice(1, None)
    src[axis] = slice(None, -1)
    value[tuple(dst)] = inclusive[tuple(src)]

    def backward_fn(g):
        rev = _reverse_cumsum(g, axis)
        grad = np.zeros_like(g)
        grad[tuple(src)] = rev[tuple(dst)]
        return (grad,)

    return _record(OpKind.CUMSUM, value, (x,), backward_fn)


# ============================================================================
# SPATIAL OPS
# ============================================================================

def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """
    2D cross-correlation over NCHW input.

    Args:
        x: (N, Cin, H, W)
        weight: (Cout, Cin, k, k)
        bias: optional (Cout,)
        stride: step between windows
        padding: zeros added on every border

    Returns:
        Tensor: (N, Cout, Hout, Wout)
    """
    x, weight = as_tensor(x), as_tensor(weight)
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        inputs.append(bias)

    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1] \
            or weight.shape[2] != weight.shape[3]:
        raise ShapeError(OpKind.CONV2D.value, "expected (N,C,H,W) input and (O,C,k,k) weight",
                         x.shape, weight.shape)
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(OpKind.CONV2D.value, "bias must have one value per output channel",
                         bias.shape, weight.shape)
    if stride < 1 or padding < 0:
        raise ShapeError(OpKind.CONV2D.value, f"invalid stride {stride} / padding {padding}")

    n, cin, h, w = x.shape
    cout, _, k, _ = weight.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < k or wp < k:
        raise ShapeError(OpKind.CONV2D.value, "kernel larger than padded input", x.shape, weight.shape)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    hout, wout = windows.shape[2], windows.shape[3]
    value = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        value = value + bias.data[None, :, None, None]

    def backward_fn(g):
        grad_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_xp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                contrib = np.tensordot(g, weight.data[:, :, i, j], axes=([1], [0]))
                grad_xp[:, :, i:i + stride * hout:stride, j:j + stride * wout:stride] += \
                    contrib.transpose(0, 3, 1, 2)
        grad_x = grad_xp[:, :, padding:padding + h, padding:padding + w]
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _record(OpKind.CONV2D, value, inputs, backward_fn)


def upsample_nearest(x, factor: int) -> Tensor:
    """Repeat every pixel of an NCHW tensor factor×factor times."""
    x = as_tensor(x)
    if x.ndim != 4 or factor < 1:
        raise ShapeError(OpKind.UPSAMPLE_NEAREST.value, f"factor {factor} on non-NCHW input", x.shape)
    n, c, h, w = x.shape
    value = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward_fn(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _record(OpKind.UPSAMPLE_NEAREST, value, (x,), backward_fn)


def grid_sample(plane, coords) -> Tensor:
    """
    Bilinear lookup of a (C, W, H) feature plane at N points.

    coords[:, 0] spans the W axis and coords[:, 1] the H axis; -1 and 1 land on
    the first and last texel centers. Points outside are clamped to the border
    and get no coordinate gradient.

    Returns:
        Tensor: (N, C)
    """
    plane, coords = as_tensor(plane), as_tensor(coords)
    if plane.ndim != 3 or coords.ndim != 2 or coords.shape[1] != 2:
        raise ShapeError(OpKind.GRID_SAMPLE.value, "expected (C,W,H) plane and (N,2) coords",
                         plane.shape, coords.shape)

    c, w, h = plane.shape
    cx, cy = coords.data[:, 0], coords.data[:, 1]
    u = (np.clip(cx, -1.0, 1.0) + 1.0) * 0.5 * (w - 1)
    v = (np.clip(cy, -1.0, 1.0) + 1.0) * 0.5 * (h - 1)
    i0 = np.clip(np.floor(u).astype(np.int64), 0, max(w - 2, 0))
    j0 = np.clip(np.floor(v).astype(np.int64), 0, max(h - 2, 0))
    i1 = np.minimum(i0 + 1, w - 1)
    j1 = np.minimum(j0 + 1, h - 1)
    fu = (u - i0)[:, None]
    fv = (v - j0)[:, None]

    f00 = plane.data[:, i0, j0].T
    f10 = plane.data[:, i1, j0].T
    f01 = plane.data[:, i0, j1].T
    f11 = plane.data[:, i1, j1].T
    value = ((1 - fu) * (1 - fv) * f00 + fu * (1 - fv) * f10
             + (1 - fu) * fv * f01 + fu * fv * f11)

    def backward_fn(g):
        flat = np.concatenate([i0 * h + j0, i1 * h + j0, i0 * h + j1, i1 * h + j1])
        weights = np.concatenate([(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv])
        contrib = np.concatenate([g, g, g, g]) * weights
        grad_plane = np.stack(
            [np.bincount(flat, weights=contrib[:, ch], minlength=w * h) for ch in range(c)]
        ).reshape(c, w, h)

        du = np.sum(g * ((1 - fv) * (f10 - f00) + fv * (f11 - f01)), axis=1)
        dv = np.sum(g * ((1 - fu) * (f01 - f00) + fu * (f11 - f10)), axis=1)
        inside_x = (cx > -1.0) & (cx < 1.0)
        inside_y = (cy > -1.0) & (cy < 1.0)
        grad_coords = np.stack([du * 0.5 * (w - 1) * inside_x,
                                dv * 0.5 * (h - 1) * inside_y], axis=1)
        return grad_plane, grad_coords

    return _record(OpKind.GRID_SAMPLE, value, (plane, coords), backward_fn)


def embedding(table, indices) -> Tensor:
    """Row lookup `table[indices]` with scatter-add backward."""
    table = as_tensor(table)
    indices = np.asarray(indices, dtype=np.int64)
    if table.ndim != 2 or (indices.size and (indices.min() < 0 or indices.max() >= table.shape[0])):
        raise ShapeError(OpKind.EMBEDDING.value, "index out of range for table", table.shape, indices.shape)

    def backward_fn(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, indices, g)
        return (grad,)

    return _record(OpKind.EMBEDDING, table.data[indices], (table,), backward_fn)


def patchify(x, patch_size: int) -> Tensor:
    """(B, C, W, H) planes -> (B, M, C·ps·ps) tokens, row-major over the patch grid."""
    x = as_tensor(x)
    if x.ndim != 4 or patch_size < 1 or x.shape[2] % patch_size or x.shape[3] % patch_size:
        raise ShapeError(OpKind.PATCHIFY.value, f"plane not divisible by patch size {patch_size}", x.shape)
    gw, gh = x.shape[2] // patch_size, x.shape[3] // patch_size
    value = rearrange(x.data, "b c (gw pw) (gh ph) -> b (gw gh) (c pw ph)",
                      pw=patch_size, ph=patch_size)

    def backward_fn(g):
        return (rearrange(g, "b (gw gh) (c pw ph) -> b c (gw pw) (gh ph)",
                          gw=gw, gh=gh, pw=patch_size, ph=patch_size),)

    return _record(OpKind.PATCHIFY, value, (x,), backward_fn)


def integrate(tokens, patch_size: int, width: int, height: int) -> Tensor:
    """Inverse of patchify: (B, M, C·ps·ps) tokens -> (B, C, W, H) planes."""
    tokens = as_tensor(tokens)
    if tokens.ndim != 3 or width % patch_size or height % patch_size:
        raise ShapeError(OpKind.INTEGRATE.value,
                         f"cannot restore {width}x{height} with patch size {patch_size}", tokens.shape)
    gw, gh = width // patch_size, height // patch_size
    if tokens.shape[1] != gw * gh or tokens.shape[2] % (patch_size * patch_size):
        raise ShapeError(OpKind.INTEGRATE.value, "token grid does not match the plane size", tokens.shape)
    value = rearrange(tokens.data, "b (gw gh) (c pw ph) -> b c (gw pw) (gh ph)",
                      gw=gw, gh=gh, pw=patch_size, ph=patch_size)

    def backward_fn(g):
        return (rearrange(g, "b c (gw pw) (gh ph) -> b (gw gh) (c pw ph)",
                          pw=patch_size, ph=patch_size),)

    return _record(OpKind.INTEGRATE, value, (tokens,), backward_fn)


# ============================================================================
# DISPATCH
# ============================================================================

OP_CATALOG: Dict[OpKind, Callable[..., Tensor]] = {
    OpKind.ADD: add,
    OpKind.SUB: sub,
    OpKind.MUL: mul,
    OpKind.DIV: div,
    OpKind.NEG: neg,
    OpKind.MATMUL: matmul,
    OpKind.EXP: exp,
    OpKind.LOG: log,
    OpKind.ABS: abs,
    OpKind.SQUARE: square,
    OpKind.SIGMOID: sigmoid,
    OpKind.SOFTPLUS: softplus,
    OpKind.SILU: silu,
    OpKind.RELU: relu,
    OpKind.SUM: sum,
    OpKind.MEAN: mean,
    OpKind.RESHAPE: reshape,
    OpKind.TRANSPOSE: transpose,
    OpKind.INDEX: index,
    OpKind.CONCAT: lambda *tensors, axis=0: concat(tensors, axis=axis),
    OpKind.SOFTMAX: softmax,
    OpKind.LAYER_NORM: layer_norm,
    OpKind.CUMSUM: cumsum,
    OpKind.CONV2D: conv2d,
    OpKind.UPSAMPLE_NEAREST: upsample_nearest,
    OpKind.GRID_SAMPLE: grid_sample,
    OpKind.EMBEDDING: embedding,
    OpKind.PATCHIFY: patchify,
    OpKind.INTEGRATE: integrate,
}


def forward_op(kind, *inputs, **attrs) -> Tensor:
    """
    Apply a catalog op by kind.

    Args:
        kind: OpKind or its string value.
        *inputs: Tensors (or arrays) in the op's argument order.
        **attrs: Op attributes (axis, stride, patch_size, ...).

    Returns:
        Tensor: The op output.
    """
    try:
        kind = OpKind(kind) if not isinstance(kind, OpKind) else kind
    except ValueError:
        raise ShapeError(str(kind), "unknown op kind")
    return OP_CATALOG[kind](*inputs, **attrs)
