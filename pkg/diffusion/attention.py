"""
Attention blocks
================

Responsibility: Multi-head attention, the token MLP, adaptive-norm modulation,
plane <-> token conversion and the share-weight cross-plane attention used by the
denoiser's encoder and decoder.

Token layout: a batch of triplanes becomes a (B, 3·M, D) tensor, plane-major
(all M tokens of the xy plane, then yz, then xz). Per-plane operations reshape to
(B·3, M, D) so the three planes run through one set of weights.
"""

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from autodiff import ops
from autodiff.nn import Linear, Module, parameter
from autodiff.tensor import Tensor, as_tensor
from core.errors import ShapeError
from diffusion.constants import MODULATION_CHUNKS, NUM_PLANES, POS_EMBED_STD


# ============================================================================
# ATTENTION
# ============================================================================

class MultiHeadAttention(Module):
    """
    Softmax(QKᵀ/√d)V per head, heads concatenated and projected.

    Queries come from `query`; keys and values from `context` (defaults to the
    query tokens, i.e. self-attention). The softmax matrix of the last call is
    kept in `last_weights` for inspection.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if heads < 1 or dim % heads:
            raise ShapeError("attention", f"model dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng)
        self.v_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)
        self.last_weights: Optional[np.ndarray] = None

    def _split_heads(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return ops.transpose(ops.reshape(x, (b, n, self.heads, self.dim // self.heads)), (0, 2, 1, 3))

    def forward(self, query: Tensor, context: Optional[Tensor] = None) -> Tensor:
        query = as_tensor(query)
        context = query if context is None else as_tensor(context)
        if query.ndim != 3 or context.ndim != 3 or query.shape[-1] != self.dim \
                or context.shape[-1] != self.dim or query.shape[0] != context.shape[0]:
            raise ShapeError("attention", f"expected (B, N, {self.dim}) query and context",
                             query.shape, context.shape)

        b, nq, _ = query.shape
        q = self._split_heads(self.q_proj(query))
        k = self._split_heads(self.k_proj(context))
        v = self._split_heads(self.v_proj(context))

        scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))),
                         1.0 / math.sqrt(self.dim // self.heads))
        weights = ops.softmax(scores, axis=-1)
        self.last_weights = weights.data

        out = ops.transpose(ops.matmul(weights, v), (0, 2, 1, 3))
        return self.out_proj(ops.reshape(out, (b, nq, self.dim)))


class FeedForward(Module):
    """Two-layer token MLP with SiLU."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.silu(self.fc1(x)))


# ============================================================================
# ADAPTIVE NORM
# ============================================================================

def split_modulation(params: Tensor, chunks: int) -> List[Tensor]:
    """(B, chunks·D) projection -> `chunks` tensors of shape (B, 1, D) for token broadcasting."""
    b, total = params.shape
    if total % chunks:
        raise ShapeError("modulation", f"width {total} not divisible into {chunks} chunks", params.shape)
    d = total // chunks
    return [ops.reshape(ops.index(params, (slice(None), slice(i * d, (i + 1) * d))), (b, 1, d))
            for i in range(chunks)]


def modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    """LayerNorm(x)·(1 + scale) + shift."""
    return ops.add(ops.mul(ops.layer_norm(x), ops.add(scale, 1.0)), shift)


def per_plane(fn, tokens: Tensor, context: Optional[Tensor] = None) -> Tensor:
    """Run a token op on each plane separately with shared weights."""
    b, n, d = tokens.shape
    m = n // NUM_PLANES
    split = ops.reshape(tokens, (b * NUM_PLANES, m, d))
    if context is None:
        out = fn(split)
    else:
        out = fn(split, ops.reshape(context, (b * NUM_PLANES, m, d)))
    return ops.reshape(out, (b, n, out.shape[-1]))


# ============================================================================
# TOKEN GRID
# ============================================================================

@dataclass
class TokenGrid:
    """Patchified triplane features: (B, 3·M, D) tokens plus the grid they came from."""
    tokens: Tensor
    batch: int
    patch_size: int
    width: int
    height: int


def plane_tokens(features: Tensor, batch: int, patch_size: int) -> TokenGrid:
    """(B·3, C, W, H) per-plane features -> TokenGrid."""
    features = as_tensor(features)
    if features.ndim != 4 or features.shape[0] != batch * NUM_PLANES:
        raise ShapeError("patchify", f"expected ({batch * NUM_PLANES}, C, W, H) plane features",
                         features.shape)
    tokens = ops.patchify(features, patch_size)
    _, m, d = tokens.shape
    return TokenGrid(ops.reshape(tokens, (batch, NUM_PLANES * m, d)), batch, patch_size,
                     features.shape[2], features.shape[3])


def plane_features(grid: TokenGrid, tokens: Optional[Tensor] = None) -> Tensor:
    """Inverse of plane_tokens; `tokens` replaces grid.tokens when given (same grid)."""
    tokens = grid.tokens if tokens is None else tokens
    _, n, d = tokens.shape
    split = ops.reshape(tokens, (grid.batch * NUM_PLANES, n // NUM_PLANES, d))
    return ops.integrate(split, grid.patch_size, grid.width, grid.height)


def tile_planes(table: Tensor) -> Tensor:
    """(M, D) per-plane table -> (3·M, D), the same rows for every plane."""
    return ops.concat([table] * NUM_PLANES, axis=0)


# ============================================================================
# CROSS-PLANE ATTENTION
# ============================================================================

class CrossPlaneAttention(Module):
    """
    Share-weight cross-plane attention on (B·3, C, W, H) plane features.

    Each plane's tokens are queries; keys and values are the tokens of all three
    planes. The attended tokens are gated by the condition-projected vector
    alpha and added back to the input features after integration, so
    alpha = 0 returns the input unchanged.
    """

    def __init__(self, channels: int, resolution: int, patch_size: int, heads: int,
                 cond_dim: int, rng: np.random.Generator):
        if resolution % patch_size:
            raise ShapeError("cross_plane_attention",
                             f"resolution {resolution} not divisible by patch size {patch_size}")
        self.patch_size = patch_size
        self.token_dim = channels * patch_size * patch_size
        num_tokens = (resolution // patch_size) ** 2
        self.token_proj = Linear(self.token_dim, self.token_dim, rng)
        self.pos_embed = parameter(rng.normal(0.0, POS_EMBED_STD, size=(num_tokens, self.token_dim)))
        self.modulation = Linear(cond_dim, MODULATION_CHUNKS * self.token_dim, rng, zero_init=True)
        self.attention = MultiHeadAttention(self.token_dim, heads, rng)
        self.restore_proj = Linear(self.token_dim, self.token_dim, rng, bias=False)

    def forward(self, features: Tensor, cond: Tensor, batch: int) -> Tensor:
        grid = plane_tokens(features, batch, self.patch_size)
        tokens = ops.add(self.token_proj(grid.tokens), tile_planes(self.pos_embed))
        shift, scale, alpha = split_modulation(self.modulation(cond), MODULATION_CHUNKS)
        normed = modulate(tokens, shift, scale)
        attended = self.attention(normed, normed)
        update = self.restore_proj(ops.mul(alpha, attended))
        return ops.add(features, plane_features(grid, update))
