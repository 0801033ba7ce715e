"""
TRIPLANE DENOISER
========================================

Responsibility: Predict the noise added to a normalized triplane.

Flow:
1. condition = MLP(sinusoid(t)) + class embedding, passed through SiLU once
2. encoder: per level a strided per-plane conv (plus a condition bias), then
   cross-plane attention at the configured resolutions
3. transformer: patchify the bottleneck, run `depth` blocks ("cp" two-branch
   blocks or "ori" plain blocks over all tokens), integrate, add residual
4. decoder: mirror of the encoder with skips, nearest upsampling and conv
5. zero-initialized output conv, so an untrained net predicts eps_hat = 0

Planes are folded into the batch axis, (B, 3, C, W, H) -> (B·3, C, W, H), so
every convolution treats the three planes separately with shared weights.
"""

import logging
from typing import Dict, List, Optional

import numpy as np

from autodiff import ops
from autodiff.nn import Conv2d, Linear, Module, parameter
from autodiff.rng import make_rng
from autodiff.tensor import Tensor, as_tensor
from config.settings import DenoiserConfig
from core.errors import NonFiniteError, ShapeError
from diffusion.attention import (
    CrossPlaneAttention,
    FeedForward,
    MultiHeadAttention,
    modulate,
    per_plane,
    plane_features,
    plane_tokens,
    split_modulation,
    tile_planes,
)
from diffusion.constants import (
    CP_BLOCK_SITES,
    FINAL_SITE_CHUNKS,
    MODULATION_CHUNKS,
    NUM_PLANES,
    ORI_BLOCK_SITES,
    POS_EMBED_STD,
)
from diffusion.embedding import ConditionEmbedding

logger = logging.getLogger(__name__)


def _gated(x: Tensor, gate: Tensor, update: Tensor) -> Tensor:
    return ops.add(x, ops.mul(gate, update))


def _add_channel_bias(features: Tensor, bias: Tensor, batch: int) -> Tensor:
    """(B·3, C, W, H) + per-sample (B, C) bias shared by the three planes."""
    n, c, w, h = features.shape
    grouped = ops.reshape(features, (batch, NUM_PLANES, c, w, h))
    grouped = ops.add(grouped, ops.reshape(bias, (batch, 1, c, 1, 1)))
    return ops.reshape(grouped, (n, c, w, h))


# ============================================================================
# ENCODER / DECODER LEVELS
# ============================================================================

class EncoderLevel(Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int, resolution: int,
                 patch_size: int, cross_plane: bool, heads: int, cond_dim: int,
                 rng: np.random.Generator):
        self.conv = Conv2d(in_channels, out_channels, 3, rng, stride=stride, padding=1)
        self.cond_proj = Linear(cond_dim, out_channels, rng)
        self.cross_plane = CrossPlaneAttention(out_channels, resolution, patch_size, heads,
                                               cond_dim, rng) if cross_plane else None

    def forward(self, features: Tensor, cond: Tensor, batch: int) -> Tensor:
        h = _add_channel_bias(self.conv(features), self.cond_proj(cond), batch)
        h = ops.silu(h)
        if self.cross_plane is not None:
            h = self.cross_plane(h, cond, batch)
        return h


class DecoderLevel(Module):
    def __init__(self, in_channels: int, out_channels: int, factor: int, resolution: int,
                 patch_size: int, cross_plane: bool, heads: int, cond_dim: int,
                 rng: np.random.Generator):
        self.factor = factor
        self.cross_plane = CrossPlaneAttention(in_channels, resolution, patch_size, heads,
                                               cond_dim, rng) if cross_plane else None
        self.conv = Conv2d(in_channels, out_channels, 3, rng, padding=1)

    def forward(self, features: Tensor, skip: Tensor, cond: Tensor, batch: int) -> Tensor:
        h = ops.add(features, skip)
        if self.cross_plane is not None:
            h = self.cross_plane(h, cond, batch)
        return ops.silu(self.conv(ops.upsample_nearest(h, self.factor)))


# ============================================================================
# TRANSFORMER BLOCKS
# ============================================================================

class CrossPlaneTransformerBlock(Module):
    """
    Two-branch block.

    The left branch runs per-plane self-attention and an MLP, producing
    enhanced features. The right branch runs its own per-plane self-attention,
    then cross-attention from each plane to the enhanced features of all three
    planes, then an MLP. Every residual is adaLN-modulated and gated; gates
    start at zero.
    """

    def __init__(self, width: int, heads: int, mlp_ratio: int, rng: np.random.Generator):
        self.modulation = Linear(width, CP_BLOCK_SITES * MODULATION_CHUNKS * width, rng, zero_init=True)
        self.left_attention = MultiHeadAttention(width, heads, rng)
        self.left_mlp = FeedForward(width, width * mlp_ratio, rng)
        self.right_attention = MultiHeadAttention(width, heads, rng)
        self.cross_attention = MultiHeadAttention(width, heads, rng)
        self.right_mlp = FeedForward(width, width * mlp_ratio, rng)

    def forward(self, tokens: Tensor, cond: Tensor) -> Tensor:
        mods = split_modulation(self.modulation(cond), CP_BLOCK_SITES * MODULATION_CHUNKS)
        site = [mods[i:i + MODULATION_CHUNKS] for i in range(0, len(mods), MODULATION_CHUNKS)]

        shift, scale, gate = site[0]
        enhanced = _gated(tokens, gate, per_plane(self.left_attention, modulate(tokens, shift, scale)))
        shift, scale, gate = site[1]
        enhanced = _gated(enhanced, gate, self.left_mlp(modulate(enhanced, shift, scale)))

        shift, scale, gate = site[2]
        right = _gated(tokens, gate, per_plane(self.right_attention, modulate(tokens, shift, scale)))
        shift, scale, gate = site[3]
        right = _gated(right, gate, self.cross_attention(modulate(right, shift, scale), enhanced))
        shift, scale, gate = site[4]
        return _gated(right, gate, self.right_mlp(modulate(right, shift, scale)))


class PlainTransformerBlock(Module):
    """adaLN-Zero self-attention + MLP over the tokens of all planes at once."""

    def __init__(self, width: int, heads: int, mlp_ratio: int, rng: np.random.Generator):
        self.modulation = Linear(width, ORI_BLOCK_SITES * MODULATION_CHUNKS * width, rng, zero_init=True)
        self.attention = MultiHeadAttention(width, heads, rng)
        self.mlp = FeedForward(width, width * mlp_ratio, rng)

    def forward(self, tokens: Tensor, cond: Tensor) -> Tensor:
        shift_a, scale_a, gate_a, shift_m, scale_m, gate_m = split_modulation(
            self.modulation(cond), ORI_BLOCK_SITES * MODULATION_CHUNKS)
        x = _gated(tokens, gate_a, self.attention(modulate(tokens, shift_a, scale_a)))
        return _gated(x, gate_m, self.mlp(modulate(x, shift_m, scale_m)))


class TokenTransformer(Module):
    """Patchify the bottleneck features, run the block stack, integrate back (residual)."""

    def __init__(self, cfg: DenoiserConfig, channels: int, resolution: int, rng: np.random.Generator):
        self.patch_size = cfg.patch_size
        token_dim = channels * cfg.patch_size ** 2
        num_tokens = (resolution // cfg.patch_size) ** 2
        block_cls = CrossPlaneTransformerBlock if cfg.transformer == "cp" else PlainTransformerBlock
        self.embed = Linear(token_dim, cfg.width, rng)
        self.pos_embed = parameter(rng.normal(0.0, POS_EMBED_STD, size=(num_tokens, cfg.width)))
        self.blocks = [block_cls(cfg.width, cfg.heads, cfg.mlp_ratio, rng) for _ in range(cfg.depth)]
        self.final_modulation = Linear(cfg.width, FINAL_SITE_CHUNKS * cfg.width, rng, zero_init=True)
        self.head = Linear(cfg.width, token_dim, rng)

    def forward(self, features: Tensor, cond: Tensor, batch: int, check=None) -> Tensor:
        grid = plane_tokens(features, batch, self.patch_size)
        tokens = ops.add(self.embed(grid.tokens), tile_planes(self.pos_embed))
        for i, block in enumerate(self.blocks):
            tokens = block(tokens, cond)
            if check is not None:
                check(f"transformer.blocks.{i}", tokens)
        shift, scale = split_modulation(self.final_modulation(cond), FINAL_SITE_CHUNKS)
        out = self.head(modulate(tokens, shift, scale))
        return ops.add(features, plane_features(grid, out))


# ============================================================================
# DENOISER
# ============================================================================

class DenoiserNet(Module):
    """
    eps-prediction network over (B, 3, C, W, H) normalized triplanes.

    Usage:
        net = create_denoiser(cfg, seed=0)
        eps_hat = net.denoise(x_t, t, labels)
    """

    def __init__(self, cfg: DenoiserConfig, rng: np.random.Generator):
        self.config = cfg
        resolutions = cfg.level_resolutions()
        hidden = cfg.hidden_channels
        cross = set(cfg.cross_plane_resolutions)

        self.condition = ConditionEmbedding(cfg.timestep_dim, cfg.width, cfg.num_classes, rng)
        self.encoder = [
            EncoderLevel(cfg.channels if l == 0 else hidden[l - 1], hidden[l], cfg.conv_stride,
                         resolutions[l], cfg.encoder_patch_sizes[l], resolutions[l] in cross,
                         cfg.attention_heads, cfg.width, rng)
            for l in range(len(hidden))
        ]
        self.transformer = TokenTransformer(cfg, hidden[-1], resolutions[-1], rng)
        self.decoder = [
            DecoderLevel(hidden[l], hidden[max(l - 1, 0)], cfg.conv_stride, resolutions[l],
                         cfg.encoder_patch_sizes[l], resolutions[l] in cross,
                         cfg.attention_heads, cfg.width, rng)
            for l in reversed(range(len(hidden)))
        ]
        self.output_conv = Conv2d(hidden[0], cfg.channels, 3, rng, padding=1, zero_init=True)

    @property
    def input_shape(self):
        cfg = self.config
        return NUM_PLANES, cfg.channels, cfg.resolution, cfg.resolution

    @staticmethod
    def _check(name: str, tensor: Tensor) -> None:
        if not np.all(np.isfinite(tensor.data)):
            raise NonFiniteError(f"denoiser layer {name}", f"shape {tensor.shape}")

    def condition_vector(self, t, labels=None) -> Tensor:
        return ops.silu(self.condition(t, labels))

    def encode(self, x_t, cond: Tensor) -> List[Tensor]:
        """Per-level encoder features (last entry is the bottleneck), planes folded into the batch."""
        x_t = as_tensor(x_t)
        batch = x_t.shape[0]
        h = ops.reshape(x_t, (batch * NUM_PLANES,) + x_t.shape[2:])
        skips = []
        for l, level in enumerate(self.encoder):
            h = level(h, cond, batch)
            self._check(f"encoder.{l}", h)
            skips.append(h)
        return skips

    def denoise(self, x_t, t, labels: Optional[np.ndarray] = None) -> Tensor:
        """
        Predict eps for a batch of noisy triplanes.

        Args:
            x_t: (B, 3, C, W, H) normalized noisy triplanes.
            t: (B,) integer timesteps (>= 0).
            labels: (B,) class labels, None for the null class.

        Returns:
            Tensor: eps_hat with the shape of x_t.

        Raises:
            ShapeError: x_t does not match the configured triplane shape.
            NonFiniteError: naming the first layer with NaN/Inf activations.
        """
        x_t = as_tensor(x_t)
        if x_t.ndim != 5 or x_t.shape[1:] != self.input_shape:
            raise ShapeError("denoise", f"expected (B, {', '.join(map(str, self.input_shape))})", x_t.shape)
        t = np.asarray(t).reshape(-1)
        batch = x_t.shape[0]
        if t.shape[0] != batch or np.any(t < 0):
            raise ValueError(f"need {batch} non-negative timesteps, got {t.tolist()}")

        cond = self.condition_vector(t, labels)
        skips = self.encode(x_t, cond)
        h = self.transformer(skips[-1], cond, batch, check=self._check)
        self._check("transformer", h)
        for i, (level, skip) in enumerate(zip(self.decoder, reversed(skips))):
            h = level(h, skip, cond, batch)
            self._check(f"decoder.{i}", h)
        out = self.output_conv(h)
        self._check("output_conv", out)
        return ops.reshape(out, x_t.shape)

    forward = denoise

    def get_stats_summary(self) -> Dict:
        cfg = self.config
        return {
            "parameters": self.parameter_count(),
            "transformer": cfg.transformer,
            "depth": cfg.depth,
            "cross_plane_resolutions": list(cfg.cross_plane_resolutions),
        }


# ============================================================================
# PARAMETER COUNT
# ============================================================================

def _linear(i: int, o: int, bias: bool = True) -> int:
    return i * o + (o if bias else 0)


def _conv(i: int, o: int, k: int = 3) -> int:
    return o * i * k * k + o


def _attention(d: int) -> int:
    return 4 * _linear(d, d)


def _cross_plane(channels: int, resolution: int, ps: int, cond_dim: int) -> int:
    d = channels * ps * ps
    m = (resolution // ps) ** 2
    return _linear(d, d) + m * d + _linear(cond_dim, MODULATION_CHUNKS * d) + _attention(d) \
        + _linear(d, d, bias=False)


def expected_parameter_count(cfg: DenoiserConfig) -> int:
    """Closed-form parameter count of DenoiserNet(cfg)."""
    w = cfg.width
    hidden = cfg.hidden_channels
    resolutions = cfg.level_resolutions()
    cross = set(cfg.cross_plane_resolutions)
    mlp = _linear(w, w * cfg.mlp_ratio) + _linear(w * cfg.mlp_ratio, w)

    total = _linear(cfg.timestep_dim, w) + _linear(w, w) + (cfg.num_classes + 1) * w
    for l, ch in enumerate(hidden):
        cin = cfg.channels if l == 0 else hidden[l - 1]
        total += _conv(cin, ch) + _linear(w, ch)
        total += _conv(ch, hidden[max(l - 1, 0)])
        if resolutions[l] in cross:
            total += 2 * _cross_plane(ch, resolutions[l], cfg.encoder_patch_sizes[l], w)

    token_dim = hidden[-1] * cfg.patch_size ** 2
    total += _linear(token_dim, w) + (resolutions[-1] // cfg.patch_size) ** 2 * w
    if cfg.transformer == "cp":
        block = _linear(w, CP_BLOCK_SITES * MODULATION_CHUNKS * w) + 3 * _attention(w) + 2 * mlp
    else:
        block = _linear(w, ORI_BLOCK_SITES * MODULATION_CHUNKS * w) + _attention(w) + mlp
    total += cfg.depth * block
    total += _linear(w, FINAL_SITE_CHUNKS * w) + _linear(w, token_dim)
    total += _conv(hidden[0], cfg.channels)
    return total


def create_denoiser(cfg: DenoiserConfig, seed: int = 0) -> DenoiserNet:
    net = DenoiserNet(cfg, make_rng(seed, "denoiser-init"))
    logger.info(f"[OK] Denoiser ready: {net.parameter_count():,} parameters ({cfg.transformer} transformer)")
    return net
