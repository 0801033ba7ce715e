"""
Shared decoder
==============

Responsibility: The category-independent MLP that turns queried triplane
features into color and density.

Structure:
- trunk: softplus MLP over F(p) + gamma(p)
- density head: one linear layer (zero-initialized) then softplus; depends on position only
- color head: one softplus layer over trunk features + view direction, then sigmoid
"""

import logging
from typing import Tuple

import numpy as np

from autodiff import ops
from autodiff.nn import Linear, Module
from autodiff.tensor import Tensor
from core.errors import NonFiniteError
from triplane.representation import PlaneSource, encoding_width, positional_encoding, query_features

logger = logging.getLogger(__name__)


class SharedDecoder(Module):
    def __init__(self, channels: int, rng: np.random.Generator, pe_frequencies: int = 4,
                 hidden: int = 64, depth: int = 4):
        self.channels = channels
        self.pe_frequencies = pe_frequencies
        self.hidden = hidden
        self.depth = depth

        in_features = 3 * channels + encoding_width(pe_frequencies)
        self.trunk = [Linear(in_features if i == 0 else hidden, hidden, rng) for i in range(depth)]
        self.density_head = Linear(hidden, 1, rng, zero_init=True)
        self.color_hidden = Linear(hidden + 3, hidden, rng)
        self.color_out = Linear(hidden, 3, rng)

    def config(self) -> dict:
        return {"channels": self.channels, "pe_frequencies": self.pe_frequencies,
                "hidden": self.hidden, "depth": self.depth}

    def forward(self, features: Tensor, points, dirs) -> Tuple[Tensor, Tensor]:
        """
        Args:
            features: (N, 3C) queried triplane features.
            points: (N, 3) positions for the positional encoding.
            dirs: (N, 3) unit view directions.

        Returns:
            (colors (N, 3) in [0, 1], densities (N,) >= 0)
        """
        h = ops.concat([features, Tensor(positional_encoding(points, self.pe_frequencies))], axis=1)
        for i, layer in enumerate(self.trunk):
            h = _checked(ops.softplus(layer(h)), f"trunk.{i}")

        sigma = _checked(ops.softplus(self.density_head(h)), "density_head")
        c = ops.concat([h, Tensor(np.asarray(dirs))], axis=1)
        c = _checked(ops.softplus(self.color_hidden(c)), "color_hidden")
        rgb = _checked(ops.sigmoid(self.color_out(c)), "color_out")
        return rgb, ops.reshape(sigma, (sigma.shape[0],))


def _checked(t: Tensor, layer: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(f"decoder layer {layer}")
    return t


def decode(decoder: SharedDecoder, planes: PlaneSource, points, dirs) -> Tuple[Tensor, Tensor]:
    """c(p, d), sigma(p) for a batch of points; differentiable in planes and decoder."""
    points = np.asarray(points)
    dirs = np.asarray(dirs)
    if points.shape != dirs.shape:
        raise ValueError(f"points {points.shape} and dirs {dirs.shape} must match")
    return decoder(query_features(planes, points), points, dirs)


def create_shared_decoder(fit_cfg, rng: np.random.Generator) -> SharedDecoder:
    """Build the decoder described by a FitConfig."""
    logger.info(f"[START] Shared decoder: {fit_cfg.decoder_depth} x {fit_cfg.decoder_hidden}, "
                f"L={fit_cfg.pe_frequencies}")
    return SharedDecoder(fit_cfg.channels, rng, pe_frequencies=fit_cfg.pe_frequencies,
                         hidden=fit_cfg.decoder_hidden, depth=fit_cfg.decoder_depth)
