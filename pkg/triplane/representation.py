"""
Triplane representation
=======================

Responsibility: The Triplane container, bilinear feature queries, positional
encoding and dataset-level normalization.

Conventions:
- planes are stored as one (3, C, W, H) array in xy, yz, xz order
- F_xy is indexed by (x, y), F_yz by (y, z), F_xz by (x, z)
- world coordinates in [-1, 1] map linearly onto texel centers
"""

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from autodiff import ops
from autodiff.tensor import Tensor, as_tensor
from triplane.constants import DEFAULT_CLAMP, NUM_PLANES, PLANE_AXES, STD_FLOOR


@dataclass
class Triplane:
    """Three C x W x H feature planes of one object."""
    planes: np.ndarray
    object_id: str = ""
    class_label: int = -1

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=np.float32)
        if self.planes.ndim != 4 or self.planes.shape[0] != NUM_PLANES:
            raise ValueError(f"planes must have shape (3, C, W, H), got {self.planes.shape}")

    @property
    def channels(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @property
    def height(self) -> int:
        return self.planes.shape[3]

    def copy(self, planes: Optional[np.ndarray] = None) -> "Triplane":
        values = self.planes.copy() if planes is None else planes
        return Triplane(values, self.object_id, self.class_label)


PlaneSource = Union[Triplane, Tensor, np.ndarray]


def _plane_tensor(source: PlaneSource) -> Tensor:
    if isinstance(source, Triplane):
        return Tensor(source.planes)
    return as_tensor(source)


def query_features(planes: PlaneSource, points) -> Tensor:
    """
    Bilinear lookup of every plane at the projected points.

    Args:
        planes: Triplane, or a (3, C, W, H) tensor when gradients are needed.
        points: (N, 3) positions; values outside [-1, 1] are clamped.

    Returns:
        Tensor: (N, 3C) = Cat(F_xy(p), F_yz(p), F_xz(p)).
    """
    planes = _plane_tensor(planes)
    points = np.asarray(points.data if isinstance(points, Tensor) else points)
    features = []
    for k, (a, b) in enumerate(PLANE_AXES):
        coords = Tensor(points[:, [a, b]])
        features.append(ops.grid_sample(planes[k], coords))
    return ops.concat(features, axis=1)


def positional_encoding(points, frequencies: int) -> np.ndarray:
    """p followed by [sin(2^k pi p), cos(2^k pi p)] for k = 0..L-1."""
    if frequencies < 0:
        raise ValueError(f"frequency count must be >= 0, got {frequencies}")
    points = np.asarray(points, dtype=np.float64)
    parts = [points]
    for k in range(frequencies):
        scaled = (2.0 ** k) * np.pi * points
        parts.append(np.sin(scaled))
        parts.append(np.cos(scaled))
    return np.concatenate(parts, axis=-1)


def encoding_width(frequencies: int) -> int:
    return 3 + 6 * frequencies


# ============================================================================
# NORMALIZATION
# ============================================================================

@dataclass
class NormStats:
    """Per-channel mean and std over a fitted triplane population."""
    mean: np.ndarray
    std: np.ndarray
    clamp: Optional[float] = DEFAULT_CLAMP

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64), STD_FLOOR)

    @classmethod
    def identity(cls, channels: int) -> "NormStats":
        """Pass-through statistics (normalization ablated)."""
        return cls(np.zeros(channels), np.ones(channels), clamp=None)

    def _broadcast(self, values: np.ndarray):
        return self.mean[None, :, None, None], self.std[None, :, None, None]


def compute_norm_stats(triplanes: Iterable[Triplane], clamp: Optional[float] = DEFAULT_CLAMP) -> NormStats:
    """Channel statistics pooled over all planes, texels and objects."""
    planes = [t.planes for t in triplanes]
    if not planes:
        raise ValueError("cannot compute statistics of an empty population")
    stack = np.stack(planes).astype(np.float64)
    mean = stack.mean(axis=(0, 1, 3, 4))
    std = stack.std(axis=(0, 1, 3, 4))
    return NormStats(mean, std, clamp)


def normalize(tri: Triplane, stats: NormStats) -> Triplane:
    mean, std = stats._broadcast(tri.planes)
    z = (tri.planes.astype(np.float64) - mean) / std
    if stats.clamp is not None:
        z = np.clip(z, -stats.clamp, stats.clamp)
    return tri.copy(z.astype(np.float32))


def denormalize(tri: Triplane, stats: NormStats) -> Triplane:
    mean, std = stats._broadcast(tri.planes)
    x = tri.planes.astype(np.float64) * std + mean
    return tri.copy(x.astype(np.float32))


def stack_planes(triplanes: Sequence[Triplane]) -> np.ndarray:
    """(B, 3, C, W, H) batch of plane arrays."""
    return np.stack([t.planes for t in triplanes]).astype(np.float32)
