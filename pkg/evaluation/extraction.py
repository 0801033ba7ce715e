"""
Surface point extraction.

A density field is evaluated on the vertices of a regular grid over the
[-1, 1]^3 cube. A vertex is occupied when its density exceeds the threshold at
which one grid cell of material absorbs half the light (1 - exp(-sigma·cell) = 0.5).
Cells whose eight corners disagree straddle the surface; points are drawn from
those cells uniformly and jittered inside the cell.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from autodiff.tensor import no_grad
from core.errors import EmptyShapeError
from triplane.constants import CUBE_MAX, CUBE_MIN, DEFAULT_RENDER_CHUNK
from triplane.decoder import SharedDecoder, decode

logger = logging.getLogger(__name__)

DensityFn = Callable[[np.ndarray], np.ndarray]

# Density assigned to the inside of analytic reference shapes.
REFERENCE_DENSITY = 1e4


@dataclass
class PointCloud:
    points: np.ndarray          # (N, 3)
    source: str = "generated"   # "generated" | "reference"
    object_id: Optional[str] = None

    def __len__(self) -> int:
        return int(self.points.shape[0])


def density_threshold(cell_size: float) -> float:
    """sigma with 1 - exp(-sigma·cell_size) = 0.5."""
    return math.log(2.0) / cell_size


def triplane_density_fn(planes, decoder: SharedDecoder, chunk: int = DEFAULT_RENDER_CHUNK) -> DensityFn:
    """Decoder density of a (3, C, W, H) triplane, evaluated in chunks without a graph."""
    planes = np.asarray(planes)

    def density(points: np.ndarray) -> np.ndarray:
        out = np.empty(points.shape[0], dtype=np.float64)
        dirs = np.tile(np.array([0.0, 0.0, 1.0]), (min(chunk, points.shape[0]), 1))
        with no_grad():
            for start in range(0, points.shape[0], chunk):
                block = points[start:start + chunk]
                _, sigma = decode(decoder, planes, block, dirs[: block.shape[0]])
                out[start:start + block.shape[0]] = sigma.data.reshape(-1)
        return out

    return density


def occupancy_density_fn(obj) -> DensityFn:
    """Analytic density of a synthetic object: REFERENCE_DENSITY inside, 0 outside."""
    return lambda points: obj.occupancy(points).astype(np.float64) * REFERENCE_DENSITY


def extract_point_cloud(density_fn: DensityFn, n: int = 2048, resolution: int = 64,
                        threshold: Optional[float] = None, rng: Optional[np.random.Generator] = None,
                        source: str = "generated", object_id: Optional[str] = None) -> PointCloud:
    """
    Sample n surface points from a density field.

    Args:
        density_fn: Maps (N, 3) points to (N,) densities.
        n: Number of points returned.
        resolution: Grid cells per axis.
        threshold: Occupancy density; defaults to density_threshold(cell size).
        rng: Generator for cell choice and jitter.

    Raises:
        EmptyShapeError: no vertex is occupied, or no cell straddles the surface.
    """
    if n < 1 or resolution < 2:
        raise ValueError("need n >= 1 and resolution >= 2")
    rng = rng if rng is not None else np.random.default_rng(0)
    cell = (CUBE_MAX - CUBE_MIN) / resolution
    threshold = density_threshold(cell) if threshold is None else threshold

    axis = np.linspace(CUBE_MIN, CUBE_MAX, resolution + 1)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    occupied = (np.asarray(density_fn(grid)).reshape(-1) > threshold).reshape((resolution + 1,) * 3)
    if not occupied.any():
        raise EmptyShapeError(f"no grid vertex exceeds density {threshold:.4g}")

    corners = [occupied[i:i + resolution, j:j + resolution, k:k + resolution]
               for i in (0, 1) for j in (0, 1) for k in (0, 1)]
    count = np.sum(corners, axis=0)
    surface = np.argwhere((count > 0) & (count < 8))
    if surface.size == 0:
        raise EmptyShapeError("occupied region has no surface inside the cube")

    chosen = surface[rng.integers(0, surface.shape[0], size=n)]
    points = CUBE_MIN + (chosen + rng.random((n, 3))) * cell
    logger.debug(f"[OK] Extracted {n} points from {surface.shape[0]} surface cells")
    return PointCloud(points, source, object_id)
