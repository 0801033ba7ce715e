"""
Shape metrics
=============

Responsibility: Chamfer distance between point clouds and the set-level
Coverage (COV) and Minimum Matching Distance (MMD) built on it.

Chamfer sums squared nearest-neighbour distances in both directions. The
accelerated path finds neighbours with scipy's cKDTree, then recomputes the
squared distance of every candidate tied within floating-point slack exactly as
the brute-force reference does, and sums with math.fsum. Both paths therefore
return identical floats.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from core.errors import MetricInputError

logger = logging.getLogger(__name__)

# Relative slack for kd-tree distances that may tie with the exact minimum.
TIE_SLACK = 1e-9


def _as_cloud(points, name: str) -> np.ndarray:
    cloud = np.asarray(getattr(points, "points", points), dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise MetricInputError(f"{name}: expected (N, 3) points, got shape {cloud.shape}")
    if cloud.shape[0] == 0:
        raise MetricInputError(f"{name}: empty point cloud")
    return cloud


def _squared(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a - b
    return np.sum(diff * diff, axis=-1)


# ============================================================================
# CHAMFER
# ============================================================================

def nearest_squared(source: np.ndarray, tree: cKDTree, target: np.ndarray) -> np.ndarray:
    """Exact min_j ||source_i - target_j||² for every source point."""
    k = min(2, target.shape[0])
    dist, idx = tree.query(source, k=k)
    dist, idx = dist.reshape(source.shape[0], k), idx.reshape(source.shape[0], k)
    out = _squared(source, target[idx[:, 0]])
    if k == 1:
        return out
    ties = np.flatnonzero(dist[:, 1] <= dist[:, 0] * (1.0 + TIE_SLACK) + 1e-12)
    if ties.size:
        radii = dist[ties, 0] * (1.0 + TIE_SLACK) + 1e-12
        for i, candidates in zip(ties, tree.query_ball_point(source[ties], radii)):
            out[i] = np.min(_squared(source[i], target[candidates]))
    return out


def chamfer(x, y, tree_x: Optional[cKDTree] = None, tree_y: Optional[cKDTree] = None) -> float:
    """
    CD(X, Y) = sum_x min_y ||x - y||² + sum_y min_x ||x - y||².

    Raises:
        MetricInputError: either cloud is empty or not (N, 3).
    """
    x, y = _as_cloud(x, "X"), _as_cloud(y, "Y")
    tree_x = tree_x if tree_x is not None else cKDTree(x)
    tree_y = tree_y if tree_y is not None else cKDTree(y)
    return math.fsum(nearest_squared(x, tree_y, y)) + math.fsum(nearest_squared(y, tree_x, x))


def chamfer_bruteforce(x, y) -> float:
    """O(N·M) reference implementation of chamfer."""
    x, y = _as_cloud(x, "X"), _as_cloud(y, "Y")
    d = _squared(x[:, None, :], y[None, :, :])
    return math.fsum(d.min(axis=1)) + math.fsum(d.min(axis=0))


def pairwise_chamfer(generated: Sequence, reference: Sequence, workers: int = 1) -> np.ndarray:
    """(|S_g|, |S_r|) Chamfer matrix; rows are computed in parallel threads."""
    gen = [_as_cloud(c, f"S_g[{i}]") for i, c in enumerate(generated)]
    ref = [_as_cloud(c, f"S_r[{j}]") for j, c in enumerate(reference)]
    if not gen or not ref:
        raise MetricInputError("generated and reference sets must be non-empty")
    gen_trees = [cKDTree(c) for c in gen]
    ref_trees = [cKDTree(c) for c in ref]

    def row(i: int) -> List[float]:
        return [chamfer(gen[i], ref[j], gen_trees[i], ref_trees[j]) for j in range(len(ref))]

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return np.array(list(pool.map(row, range(len(gen)))), dtype=np.float64)


# ============================================================================
# SET METRICS
# ============================================================================

def _check_matrix(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or 0 in matrix.shape:
        raise MetricInputError(f"distance matrix must be non-empty 2D, got shape {matrix.shape}")
    return matrix


def coverage_from_matrix(matrix: np.ndarray) -> float:
    """Percent of references that are the nearest reference of some generated shape.
    np.argmin keeps the lowest index among ties."""
    matrix = _check_matrix(matrix)
    matched = np.unique(np.argmin(matrix, axis=1))
    return 100.0 * matched.size / matrix.shape[1]


def mmd_from_matrix(matrix: np.ndarray) -> float:
    """Mean over references of the Chamfer distance to the closest generated shape."""
    matrix = _check_matrix(matrix)
    return math.fsum(matrix.min(axis=0)) / matrix.shape[1]


def coverage(generated: Sequence, reference: Sequence, workers: int = 1) -> float:
    return coverage_from_matrix(pairwise_chamfer(generated, reference, workers))


def mmd(generated: Sequence, reference: Sequence, workers: int = 1) -> float:
    return mmd_from_matrix(pairwise_chamfer(generated, reference, workers))


def coverage_bruteforce(generated: Sequence, reference: Sequence) -> float:
    if not generated or not reference:
        raise MetricInputError("generated and reference sets must be non-empty")
    matched = set()
    for x in generated:
        best, best_j = math.inf, -1
        for j, y in enumerate(reference):
            d = chamfer_bruteforce(x, y)
            if d < best:
                best, best_j = d, j
        matched.add(best_j)
    return 100.0 * len(matched) / len(reference)


def mmd_bruteforce(generated: Sequence, reference: Sequence) -> float:
    if not generated or not reference:
        raise MetricInputError("generated and reference sets must be non-empty")
    mins = [min(chamfer_bruteforce(x, y) for x in generated) for y in reference]
    return math.fsum(mins) / len(reference)


# ============================================================================
# NORMALIZATION AND SUMMARY
# ============================================================================

def normalize_cloud(points) -> np.ndarray:
    """
    Center on the centroid and scale uniformly so the largest coordinate magnitude is 1.

    Raises:
        MetricInputError: all points coincide.
    """
    cloud = _as_cloud(points, "cloud")
    centered = cloud - cloud.mean(axis=0)
    extent = float(np.max(np.abs(centered)))
    if extent == 0.0:
        raise MetricInputError("cannot normalize a cloud with zero extent")
    return centered / extent


@dataclass
class SetMetrics:
    cov_percent: float
    mmd: float
    generated: int
    reference: int

    @property
    def mmd_permille(self) -> float:
        return 1000.0 * self.mmd

    def to_dict(self) -> Dict:
        out = asdict(self)
        out["mmd_permille"] = self.mmd_permille
        return out


def evaluate_sets(generated: Sequence, reference: Sequence, workers: int = 1,
                  normalize: bool = True) -> SetMetrics:
    """COV and MMD of a generated set against a reference set from one Chamfer matrix."""
    if normalize:
        generated = [normalize_cloud(c) for c in generated]
        reference = [normalize_cloud(c) for c in reference]
    matrix = pairwise_chamfer(generated, reference, workers)
    result = SetMetrics(coverage_from_matrix(matrix), mmd_from_matrix(matrix),
                        len(generated), len(reference))
    logger.info(f"[STATS] COV={result.cov_percent:.2f}% MMD={result.mmd_permille:.3f}‰ "
                f"({result.generated} generated vs {result.reference} reference)")
    return result
