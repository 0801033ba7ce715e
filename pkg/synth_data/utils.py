"""
Utility functions for synthetic data.
Rotations, viewpoint lattices, image conversion and hashing shared by the
object generator, the oracle renderer and dataset storage.
"""

import hashlib
import math

import numpy as np


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """
    Rodrigues rotation matrix.

    Args:
        axis: 3-vector (normalized here)
        angle: Radians

    Returns:
        3x3 orthonormal matrix
    """
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    axis = rng.normal(size=3)
    while np.linalg.norm(axis) < 1e-8:
        axis = rng.normal(size=3)
    return rotation_about_axis(axis, float(rng.uniform(0.0, 2.0 * math.pi)))


def fibonacci_sphere(count: int, radius: float = 1.0) -> np.ndarray:
    """Quasi-uniform points on a sphere (golden-angle spiral), shape (count, 3)."""
    if count < 1:
        raise ValueError("need at least one viewpoint")
    i = np.arange(count, dtype=np.float64)
    y = 1.0 - 2.0 * (i + 0.5) / count
    ring = np.sqrt(np.maximum(0.0, 1.0 - y * y))
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    return radius * np.stack([ring * np.cos(phi), y, ring * np.sin(phi)], axis=1)


def to_uint8(values: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> uint8 with round-half-up."""
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def sha256_bytes(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def solve_quartics(coeffs: np.ndarray) -> np.ndarray:
    """
    All complex roots of monic quartics t^4 + c1 t^3 + c2 t^2 + c3 t + c4.

    Args:
        coeffs: (N, 4) array of [c1, c2, c3, c4]

    Returns:
        (N, 4) complex roots (eigenvalues of the stacked companion matrices)
    """
    n = coeffs.shape[0]
    companion = np.zeros((n, 4, 4))
    companion[:, 0, :] = -coeffs
    companion[:, 1, 0] = 1.0
    companion[:, 2, 1] = 1.0
    companion[:, 3, 2] = 1.0
    if n == 0:
        return np.zeros((0, 4), dtype=np.complex128)
    return np.linalg.eigvals(companion)
