"""
Volume renderer
===============

Responsibility: Cameras, ray generation, stratified sampling and transmittance
compositing of triplane fields into color and foreground mask.

Camera convention: the camera looks along its local -z axis with x to the right
and y up; pixel (row, col) is sampled at its center.

The renderer holds no state. `render_rays` accepts any field function
(points, dirs) -> (colors, densities), so analytic fields and triplane+decoder
pairs go through the same compositing code.
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from autodiff import ops
from autodiff.tensor import Tensor, no_grad
from triplane.constants import (
    CUBE_MAX,
    CUBE_MIN,
    DEFAULT_RENDER_CHUNK,
    MIN_DIRECTION_COMPONENT,
)
from triplane.decoder import SharedDecoder, decode
from triplane.representation import PlaneSource

FieldFn = Callable[[np.ndarray, np.ndarray], Tuple[Tensor, Tensor]]


# ============================================================================
# CAMERAS AND RAYS
# ============================================================================

@dataclass
class Camera:
    """World-from-camera pose [R | t] (3 x 4), vertical fov in radians, square resolution."""
    pose: np.ndarray
    fov: float
    resolution: int

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64).reshape(3, 4)
        r = self.rotation
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6):
            raise ValueError("camera rotation is not orthonormal")

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:, :3]

    @property
    def position(self) -> np.ndarray:
        return self.pose[:, 3]

    @property
    def focal(self) -> float:
        return 0.5 * self.resolution / math.tan(0.5 * self.fov)

    @classmethod
    def look_at(cls, position, fov: float, resolution: int,
                target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> "Camera":
        position = np.asarray(position, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - position
        forward /= np.linalg.norm(forward)
        up = np.asarray(up, dtype=np.float64)
        if abs(np.dot(forward, up)) > 1.0 - 1e-6:
            # Looking straight along `up`: pick any perpendicular reference.
            up = np.array([0.0, 0.0, 1.0]) if abs(forward[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        right = np.cross(forward, up)
        right /= np.linalg.norm(right)
        true_up = np.cross(right, forward)
        rotation = np.stack([right, true_up, -forward], axis=1)
        return cls(np.concatenate([rotation, position[:, None]], axis=1), fov, resolution)

    def to_dict(self) -> Dict:
        return {"pose": self.pose.tolist(), "fov": float(self.fov), "resolution": int(self.resolution)}

    @classmethod
    def from_dict(cls, data: Dict) -> "Camera":
        return cls(np.array(data["pose"], dtype=np.float64), float(data["fov"]), int(data["resolution"]))


@dataclass
class RayBundle:
    origins: np.ndarray
    directions: np.ndarray
    near: np.ndarray
    far: np.ndarray
    hit: np.ndarray

    def __len__(self) -> int:
        return self.origins.shape[0]


def intersect_cube(origins: np.ndarray, directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slab test against [-1, 1]^3; a ray hits when far > near (near clamped at 0)."""
    d = np.where(np.abs(directions) < MIN_DIRECTION_COMPONENT,
                 np.where(directions < 0, -MIN_DIRECTION_COMPONENT, MIN_DIRECTION_COMPONENT),
                 directions)
    t0 = (CUBE_MIN - origins) / d
    t1 = (CUBE_MAX - origins) / d
    near = np.maximum(np.max(np.minimum(t0, t1), axis=1), 0.0)
    far = np.min(np.maximum(t0, t1), axis=1)
    hit = far > near
    return near, far, hit


def generate_rays(cam: Camera, pixels) -> RayBundle:
    """
    Rays through flat pixel indices (row * resolution + col).

    Missed rays keep a unit-length dummy interval so sampling stays valid; callers
    zero their density through `hit`.
    """
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1)
    res = cam.resolution
    if pixels.size and (pixels.min() < 0 or pixels.max() >= res * res):
        raise ValueError(f"pixel index outside a {res}x{res} image")
    rows, cols = np.divmod(pixels, res)
    x = (cols + 0.5 - 0.5 * res) / cam.focal
    y = -(rows + 0.5 - 0.5 * res) / cam.focal
    local = np.stack([x, y, -np.ones_like(x)], axis=1)
    directions = local @ cam.rotation.T
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    origins = np.broadcast_to(cam.position, directions.shape).copy()

    near, far, hit = intersect_cube(origins, directions)
    near = np.where(hit, near, 0.0)
    far = np.where(hit, far, 1.0)
    return RayBundle(origins, directions, near, far, hit)


# ============================================================================
# SAMPLING AND COMPOSITING
# ============================================================================

def sample_along_ray(near, far, n: int, stratified: bool = False,
                     rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Depths of n samples per ray and their intervals.

    Each ray's [near, far] is split into n equal bins; samples sit at bin centers or,
    when stratified, at one uniform draw per bin. delta_i = t_{i+1} - t_i and the
    last interval is (far - near) / n.

    Returns:
        (t, deltas): both (R, n)
    """
    if n < 1:
        raise ValueError("need at least one sample per ray")
    near = np.atleast_1d(np.asarray(near, dtype=np.float64))
    far = np.atleast_1d(np.asarray(far, dtype=np.float64))
    if np.any(far <= near):
        raise ValueError("every ray needs far > near")
    width = (far - near)[:, None] / n
    lower = near[:, None] + width * np.arange(n)[None, :]
    if stratified:
        if rng is None:
            raise ValueError("stratified sampling needs an rng")
        offsets = rng.random((near.shape[0], n))
    else:
        offsets = np.full((near.shape[0], n), 0.5)
    t = lower + width * offsets
    deltas = np.concatenate([np.diff(t, axis=1), width], axis=1)
    return t, deltas


def composite(sigmas, colors, deltas) -> Tuple[Tensor, Tensor]:
    """
    Alpha compositing against a black background.

    Args:
        sigmas: (R, S) densities.
        colors: (R, S, 3) colors.
        deltas: (R, S) intervals.

    Returns:
        (rgb (R, 3), mask (R,))
    """
    weights = compositing_weights(sigmas, deltas)
    # Totals are the last running sum, so zero-weight samples change nothing bit-for-bit.
    mask = ops.cumsum(weights, axis=1)[:, -1]
    weighted = ops.mul(ops.reshape(weights, weights.shape + (1,)), colors)
    rgb = ops.cumsum(weighted, axis=1)[:, -1, :]
    return rgb, mask


def compositing_weights(sigmas, deltas) -> Tensor:
    """T_i (1 - exp(-sigma_i delta_i))."""
    optical = ops.mul(sigmas, Tensor(np.asarray(deltas)))
    alpha = ops.sub(1.0, ops.exp(ops.neg(optical)))
    transmittance = ops.exp(ops.neg(ops.cumsum(optical, axis=1, exclusive=True)))
    return ops.mul(transmittance, alpha)


def render_rays(field_fn: FieldFn, bundle: RayBundle, n_samples: int, stratified: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Tensor]:
    """Sample, evaluate the field and composite; missed rays return zeros."""
    t, deltas = sample_along_ray(bundle.near, bundle.far, n_samples, stratified, rng)
    rays = len(bundle)
    positions = bundle.origins[:, None, :] + t[..., None] * bundle.directions[:, None, :]
    dirs = np.broadcast_to(bundle.directions[:, None, :], positions.shape)

    colors, sigmas = field_fn(positions.reshape(-1, 3), dirs.reshape(-1, 3))
    sigmas = ops.reshape(sigmas, (rays, n_samples))
    sigmas = ops.mul(sigmas, Tensor(bundle.hit.astype(np.float64)[:, None]))
    colors = ops.reshape(colors, (rays, n_samples, 3))
    return composite(sigmas, colors, deltas)


def triplane_field(planes: PlaneSource, decoder: SharedDecoder) -> FieldFn:
    def field_fn(points, dirs):
        return decode(decoder, planes, points, dirs)
    return field_fn


def render_view(planes: PlaneSource, decoder: SharedDecoder, cam: Camera, pixels,
                n_samples: int, stratified: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Tensor]:
    """generate_rays -> sample_along_ray -> decode -> composite for a pixel batch."""
    bundle = generate_rays(cam, pixels)
    return render_rays(triplane_field(planes, decoder), bundle, n_samples, stratified, rng)


def render_image(planes: PlaneSource, decoder: SharedDecoder, cam: Camera, n_samples: int,
                 chunk: int = DEFAULT_RENDER_CHUNK) -> np.ndarray:
    """Full (res, res, 4) RGBA frame in [0, 1], rendered without recording a graph."""
    res = cam.resolution
    total = res * res
    out = np.zeros((total, 4), dtype=np.float32)
    with no_grad():
        for start in range(0, total, chunk):
            pixels = np.arange(start, min(start + chunk, total))
            rgb, mask = render_view(planes, decoder, cam, pixels, n_samples)
            out[pixels, :3] = rgb.data
            out[pixels, 3] = mask.data
    return out.reshape(res, res, 4)
