# synth_data/mock_objects.py
"""
Analytic primitives that stand in for scanned objects.
Each object knows how to intersect rays, test occupancy and color its surface,
all in closed form.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from synth_data.constants import (
    CHECKER_SCALE_RANGE,
    CLASS_LABELS,
    COLOR_MODES,
    PALETTE,
    PRIMITIVE_KINDS,
    ROOT_IMAG_TOLERANCE,
    SIZE_RANGES,
)
from synth_data.utils import random_rotation, solve_quartics

logger = logging.getLogger(__name__)


@dataclass
class SyntheticObject:
    """A primitive with a rotation and a procedural color; kind doubles as class."""
    object_id: str
    kind: str
    params: Dict[str, float]
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    color: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PRIMITIVE_KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)

    @property
    def class_label(self) -> int:
        return CLASS_LABELS[self.kind]

    def to_dict(self) -> Dict:
        return {
            "object_id": self.object_id,
            "kind": self.kind,
            "class_label": self.class_label,
            "params": {k: float(v) for k, v in self.params.items()},
            "rotation": self.rotation.tolist(),
            "color": self.color,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SyntheticObject":
        return cls(data["object_id"], data["kind"], dict(data["params"]),
                   np.array(data["rotation"], dtype=np.float64), dict(data.get("color", {})))

    # ------------------------------------------------------------------
    # Frames
    # ------------------------------------------------------------------
    def to_local(self, points: np.ndarray) -> np.ndarray:
        # Row vectors: local = R^T p  <=>  p @ R
        return np.asarray(points, dtype=np.float64) @ self.rotation

    def bounding_radius(self) -> float:
        p = self.params
        if self.kind == "sphere":
            return p["radius"]
        if self.kind == "box":
            return math.sqrt(p["half_x"] ** 2 + p["half_y"] ** 2 + p["half_z"] ** 2)
        if self.kind == "torus":
            return p["major"] + p["minor"]
        return p["half_length"] + p["radius"]

    # ------------------------------------------------------------------
    # Geometry
    # ------------------------------------------------------------------
    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        First positive hit distance along unit-direction rays.

        Returns:
            (t, hit): t is +inf where hit is False.
        """
        o = self.to_local(origins)
        d = self.to_local(directions)
        t = {
            "sphere": self._intersect_sphere,
            "box": self._intersect_box,
            "torus": self._intersect_torus,
            "capsule": self._intersect_capsule,
        }[self.kind](o, d)
        hit = np.isfinite(t)
        return t, hit

    def _intersect_sphere(self, o, d, radius: Optional[float] = None, center=None) -> np.ndarray:
        r = self.params["radius"] if radius is None else radius
        oc = o if center is None else o - center
        b = np.sum(oc * d, axis=1)
        c = np.sum(oc * oc, axis=1) - r * r
        disc = b * b - c
        t = np.full(o.shape[0], np.inf)
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t_near = -b - sq
        t_far = -b + sq
        t = np.where(ok & (t_near > 0), t_near, t)
        t = np.where(ok & (t_near <= 0) & (t_far > 0), t_far, t)
        return t

    def _intersect_box(self, o, d) -> np.ndarray:
        half = np.array([self.params["half_x"], self.params["half_y"], self.params["half_z"]])
        safe = np.where(np.abs(d) < 1e-12, np.where(d < 0, -1e-12, 1e-12), d)
        t0 = (-half - o) / safe
        t1 = (half - o) / safe
        t_enter = np.max(np.minimum(t0, t1), axis=1)
        t_exit = np.min(np.maximum(t0, t1), axis=1)
        ok = (t_exit >= t_enter) & (t_exit > 0)
        return np.where(ok, np.where(t_enter > 0, t_enter, t_exit), np.inf)

    def _intersect_capsule(self, o, d) -> np.ndarray:
        r = self.params["radius"]
        h = self.params["half_length"]
        # Side: infinite cylinder around y, restricted to |y| <= h.
        a = d[:, 0] ** 2 + d[:, 2] ** 2
        b = o[:, 0] * d[:, 0] + o[:, 2] * d[:, 2]
        c = o[:, 0] ** 2 + o[:, 2] ** 2 - r * r
        disc = b * b - a * c
        ok = (disc >= 0) & (a > 1e-12)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t_side = np.where(ok, (-b - sq) / np.where(a > 1e-12, a, 1.0), np.inf)
        y_side = o[:, 1] + t_side * d[:, 1]
        t_side = np.where(ok & (t_side > 0) & (np.abs(y_side) <= h), t_side, np.inf)

        t_top = self._intersect_sphere(o, d, r, np.array([0.0, h, 0.0]))
        t_bottom = self._intersect_sphere(o, d, r, np.array([0.0, -h, 0.0]))
        return np.minimum(t_side, np.minimum(t_top, t_bottom))

    def _intersect_torus(self, o, d) -> np.ndarray:
        big = self.params["major"]
        small = self.params["minor"]
        t = np.full(o.shape[0], np.inf)

        # Only rays that reach the bounding sphere need the quartic.
        candidates = np.isfinite(self._intersect_sphere(o, d, big + small)) | \
            (np.linalg.norm(o, axis=1) < big + small)
        idx = np.flatnonzero(candidates)
        if idx.size == 0:
            return t
        oc, dc = o[idx], d[idx]

        g = np.sum(oc * oc, axis=1) + big * big - small * small
        h = np.sum(oc * dc, axis=1)
        a2 = dc[:, 0] ** 2 + dc[:, 2] ** 2
        a1 = 2.0 * (oc[:, 0] * dc[:, 0] + oc[:, 2] * dc[:, 2])
        a0 = oc[:, 0] ** 2 + oc[:, 2] ** 2
        four_r2 = 4.0 * big * big
        coeffs = np.stack([
            4.0 * h,
            4.0 * h * h + 2.0 * g - four_r2 * a2,
            4.0 * h * g - four_r2 * a1,
            g * g - four_r2 * a0,
        ], axis=1)
        roots = solve_quartics(coeffs)

        scale = np.maximum(1.0, np.abs(roots.real))
        real = np.abs(roots.imag) <= ROOT_IMAG_TOLERANCE * scale
        candidates_t = np.where(real & (roots.real > 1e-9), roots.real, np.inf)
        best = np.min(candidates_t, axis=1)

        # Two Newton steps polish the eigenvalue roots.
        finite = np.isfinite(best)
        x = best[finite]
        c = coeffs[finite]
        for _ in range(2):
            f = (((x + c[:, 0]) * x + c[:, 1]) * x + c[:, 2]) * x + c[:, 3]
            df = ((4.0 * x + 3.0 * c[:, 0]) * x + 2.0 * c[:, 1]) * x + c[:, 2]
            step = np.where(np.abs(df) > 1e-12, f / np.where(np.abs(df) > 1e-12, df, 1.0), 0.0)
            x = x - step
        best[finite] = x
        t[idx] = best
        return t

    def occupancy(self, points: np.ndarray) -> np.ndarray:
        """Boolean inside-test for world points (N, 3)."""
        p = self.to_local(points)
        prm = self.params
        if self.kind == "sphere":
            return np.sum(p * p, axis=1) <= prm["radius"] ** 2
        if self.kind == "box":
            half = np.array([prm["half_x"], prm["half_y"], prm["half_z"]])
            return np.all(np.abs(p) <= half, axis=1)
        if self.kind == "torus":
            ring = np.sqrt(p[:, 0] ** 2 + p[:, 2] ** 2) - prm["major"]
            return ring ** 2 + p[:, 1] ** 2 <= prm["minor"] ** 2
        y = np.clip(p[:, 1], -prm["half_length"], prm["half_length"])
        dist2 = p[:, 0] ** 2 + (p[:, 1] - y) ** 2 + p[:, 2] ** 2
        return dist2 <= prm["radius"] ** 2

    # ------------------------------------------------------------------
    # Appearance
    # ------------------------------------------------------------------
    def surface_color(self, points: np.ndarray) -> np.ndarray:
        """Procedural RGB in [0, 1] at world points (N, 3)."""
        p = self.to_local(points)
        c0 = np.asarray(self.color.get("primary", PALETTE[0]), dtype=np.float64)
        c1 = np.asarray(self.color.get("secondary", PALETTE[1]), dtype=np.float64)
        if self.color.get("mode", "gradient") == "checker":
            s = float(self.color.get("scale", 0.1))
            cells = np.floor(p / s).astype(np.int64).sum(axis=1)
            pick = (cells % 2 == 0)[:, None]
            return np.where(pick, c0, c1)
        axis = int(self.color.get("axis", 1))
        extent = max(self.bounding_radius(), 1e-6)
        w = np.clip((p[:, axis] + extent) / (2.0 * extent), 0.0, 1.0)[:, None]
        return (1.0 - w) * c0 + w * c1


class MockObjectFactory:
    """Draws random primitives with procedural colors from a seeded generator."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        logger.debug("MockObjectFactory initialized")

    def make_object(self, object_id: str, kind: str) -> SyntheticObject:
        ranges = SIZE_RANGES[kind]
        params = {name: float(self.rng.uniform(lo, hi)) for name, (lo, hi) in ranges.items()}
        rotation = random_rotation(self.rng)
        first, second = self.rng.choice(len(PALETTE), size=2, replace=False)
        mode = COLOR_MODES[int(self.rng.integers(0, len(COLOR_MODES)))]
        color = {"mode": mode, "primary": list(PALETTE[first]), "secondary": list(PALETTE[second])}
        if mode == "checker":
            color["scale"] = float(self.rng.uniform(*CHECKER_SCALE_RANGE))
        else:
            color["axis"] = int(self.rng.integers(0, 3))
        return SyntheticObject(object_id, kind, params, rotation, color)

    def make_objects(self, count: int, kinds=PRIMITIVE_KINDS) -> List[SyntheticObject]:
        """Class-balanced: object i has kind kinds[i % len(kinds)]."""
        return [self.make_object(f"obj_{i:03d}", kinds[i % len(kinds)]) for i in range(count)]
