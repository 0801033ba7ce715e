"""
Constants for the synthetic object system.
Primitive kinds, parameter ranges, palettes and dataset layout in one place.
"""

from typing import Dict, List, Tuple

# ============================================================================
# PRIMITIVES (kind doubles as class label)
# ============================================================================

PRIMITIVE_KINDS: Tuple[str, ...] = ("sphere", "box", "torus", "capsule")

CLASS_LABELS: Dict[str, int] = {kind: i for i, kind in enumerate(PRIMITIVE_KINDS)}

# Parameter ranges (uniform draws). Bounding radii stay below 0.6 so objects sit
# inside the [-0.8, 0.8]^3 sub-cube under any rotation.
SIZE_RANGES: Dict[str, Dict[str, Tuple[float, float]]] = {
    "sphere": {"radius": (0.30, 0.45)},
    "box": {"half_x": (0.18, 0.30), "half_y": (0.18, 0.30), "half_z": (0.18, 0.30)},
    "torus": {"major": (0.25, 0.32), "minor": (0.07, 0.12)},
    "capsule": {"radius": (0.12, 0.20), "half_length": (0.12, 0.25)},
}

# ============================================================================
# COLORS
# ============================================================================

COLOR_MODES: Tuple[str, ...] = ("gradient", "checker")

PALETTE: List[Tuple[float, float, float]] = [
    (0.90, 0.30, 0.25),
    (0.20, 0.55, 0.90),
    (0.95, 0.80, 0.20),
    (0.30, 0.80, 0.40),
    (0.70, 0.35, 0.85),
    (0.95, 0.55, 0.15),
    (0.85, 0.85, 0.85),
    (0.25, 0.25, 0.30),
]

CHECKER_SCALE_RANGE = (0.08, 0.16)

# ============================================================================
# CAMERAS AND FILES
# ============================================================================

DEFAULT_RESOLUTION = 64
DEFAULT_FOV_DEGREES = 40.0
DEFAULT_CAMERA_RADIUS = 1.2
DEFAULT_VIEWS = 24

MANIFEST_NAME = "manifest.json"
IMAGES_DIR = "images"
IMAGE_SUFFIX = ".png"
FORMAT_VERSION = 1

# Relative tolerance for the torus quartic's imaginary parts.
ROOT_IMAG_TOLERANCE = 1e-4
