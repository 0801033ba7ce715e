"""
Constants for triplanes and rendering.
Plane naming, coordinate conventions and numeric floors shared by the
representation, renderer and fitter.
"""

from typing import Tuple

# ============================================================================
# PLANES
# ============================================================================

# World axes feeding the (W, H) lookup of the xy, yz and xz planes.
PLANE_AXES: Tuple[Tuple[int, int], ...] = ((0, 1), (1, 2), (0, 2))

NUM_PLANES = 3

# ============================================================================
# NORMALIZATION
# ============================================================================

STD_FLOOR = 1e-6
DEFAULT_CLAMP = 3.0

# ============================================================================
# RENDERING
# ============================================================================

CUBE_MIN = -1.0
CUBE_MAX = 1.0
DEFAULT_RENDER_CHUNK = 4096

# Ray direction components below this magnitude are nudged to avoid 0 * inf in the slab test.
MIN_DIRECTION_COMPONENT = 1e-12

# ============================================================================
# FILES
# ============================================================================

TRIPLANE_SUFFIX = ".dtf"
SIDECAR_SUFFIX = ".json"
NORM_STATS_FILE = "norm_stats.dtf"
DECODER_DIR = "decoder"
