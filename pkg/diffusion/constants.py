"""
Constants for the denoiser and the diffusion engine.
"""

from typing import Tuple

# ============================================================================
# TRIPLANE LAYOUT
# ============================================================================

NUM_PLANES = 3

# ============================================================================
# EMBEDDINGS
# ============================================================================

MAX_PERIOD = 10000.0
POS_EMBED_STD = 0.02
CLASS_EMBED_STD = 0.02

# (shift, scale, gate) per modulated residual site
MODULATION_CHUNKS = 3
CP_BLOCK_SITES = 5   # left attn, left mlp, right self, right cross, right mlp
ORI_BLOCK_SITES = 2  # attn, mlp
FINAL_SITE_CHUNKS = 2  # shift, scale

# ============================================================================
# SAMPLING
# ============================================================================

SAMPLERS: Tuple[str, ...] = ("ddpm", "ddim")
SLERP_LINEAR_THRESHOLD = 1e-4

# ============================================================================
# FILES
# ============================================================================

CHECKPOINT_PREFIX = "step_"
LATEST_CHECKPOINT = "latest"
MODEL_DIR = "model"
OPTIMIZER_DIR = "optimizer"
CHECKPOINT_FORMAT = "difftf-denoiser-v1"
