"""Triplane representation, shared decoder, volume renderer and fitter."""

from triplane.decoder import SharedDecoder, create_shared_decoder, decode
from triplane.fitter import (
    FitLossTerms,
    FitReport,
    TriplaneFitter,
    create_triplane_fitter,
    fit_loss,
    psnr_foreground,
    sample_training_pixels,
    tv_loss,
)
from triplane.renderer import (
    Camera,
    RayBundle,
    composite,
    generate_rays,
    render_image,
    render_rays,
    render_view,
    sample_along_ray,
)
from triplane.representation import (
    NormStats,
    Triplane,
    compute_norm_stats,
    denormalize,
    normalize,
    positional_encoding,
    query_features,
)
