"""Surface extraction and point-cloud generation metrics."""

from evaluation.extraction import (
    PointCloud,
    density_threshold,
    extract_point_cloud,
    occupancy_density_fn,
    triplane_density_fn,
)
from evaluation.metrics import (
    SetMetrics,
    chamfer,
    chamfer_bruteforce,
    coverage,
    coverage_bruteforce,
    evaluate_sets,
    mmd,
    mmd_bruteforce,
    normalize_cloud,
    pairwise_chamfer,
)
