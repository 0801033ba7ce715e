# storage.py: Triplane, normalization-statistics and decoder files.
# A triplane file is one DTF0 tensor laid out C x W x 3H (planes concatenated
# along height, xy|yz|xz) plus a JSON sidecar with its metadata.

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from autodiff.rng import make_rng
from autodiff.snapshot import load_named_tensors, load_tensor, save_named_tensors, save_tensor
from core.errors import MissingArtifactError, SnapshotFormatError
from triplane.constants import NORM_STATS_FILE, SIDECAR_SUFFIX, TRIPLANE_SUFFIX
from triplane.decoder import SharedDecoder
from triplane.representation import NormStats, Triplane

logger = logging.getLogger(__name__)


def planes_to_layout(planes: np.ndarray) -> np.ndarray:
    """(3, C, W, H) -> (C, W, 3H)."""
    return np.concatenate([planes[0], planes[1], planes[2]], axis=-1)


def layout_to_planes(layout: np.ndarray) -> np.ndarray:
    """(C, W, 3H) -> (3, C, W, H)."""
    if layout.ndim != 3 or layout.shape[-1] % 3:
        raise SnapshotFormatError(f"triplane layout must be C x W x 3H, got {layout.shape}")
    return np.stack(np.split(layout, 3, axis=-1))


def save_triplane(directory, tri: Triplane, normalized: bool = False,
                  stats_ref: Optional[str] = None) -> Path:
    directory = Path(directory)
    name = tri.object_id or "triplane"
    path = save_tensor(directory / f"{name}{TRIPLANE_SUFFIX}", planes_to_layout(tri.planes))
    sidecar = {
        "object_id": tri.object_id,
        "class_label": int(tri.class_label),
        "channels": tri.channels,
        "width": tri.width,
        "height": tri.height,
        "normalized": bool(normalized),
        "norm_stats": stats_ref,
    }
    (directory / f"{name}{SIDECAR_SUFFIX}").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_triplane(path) -> Tuple[Triplane, Dict]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, "triplane file")
    planes = layout_to_planes(load_tensor(path))
    sidecar_path = path.with_suffix(SIDECAR_SUFFIX)
    meta = json.loads(sidecar_path.read_text(encoding="utf-8")) if sidecar_path.exists() else {}
    tri = Triplane(planes, meta.get("object_id", path.stem), int(meta.get("class_label", -1)))
    return tri, meta


def list_triplanes(directory) -> List[Path]:
    directory = Path(directory)
    return sorted(directory.glob(f"*{TRIPLANE_SUFFIX}"))


def load_triplane_dir(directory) -> List[Triplane]:
    paths = list_triplanes(directory)
    if not paths:
        raise MissingArtifactError(Path(directory) / f"*{TRIPLANE_SUFFIX}", "run `fit` first")
    return [load_triplane(p)[0] for p in paths]


# ============================================================================
# NORMALIZATION STATISTICS
# ============================================================================

def save_norm_stats(directory, stats: NormStats) -> Path:
    directory = Path(directory)
    path = save_tensor(directory / NORM_STATS_FILE, np.stack([stats.mean, stats.std]))
    meta = {"clamp": stats.clamp}
    path.with_suffix(SIDECAR_SUFFIX).write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")
    return path


def load_norm_stats(directory) -> NormStats:
    path = Path(directory) / NORM_STATS_FILE
    if not path.exists():
        raise MissingArtifactError(path, "run `fit` first")
    values = load_tensor(path)
    meta_path = path.with_suffix(SIDECAR_SUFFIX)
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return NormStats(values[0], values[1], meta.get("clamp"))


# ============================================================================
# DECODER
# ============================================================================

def save_decoder(directory, decoder: SharedDecoder) -> Path:
    return save_named_tensors(directory, decoder.state_dict(), {"decoder": decoder.config()})


def load_decoder(directory) -> SharedDecoder:
    directory = Path(directory)
    if not (directory / "manifest.json").exists():
        raise MissingArtifactError(directory / "manifest.json", "shared decoder checkpoint")
    tensors, meta = load_named_tensors(directory)
    cfg = meta["decoder"]
    decoder = SharedDecoder(cfg["channels"], make_rng(0, "decoder-load"),
                            pe_frequencies=cfg["pe_frequencies"], hidden=cfg["hidden"],
                            depth=cfg["depth"])
    decoder.load_state_dict(tensors)
    logger.info(f"[OK] Loaded shared decoder from {directory}")
    return decoder
