"""
Tensor snapshots
================

Responsibility: Read and write the binary tensor format used by every
checkpoint, plus named directories of tensors with a JSON manifest.

File layout (little-endian):
    b"DTF0" | u32 rank | rank x u32 extents | product(extents) x f32
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from core.errors import SnapshotFormatError

logger = logging.getLogger(__name__)

MAGIC = b"DTF0"
SNAPSHOT_SUFFIX = ".dtf"
MANIFEST_NAME = "manifest.json"


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    header = np.array([array.ndim, *array.shape], dtype="<u4").tobytes()
    return MAGIC + header + np.ascontiguousarray(array, dtype="<f4").tobytes()


def decode_tensor(payload: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(payload) < 8 or payload[:4] != MAGIC:
        raise SnapshotFormatError(f"{source}: missing DTF0 magic")
    rank = int(np.frombuffer(payload, dtype="<u4", count=1, offset=4)[0])
    header_end = 8 + 4 * rank
    if len(payload) < header_end:
        raise SnapshotFormatError(f"{source}: truncated header (rank {rank})")
    shape = tuple(int(e) for e in np.frombuffer(payload, dtype="<u4", count=rank, offset=8))
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expected = header_end + 4 * count
    if len(payload) != expected:
        raise SnapshotFormatError(
            f"{source}: expected {expected} bytes for shape {shape}, found {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4", count=count, offset=header_end)
    return data.astype(np.float32).reshape(shape)


def save_tensor(path, array: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensor(array))
    return path


def load_tensor(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise SnapshotFormatError(f"{path}: file not found")
    return decode_tensor(path.read_bytes(), source=str(path))


def save_named_tensors(directory, tensors: Dict[str, np.ndarray],
                       metadata: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write one snapshot per named tensor and a manifest listing names and shapes.

    Args:
        directory: Target directory (created if needed).
        tensors: Name -> array.
        metadata: Extra JSON-serializable fields stored in the manifest.

    Returns:
        Path: The manifest path.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in sorted(tensors):
        file_name = f"{name}{SNAPSHOT_SUFFIX}"
        save_tensor(directory / file_name, tensors[name])
        entries.append({"name": name, "file": file_name, "shape": list(np.shape(tensors[name]))})

    manifest = {"format": MAGIC.decode("ascii"), "tensors": entries, "metadata": metadata or {}}
    manifest_path = directory / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    logger.debug(f"[OK] Saved {len(entries)} tensors to {directory}")
    return manifest_path


def load_named_tensors(directory) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Inverse of save_named_tensors; returns (tensors, metadata)."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise SnapshotFormatError(f"{directory}: no {MANIFEST_NAME}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        entries = manifest["tensors"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise SnapshotFormatError(f"{manifest_path}: unreadable manifest ({exc})")

    tensors = {}
    for entry in entries:
        array = load_tensor(directory / entry["file"])
        if list(array.shape) != list(entry["shape"]):
            raise SnapshotFormatError(
                f"{entry['file']}: shape {array.shape} disagrees with manifest {entry['shape']}"
            )
        tensors[entry["name"]] = array
    return tensors, manifest.get("metadata", {})
