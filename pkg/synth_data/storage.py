# storage.py: Saves and loads multi-view datasets (manifest + PNG rasters).
# Layout: <root>/manifest.json and <root>/images/<object_id>/<view>.png

import io
import json
import logging
from pathlib import Path
from typing import Dict

import numpy as np
from PIL import Image, UnidentifiedImageError

from core.errors import DatasetFormatError, MissingArtifactError
from synth_data.constants import FORMAT_VERSION, IMAGE_SUFFIX, IMAGES_DIR, MANIFEST_NAME
from synth_data.external import validate_manifest
from synth_data.mock_objects import SyntheticObject
from synth_data.oracle_renderer import MultiViewDataset, ObjectViews, View
from synth_data.utils import sha256_bytes
from triplane.renderer import Camera

logger = logging.getLogger(__name__)


def encode_png(image: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(buffer, format="PNG")
    return buffer.getvalue()


def decode_png(payload: bytes, source: str) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(payload)) as img:
            img.load()
            return np.array(img.convert("RGBA"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DatasetFormatError(f"{source}: unreadable image ({exc})")


def save_dataset(dataset: MultiViewDataset, path) -> Path:
    """
    Write every view as a PNG and a manifest listing objects, cameras and image hashes.

    Returns:
        Path: The manifest path.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    objects = []
    for entry in dataset.objects:
        views = []
        for k, view in enumerate(entry.views):
            rel = f"{IMAGES_DIR}/{entry.object_id}/{k:03d}{IMAGE_SUFFIX}"
            payload = encode_png(view.image)
            (root / rel).parent.mkdir(parents=True, exist_ok=True)
            (root / rel).write_bytes(payload)
            views.append({"image": rel, "sha256": sha256_bytes(payload), "camera": view.camera.to_dict()})
        record = entry.obj.to_dict()
        record.update({"split": entry.split, "views": views})
        objects.append(record)

    manifest = {
        "format_version": FORMAT_VERSION,
        "seed": dataset.seed,
        "classes": list(dataset.classes),
        "objects": objects,
    }
    manifest_path = root / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    logger.info(f"[FILE] Saved dataset: {len(objects)} objects to {root}")
    return manifest_path


def load_dataset(path) -> MultiViewDataset:
    """
    Read a dataset written by save_dataset.

    Raises:
        MissingArtifactError: no manifest at path.
        DatasetFormatError: corrupt manifest, missing/truncated image or hash mismatch.
    """
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise MissingArtifactError(manifest_path, "run `gen-data` first")
    try:
        manifest: Dict = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{manifest_path}: corrupt manifest ({exc})")
    validate_manifest(manifest)

    entries = []
    for record in manifest["objects"]:
        try:
            obj = SyntheticObject.from_dict(record)
        except (KeyError, ValueError) as exc:
            raise DatasetFormatError(f"object {record.get('object_id')}: {exc}")
        views = []
        for view in record["views"]:
            image_path = root / view["image"]
            if not image_path.exists():
                raise DatasetFormatError(f"{image_path}: listed in manifest but missing")
            payload = image_path.read_bytes()
            if sha256_bytes(payload) != view["sha256"]:
                raise DatasetFormatError(f"{image_path}: content does not match manifest hash")
            try:
                camera = Camera.from_dict(view["camera"])
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(f"object {record.get('object_id')}: bad camera for {view['image']} ({exc})")
            image = decode_png(payload, str(image_path))
            if image.shape != (camera.resolution, camera.resolution, 4):
                raise DatasetFormatError(f"{image_path}: shape {image.shape} != camera resolution")
            views.append(View(camera, image))
        entries.append(ObjectViews(obj, views, record.get("split", "train")))

    logger.info(f"[OK] Loaded dataset with {len(entries)} objects from {root}")
    return MultiViewDataset(entries, seed=int(manifest.get("seed", 0)),
                            classes=tuple(manifest.get("classes", ())))
