"""
Manifest schema for multi-view datasets.

Synthetic datasets are written by save_dataset. A converter for scanned or
rendered real datasets (ShapeNet, OmniObject3D style renders) would fill the
same manifest fields; only the analytic `params`/`rotation` entries are
specific to synthetic objects and are what evaluation uses for reference
shapes.

Manifest fields:
    format_version  int, currently 1
    seed            int, generator seed (0 for converted data)
    classes         list of class names, index = class label
    objects[]       object_id, kind, class_label, split, params, rotation, color,
                    views[]: image (relative path), sha256, camera {pose 3x4, fov, resolution}
"""

from typing import Dict

from core.errors import DatasetFormatError

REQUIRED_TOP_LEVEL = ("format_version", "classes", "objects")
REQUIRED_OBJECT_FIELDS = ("object_id", "kind", "class_label", "views")
REQUIRED_VIEW_FIELDS = ("image", "sha256", "camera")
REQUIRED_CAMERA_FIELDS = ("pose", "fov", "resolution")


def validate_manifest(manifest: Dict) -> None:
    """Raise DatasetFormatError naming the first missing or malformed field."""
    if not isinstance(manifest, dict):
        raise DatasetFormatError("manifest must be a JSON object")
    for key in REQUIRED_TOP_LEVEL:
        if key not in manifest:
            raise DatasetFormatError(f"manifest is missing '{key}'")
    if not isinstance(manifest["objects"], list):
        raise DatasetFormatError("manifest 'objects' must be a list")

    for i, obj in enumerate(manifest["objects"]):
        for key in REQUIRED_OBJECT_FIELDS:
            if key not in obj:
                raise DatasetFormatError(f"objects[{i}] is missing '{key}'")
        for j, view in enumerate(obj["views"]):
            for key in REQUIRED_VIEW_FIELDS:
                if key not in view:
                    raise DatasetFormatError(f"objects[{i}].views[{j}] is missing '{key}'")
            camera = view["camera"]
            for key in REQUIRED_CAMERA_FIELDS:
                if key not in camera:
                    raise DatasetFormatError(f"objects[{i}].views[{j}].camera is missing '{key}'")
            if len(camera["pose"]) != 3 or any(len(row) != 4 for row in camera["pose"]):
                raise DatasetFormatError(f"objects[{i}].views[{j}].camera.pose must be 3x4")
