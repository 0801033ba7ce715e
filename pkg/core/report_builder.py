"""
REPORT BUILDER - ARTIFACT FORMATTER
=====================================

Responsibility: Turn raw command results into the human-readable artifacts of a
run. This module handles ONLY presentation, NOT pipeline logic.

Artifacts:
1. Metric tables (Markdown) with a JSON twin for machine comparison
2. Fitting summaries per object
3. Telemetry streams (one JSON object per line)
4. Rendered image grids and interpolation strips (lossless PNG)
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from PIL import Image

from synth_data.utils import to_uint8

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("Method", "FID/KID", "COV(%)", "MMD(‰)", "|S_g|", "|S_r|", "seed")


class TelemetryWriter:
    """
    Append-only JSON-lines sink. Instances are callable so they can be handed to
    the fitter and trainer as their telemetry callback.
    """

    def __init__(self, path, append: bool = True):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a" if append else "w", encoding="utf-8")
        self.records = 0

    def __call__(self, record: Dict[str, Any]) -> None:
        self.write(record)

    def write(self, record: Dict[str, Any]) -> None:
        self._fh.write(json.dumps(_finite(record), sort_keys=True) + "\n")
        self.records += 1

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            self._fh.close()

    def __enter__(self) -> "TelemetryWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _finite(record: Dict[str, Any]) -> Dict[str, Any]:
    """JSON has no NaN; non-finite floats become null."""
    out = {}
    for key, value in record.items():
        if isinstance(value, (float, np.floating)):
            value = float(value)
            out[key] = value if math.isfinite(value) else None
        elif isinstance(value, np.integer):
            out[key] = int(value)
        else:
            out[key] = value
    return out


class ReportBuilder:
    """
    Builder for the reports of a DiffTF run.

    This module is responsible for:
    - Formatting COV / MMD results into the metrics table
    - Summarizing per-object fitting quality
    - Writing image grids and interpolation strips
    - Formatting command failures for the console
    """

    def __init__(self, decimals: int = 2):
        """
        Args:
            decimals: Digits after the point in table cells.
        """
        self.decimals = decimals
        self.logger = logging.getLogger(__name__)

        self.templates = {
            "metrics_header": self._get_metrics_header_template(),
            "metrics_row": self._get_metrics_row_template(),
            "fit_header": self._get_fit_header_template(),
            "fit_row": self._get_fit_row_template(),
            "error": self._get_error_template(),
        }

    # ==================== TABLES ====================

    def build_metrics_table(self, rows: Sequence[Dict[str, Any]]) -> str:
        """
        Markdown table, one row per method.

        Each row needs: method, cov_percent, mmd_permille, generated, reference, seed.
        FID/KID is image-based and not computed at desk scale; its column reads "excluded".
        """
        lines = [self.templates["metrics_header"]]
        for row in rows:
            lines.append(self.templates["metrics_row"].format(
                method=row["method"],
                cov=self._number(row["cov_percent"]),
                mmd=self._number(row["mmd_permille"]),
                generated=row["generated"],
                reference=row["reference"],
                seed=row["seed"],
            ))
        return "\n".join(lines) + "\n"

    def metrics_json(self, rows: Sequence[Dict[str, Any]]) -> str:
        payload = {
            "columns": list(METRIC_COLUMNS),
            "rows": [dict(row, fid_kid="excluded") for row in rows],
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def build_fit_summary(self, reports: Sequence[Dict[str, Any]]) -> str:
        """Per-object PSNR table with a mean row."""
        lines = [self.templates["fit_header"]]
        scores = []
        for report in reports:
            lines.append(self.templates["fit_row"].format(
                object_id=report["object_id"],
                psnr=self._number(report["psnr_fg"]),
                steps=report["steps"],
                seconds=self._number(report["seconds"]),
            ))
            if report["psnr_fg"] is not None and math.isfinite(report["psnr_fg"]):
                scores.append(report["psnr_fg"])
        mean = float(np.mean(scores)) if scores else float("nan")
        lines.append(f"| **mean** | {self._number(mean)} | | |")
        return "\n".join(lines) + "\n"

    def build_error_message(self, command: str, error: Exception) -> str:
        return self.templates["error"].format(command=command, error_type=type(error).__name__,
                                              details=str(error))

    def write_metrics(self, directory, rows: Sequence[Dict[str, Any]]) -> Dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        table = directory / "metrics.md"
        twin = directory / "metrics.json"
        table.write_text(self.build_metrics_table(rows), encoding="utf-8")
        twin.write_text(self.metrics_json(rows), encoding="utf-8")
        self.logger.info(f"[FILE] Metrics report: {table}")
        return {"table": table, "json": twin}

    def write_fit_summary(self, directory, reports: Sequence[Dict[str, Any]]) -> Path:
        directory = Path(directory)
        path = directory / "fit_report.md"
        path.write_text(self.build_fit_summary(reports), encoding="utf-8")
        (directory / "fit_report.json").write_text(
            json.dumps([_finite(r) for r in reports], indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self.logger.info(f"[FILE] Fit summary: {path}")
        return path

    def read_fit_summary(self, directory) -> Dict[str, Dict[str, Any]]:
        """Reports of an earlier (possibly interrupted) fit, keyed by object id."""
        path = Path(directory) / "fit_report.json"
        if not path.exists():
            return {}
        try:
            return {r["object_id"]: r for r in json.loads(path.read_text(encoding="utf-8"))}
        except (json.JSONDecodeError, KeyError, TypeError):
            self.logger.warning(f"[WARN] Ignoring unreadable {path}")
            return {}

    # ==================== IMAGES ====================

    def compose_grid(self, frames: Sequence[Sequence[np.ndarray]], background: float = 1.0) -> np.ndarray:
        """
        Tile premultiplied RGBA frames in [0, 1] into one RGB image, one row per entry of `frames`.
        Transparent pixels are blended over `background`.
        """
        if not frames or not frames[0]:
            raise ValueError("grid needs at least one frame")
        rows = []
        for row in frames:
            tiles = []
            for frame in row:
                frame = np.asarray(frame, dtype=np.float64)
                alpha = frame[..., 3:4]
                tiles.append(frame[..., :3] + background * (1.0 - alpha))
            rows.append(np.concatenate(tiles, axis=1))
        return to_uint8(np.concatenate(rows, axis=0))

    def save_grid(self, frames: Sequence[Sequence[np.ndarray]], path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(self.compose_grid(frames)).save(path, format="PNG")
        self.logger.info(f"[FILE] Image grid: {path}")
        return path

    def save_strip(self, frames: Sequence[np.ndarray], path) -> Path:
        """Single-row grid for interpolation sequences."""
        return self.save_grid([list(frames)], path)

    # ==================== TEMPLATES ====================

    def _get_metrics_header_template(self) -> str:
        head = "| " + " | ".join(METRIC_COLUMNS) + " |"
        rule = "|" + "|".join("---" for _ in METRIC_COLUMNS) + "|"
        return f"{head}\n{rule}"

    def _get_metrics_row_template(self) -> str:
        return "| {method} | excluded | {cov} | {mmd} | {generated} | {reference} | {seed} |"

    def _get_fit_header_template(self) -> str:
        return "| Object | PSNR_fg (dB) | Steps | Seconds |\n|---|---|---|---|"

    def _get_fit_row_template(self) -> str:
        return "| {object_id} | {psnr} | {steps} | {seconds} |"

    def _get_error_template(self) -> str:
        return """[ERROR] `{command}` failed
  type:    {error_type}
  details: {details}"""

    # ==================== UTILITY METHODS ====================

    def _number(self, value: Optional[float]) -> str:
        if value is None or not math.isfinite(value):
            return "n/a"
        return f"{value:.{self.decimals}f}"


def create_report_builder(decimals: int = 2) -> ReportBuilder:
    return ReportBuilder(decimals=decimals)


def rows_from_frames(frames: List[np.ndarray], columns: int) -> List[List[np.ndarray]]:
    """Split a flat frame list into rows of `columns` frames."""
    return [frames[i:i + columns] for i in range(0, len(frames), columns)]
