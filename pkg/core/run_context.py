"""
Run Context.
Owns the per-run output directory: where every command writes, what it
needs from upstream commands, and a manifest of the commands executed so far.
Ablation variants get their own stage directories so several can share one run.
"""

import json
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List

from config.settings import RunConfig
from core.errors import MissingArtifactError
from diffusion.constants import LATEST_CHECKPOINT
from synth_data.constants import MANIFEST_NAME as DATASET_MANIFEST
from triplane.constants import DECODER_DIR, NORM_STATS_FILE, TRIPLANE_SUFFIX

RUN_MANIFEST = "run_manifest.json"
LOG_FILE = "run.log"
TELEMETRY_FILE = "telemetry.jsonl"


class CommandType(Enum):
    """Enum for pipeline commands."""
    GEN_DATA = "gen-data"
    FIT = "fit"
    TRAIN = "train"
    SAMPLE = "sample"
    INTERPOLATE = "interpolate"
    EVAL = "eval"


@dataclass
class CommandRecord:
    """One executed command in the run manifest."""
    command: CommandType
    config_hash: str
    seed: int
    exit_code: int
    outputs: Dict[str, Any] = field(default_factory=dict)
    seconds: float = 0.0
    timestamp: datetime = field(default_factory=datetime.now)

    def to_dict(self) -> Dict:
        """Convert to dictionary for serialization."""
        return {
            "command": self.command.value,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "exit_code": self.exit_code,
            "outputs": self.outputs,
            "seconds": round(self.seconds, 3),
            "timestamp": self.timestamp.isoformat(),
        }


class RunContext:
    """
    Paths and bookkeeping for one run directory.

    Layout:
        <root>/config.json, config.sha256, run_manifest.json, run.log
        <root>/dataset/                      gen-data
        <root>/fit/<regu>/decoder, raw/      fit
        <root>/fit/<regu>/<norm>/            normalized triplanes + statistics
        <root>/diffusion/<variant>/          checkpoints, samples, interpolation, eval
    """

    def __init__(self, root, config: RunConfig):
        """
        Args:
            root: Run directory (created if missing).
            config: Resolved configuration of the current command.
        """
        self.root = Path(root)
        self.config = config
        self.root.mkdir(parents=True, exist_ok=True)
        self.history: List[Dict] = self._load_history()

    # ------------------------------------------------------------------
    # Variants
    # ------------------------------------------------------------------
    @property
    def fit_variant(self) -> str:
        return "noregu" if self.config.no_tp_regu else "regu"

    @property
    def norm_variant(self) -> str:
        return "nonorm" if self.config.no_tp_norm else "norm"

    @property
    def model_variant(self) -> str:
        cp = "nocp" if self.config.no_cp else "cp"
        tf = "oritf" if self.config.ori_tf else "cptf"
        return f"{self.fit_variant}-{self.norm_variant}-{cp}-{tf}"

    # ------------------------------------------------------------------
    # Stage directories
    # ------------------------------------------------------------------
    @property
    def log_file(self) -> Path:
        return self.root / LOG_FILE

    @property
    def dataset_dir(self) -> Path:
        return self.root / "dataset"

    @property
    def fit_dir(self) -> Path:
        return self.root / "fit" / self.fit_variant

    @property
    def decoder_dir(self) -> Path:
        return self.fit_dir / DECODER_DIR

    @property
    def raw_triplane_dir(self) -> Path:
        return self.fit_dir / "raw"

    @property
    def normalized_dir(self) -> Path:
        return self.fit_dir / self.norm_variant

    def normalized_dir_for(self, normalized: bool) -> Path:
        """`fit` writes both variants; the current flags pick one to read."""
        return self.fit_dir / ("norm" if normalized else "nonorm")

    @property
    def model_dir(self) -> Path:
        return self.root / "diffusion" / self.model_variant

    @property
    def checkpoint_dir(self) -> Path:
        return self.model_dir / "checkpoints"

    @property
    def samples_dir(self) -> Path:
        return self.model_dir / "samples"

    @property
    def interpolation_dir(self) -> Path:
        return self.model_dir / "interpolation"

    @property
    def eval_dir(self) -> Path:
        return self.model_dir / "eval"

    def telemetry_path(self, command: CommandType) -> Path:
        stage = {
            CommandType.FIT: self.fit_dir,
            CommandType.TRAIN: self.model_dir,
        }.get(command, self.root)
        return stage / f"{command.value}-{TELEMETRY_FILE}"

    # ------------------------------------------------------------------
    # Upstream artifacts
    # ------------------------------------------------------------------
    def require(self, path: Path, hint: str) -> Path:
        """Return path if it exists, else raise MissingArtifactError naming it."""
        if not Path(path).exists():
            raise MissingArtifactError(path, hint)
        return Path(path)

    def require_dataset(self) -> Path:
        return self.require(self.dataset_dir / DATASET_MANIFEST, "run `gen-data` first")

    def require_normalized(self) -> Path:
        self.require(self.normalized_dir / NORM_STATS_FILE, f"run `fit`{self._flags('fit')} first")
        if not list(self.normalized_dir.glob(f"*{TRIPLANE_SUFFIX}")):
            raise MissingArtifactError(self.normalized_dir / f"*{TRIPLANE_SUFFIX}", "run `fit` first")
        return self.normalized_dir

    def require_decoder(self) -> Path:
        return self.require(self.decoder_dir / "manifest.json", f"run `fit`{self._flags('fit')} first")

    def require_checkpoint(self) -> Path:
        return self.require(self.checkpoint_dir / LATEST_CHECKPOINT, f"run `train`{self._flags('train')} first")

    def require_samples(self) -> Path:
        if not list(self.samples_dir.glob(f"*{TRIPLANE_SUFFIX}")):
            raise MissingArtifactError(self.samples_dir / f"*{TRIPLANE_SUFFIX}", "run `sample` first")
        return self.samples_dir

    def _flags(self, stage: str) -> str:
        cfg = self.config
        flags = [("--no-tp-regu", cfg.no_tp_regu), ("--no-tp-norm", cfg.no_tp_norm and stage != "fit"),
                 ("--no-cp", cfg.no_cp and stage == "train"), ("--ori-tf", cfg.ori_tf and stage == "train")]
        chosen = " ".join(name for name, on in flags if on)
        return f" {chosen}" if chosen else ""

    # ------------------------------------------------------------------
    # Manifest
    # ------------------------------------------------------------------
    def _load_history(self) -> List[Dict]:
        path = self.root / RUN_MANIFEST
        if not path.exists():
            return []
        try:
            return list(json.loads(path.read_text(encoding="utf-8")).get("commands", []))
        except json.JSONDecodeError:
            return []

    def write_config(self) -> Path:
        return self.config.save(self.root)

    def record(self, record: CommandRecord) -> None:
        """Append a command record and rewrite the run manifest."""
        self.history.append(record.to_dict())
        manifest = {
            "config_hash": self.config.config_hash(),
            "seed": self.config.seed,
            "commands": self.history,
        }
        (self.root / RUN_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True),
                                              encoding="utf-8")

    def get_run_summary(self) -> Dict:
        return {
            "root": str(self.root),
            "config_hash": self.config.config_hash(),
            "model_variant": self.model_variant,
            "commands_run": len(self.history),
            "last_command": self.history[-1]["command"] if self.history else None,
        }


def create_run_context(root, config: RunConfig) -> RunContext:
    return RunContext(root, config)
