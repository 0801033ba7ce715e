"""
Run configuration
=================

Responsibility: Define every tunable of the pipeline as typed section dataclasses,
load environment defaults from .env, apply JSON files and `--set` overrides, and
serialize the resolved configuration with its SHA-256 hash.

Environment variables:
- DIFFTF_WORKERS: default worker count (default 1)
- DIFFTF_LOG_LEVEL: logging level name (default INFO)
- DIFFTF_RUNS_DIR: default output directory when --out is not given
"""

import dataclasses
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from dotenv import load_dotenv

load_dotenv()

DEFAULT_WORKERS = int(os.getenv("DIFFTF_WORKERS", "1"))
LOG_LEVEL = os.getenv("DIFFTF_LOG_LEVEL", "INFO")
RUNS_DIR = os.getenv("DIFFTF_RUNS_DIR")

CONFIG_FILE_NAME = "config.json"
CONFIG_HASH_FILE_NAME = "config.sha256"


# ============================================================================
# SECTIONS
# ============================================================================

@dataclass
class DataConfig:
    """Synthetic multi-view dataset."""
    num_objects: int = 8
    views_per_object: int = 24
    resolution: int = 64
    fov_degrees: float = 40.0
    camera_radius: float = 1.2
    kinds: Tuple[str, ...] = ("sphere", "box", "torus", "capsule")

    def __post_init__(self):
        if self.num_objects < 1 or self.views_per_object < 1:
            raise ValueError("num_objects and views_per_object must be >= 1")
        if self.resolution < 1:
            raise ValueError("resolution must be >= 1")


@dataclass
class FitPhase:
    """Loss weights, learning rates and step count of one fitting phase."""
    tv_weight: float
    l2_weight: float
    triplane_lr: float = 1e-1
    decoder_lr: float = 1e-2
    steps: int = 1000

    def __post_init__(self):
        if self.tv_weight < 0 or self.l2_weight < 0:
            raise ValueError("regularization weights must be >= 0")


@dataclass
class FitConfig:
    channels: int = 8
    resolution: int = 32
    pe_frequencies: int = 4
    decoder_hidden: int = 64
    decoder_depth: int = 4
    samples_per_ray: int = 64
    rays_per_step: int = 1024
    rho: float = 0.5
    init_std: float = 0.1
    divergence_factor: float = 10.0
    norm_clamp: float = 3.0
    psnr_views: int = 2
    log_every: int = 100
    joint: FitPhase = field(default_factory=lambda: FitPhase(1e-4, 5e-5, 1e-1, 1e-2, 10000))
    refit: FitPhase = field(default_factory=lambda: FitPhase(0.5, 0.1, 1e-1, 1e-2, 3000))
    # tail of the refit where only the triplane trains, against the shared decoder
    refit_settle_fraction: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if not 0.0 <= self.refit_settle_fraction <= 1.0:
            raise ValueError(f"refit_settle_fraction must lie in [0, 1], got {self.refit_settle_fraction}")
        if self.pe_frequencies < 0:
            raise ValueError("pe_frequencies must be >= 0")


@dataclass
class DenoiserConfig:
    channels: int = 8
    resolution: int = 32
    hidden_channels: Tuple[int, ...] = (32, 64)
    conv_stride: int = 2
    encoder_patch_sizes: Tuple[int, ...] = (2, 1)
    cross_plane_resolutions: Tuple[int, ...] = (16, 8)
    attention_heads: int = 4
    patch_size: int = 2
    depth: int = 4
    heads: int = 4
    width: int = 256
    mlp_ratio: int = 4
    timestep_dim: int = 256
    num_classes: int = 4
    transformer: str = "cp"

    def __post_init__(self):
        if len(self.hidden_channels) != len(self.encoder_patch_sizes):
            raise ValueError("hidden_channels and encoder_patch_sizes need one entry per level")
        if self.transformer not in ("cp", "ori"):
            raise ValueError(f"transformer must be 'cp' or 'ori', got {self.transformer!r}")
        res = self.resolution
        for level, ps in enumerate(self.encoder_patch_sizes):
            if res % self.conv_stride:
                raise ValueError(f"level {level}: resolution {res} not divisible by stride {self.conv_stride}")
            res //= self.conv_stride
            if res % ps:
                raise ValueError(f"level {level}: resolution {res} not divisible by patch size {ps}")
            tokens_dim = self.hidden_channels[level] * ps * ps
            if res in self.cross_plane_resolutions and tokens_dim % self.attention_heads:
                raise ValueError(f"level {level}: token width {tokens_dim} not divisible by heads")
        if res % self.patch_size:
            raise ValueError(f"bottleneck {res} not divisible by transformer patch size {self.patch_size}")
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")
        if self.timestep_dim % 2:
            raise ValueError("timestep_dim must be even")

    def level_resolutions(self) -> Tuple[int, ...]:
        res, out = self.resolution, []
        for _ in self.hidden_channels:
            res //= self.conv_stride
            out.append(res)
        return tuple(out)


@dataclass
class DiffusionConfig:
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 1e-2
    inference_steps: int = 250
    lr: float = 1e-4
    lr_final: float = 1e-5
    batch_size: int = 16
    train_steps: int = 2000
    checkpoint_every: int = 500
    null_class_prob: float = 0.0
    log_every: int = 50

    def __post_init__(self):
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise ValueError("need 0 < beta_start <= beta_end < 1")
        if self.inference_steps < 1 or self.timesteps % self.inference_steps:
            raise ValueError("inference_steps must divide timesteps")


@dataclass
class SampleConfig:
    count: int = 8
    class_label: Optional[int] = None
    sampler: str = "ddpm"
    grid_views: int = 4
    grid_resolution: int = 64
    render_samples: int = 64
    interpolation_frames: int = 8

    def __post_init__(self):
        if self.sampler not in ("ddpm", "ddim"):
            raise ValueError(f"sampler must be 'ddpm' or 'ddim', got {self.sampler!r}")


@dataclass
class EvalConfig:
    points: int = 2048
    set_size: int = 32
    grid_resolution: int = 64


@dataclass
class RunConfig:
    """Everything a command needs; hashed to identify a run."""
    data: DataConfig = field(default_factory=DataConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    workers: int = DEFAULT_WORKERS
    output_dir: Optional[str] = RUNS_DIR
    progress: bool = True
    no_tp_regu: bool = False
    no_tp_norm: bool = False
    no_cp: bool = False
    ori_tf: bool = False

    def validate(self) -> None:
        if self.fit.channels != self.denoiser.channels or self.fit.resolution != self.denoiser.resolution:
            raise ValueError(
                f"denoiser planes ({self.denoiser.channels}x{self.denoiser.resolution}) must match "
                f"fitted triplanes ({self.fit.channels}x{self.fit.resolution})"
            )
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    # ------------------------------------------------------------------
    # Ablation switches resolved into the sections that use them
    # ------------------------------------------------------------------
    def effective_fit(self) -> FitConfig:
        if not self.no_tp_regu:
            return self.fit
        return dataclasses.replace(
            self.fit,
            joint=dataclasses.replace(self.fit.joint, tv_weight=0.0, l2_weight=0.0),
            refit=dataclasses.replace(self.fit.refit, tv_weight=0.0, l2_weight=0.0),
        )

    def effective_denoiser(self) -> DenoiserConfig:
        cfg = self.denoiser
        if self.no_cp:
            cfg = dataclasses.replace(cfg, cross_plane_resolutions=())
        if self.ori_tf:
            cfg = dataclasses.replace(cfg, transformer="ori")
        return cfg

    # ------------------------------------------------------------------
    # Serialization
    # ------------------------------------------------------------------
    def to_dict(self) -> Dict[str, Any]:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON, ignoring presentation-only fields."""
        payload = self.to_dict()
        payload.pop("progress", None)
        payload.pop("output_dir", None)
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        return _build(cls, data)

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / CONFIG_FILE_NAME
        path.write_text(self.to_json(), encoding="utf-8")
        (directory / CONFIG_HASH_FILE_NAME).write_text(self.config_hash() + "\n", encoding="utf-8")
        return path


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _build(cls, data: Dict[str, Any]):
    """Recursively construct a dataclass from a (possibly partial) dict."""
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in fields:
            raise ValueError(f"unknown config key {cls.__name__}.{key}")
        kwargs[key] = _coerce(fields[key], value)
    return cls(**kwargs)


def _coerce(f: dataclasses.Field, value):
    default = _default_of(f)
    if dataclasses.is_dataclass(default) and isinstance(value, dict):
        merged = asdict(default)
        merged.update(value)
        return _build(type(default), merged)
    if isinstance(default, tuple) and isinstance(value, list):
        return tuple(value)
    return value


def _default_of(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
        return f.default_factory()  # type: ignore[misc]
    return None


# ============================================================================
# LOADING AND OVERRIDES
# ============================================================================

def load_config(path, base: Optional[RunConfig] = None) -> RunConfig:
    """
    Read a JSON config. Keys missing from the file keep their value in `base`
    (default: the built-in defaults).
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    if base is None:
        return RunConfig.from_dict(data)
    return RunConfig.from_dict(_merge(base.to_dict(), data))


def _merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def parse_override(text: str) -> Tuple[str, Any]:
    """Split 'section.key=value'; the value is parsed as JSON when possible."""
    if "=" not in text:
        raise ValueError(f"override must look like section.key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(config: RunConfig, overrides) -> RunConfig:
    """Return a new RunConfig with dotted-key overrides applied and re-validated."""
    data = config.to_dict()
    for text in overrides or []:
        key, value = parse_override(text)
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ValueError(f"unknown config section {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ValueError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return RunConfig.from_dict(data)


def tiny_preset() -> RunConfig:
    """Small settings for smoke runs and tests."""
    return RunConfig(
        data=DataConfig(num_objects=4, views_per_object=8, resolution=32),
        fit=FitConfig(
            channels=4, resolution=16, decoder_hidden=32, samples_per_ray=32,
            rays_per_step=256, psnr_views=1, log_every=50,
            joint=FitPhase(1e-4, 5e-5, 1e-1, 1e-2, 200),
            refit=FitPhase(0.5, 0.1, 1e-1, 1e-2, 50),
        ),
        denoiser=DenoiserConfig(
            channels=4, resolution=16, hidden_channels=(8, 16), encoder_patch_sizes=(2, 1),
            cross_plane_resolutions=(8, 4), attention_heads=2, patch_size=2, depth=1,
            heads=2, width=32, mlp_ratio=2, timestep_dim=32,
        ),
        diffusion=DiffusionConfig(inference_steps=25, batch_size=4, train_steps=20,
                                  checkpoint_every=10, log_every=5),
        sample=SampleConfig(count=4, grid_views=2, grid_resolution=32, render_samples=32,
                            interpolation_frames=4),
        eval=EvalConfig(points=256, set_size=4, grid_resolution=24),
    )


PRESETS = {"default": RunConfig, "tiny": tiny_preset}
