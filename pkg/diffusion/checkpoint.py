# checkpoint.py: Saves and restores denoiser checkpoints (parameters + optimizer moments).
# Layout: <root>/step_000500/model/*.dtf, <root>/step_000500/optimizer/*.dtf, <root>/latest

import dataclasses
import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

from autodiff.optim import Adam
from autodiff.rng import make_rng
from autodiff.snapshot import load_named_tensors, save_named_tensors
from config.settings import DenoiserConfig
from core.errors import MissingArtifactError, SnapshotFormatError
from diffusion.constants import (
    CHECKPOINT_FORMAT,
    CHECKPOINT_PREFIX,
    LATEST_CHECKPOINT,
    MODEL_DIR,
    OPTIMIZER_DIR,
)
from diffusion.denoiser import DenoiserNet
from diffusion.engine import TrainState

logger = logging.getLogger(__name__)


def save_checkpoint(root, state: TrainState, metadata: Optional[Dict] = None) -> Path:
    """
    Write the parameters and optimizer state of `state` under <root>/step_<step>
    and point <root>/latest at it.

    Returns:
        Path: The checkpoint directory.
    """
    root = Path(root)
    directory = root / f"{CHECKPOINT_PREFIX}{state.step:06d}"
    net = state.net
    meta = {
        "format": CHECKPOINT_FORMAT,
        "step": state.step,
        "lr": state.lr,
        "parameters": net.parameter_count(),
        "denoiser": dataclasses.asdict(net.config),
    }
    meta.update(metadata or {})
    save_named_tensors(directory / MODEL_DIR, net.state_dict(), meta)
    save_named_tensors(directory / OPTIMIZER_DIR, state.optimizer.state_dict(), {"step": state.step})
    (root / LATEST_CHECKPOINT).write_text(directory.name + "\n", encoding="utf-8")
    logger.info(f"[FILE] Checkpoint saved: {directory}")
    return directory


def latest_checkpoint(root) -> Optional[Path]:
    root = Path(root)
    pointer = root / LATEST_CHECKPOINT
    if not pointer.exists():
        return None
    directory = root / pointer.read_text(encoding="utf-8").strip()
    return directory if directory.exists() else None


def _config_from_metadata(meta: Dict) -> DenoiserConfig:
    if meta.get("format") != CHECKPOINT_FORMAT or "denoiser" not in meta:
        raise SnapshotFormatError(f"not a denoiser checkpoint (format={meta.get('format')!r})")
    fields = {k: tuple(v) if isinstance(v, list) else v for k, v in meta["denoiser"].items()}
    return DenoiserConfig(**fields)


def load_denoiser(directory) -> Tuple[DenoiserNet, Dict]:
    """
    Rebuild a DenoiserNet from a checkpoint directory (or a root holding `latest`).

    Raises:
        MissingArtifactError: no checkpoint at the path.
        SnapshotFormatError: corrupt tensors or a manifest from something else.
    """
    directory = Path(directory)
    if (directory / LATEST_CHECKPOINT).exists():
        directory = latest_checkpoint(directory) or directory
    if not (directory / MODEL_DIR).exists():
        raise MissingArtifactError(directory / MODEL_DIR, "run `train` first")
    tensors, meta = load_named_tensors(directory / MODEL_DIR)
    cfg = _config_from_metadata(meta)
    net = DenoiserNet(cfg, make_rng(0, "checkpoint-skeleton"))
    try:
        net.load_state_dict(tensors)
    except (KeyError, ValueError) as exc:
        raise SnapshotFormatError(f"{directory}: parameters do not match the stored config ({exc})")
    return net, meta


def load_train_state(directory) -> TrainState:
    """Denoiser plus Adam moments and step counter, ready to resume training."""
    net, meta = load_denoiser(directory)
    directory = Path(directory)
    if (directory / LATEST_CHECKPOINT).exists():
        directory = latest_checkpoint(directory) or directory
    optimizer = Adam(net.parameters(), lr=float(meta.get("lr", 0.0)))
    state, _ = load_named_tensors(directory / OPTIMIZER_DIR)
    try:
        optimizer.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise SnapshotFormatError(f"{directory}: optimizer state does not match the model ({exc})")
    step = int(meta.get("step", optimizer.step_count))
    logger.info(f"[OK] Resumed training state at step {step} from {directory}")
    return TrainState(net, optimizer, step, float(meta.get("lr", 0.0)))
