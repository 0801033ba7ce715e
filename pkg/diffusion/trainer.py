"""
DIFFUSION TRAINER
========================================

Responsibility: Run the denoiser training loop over a set of normalized triplanes.

Flow:
1. resume from <checkpoint_dir>/latest when present, else start a fresh state
2. each step draws its batch, timesteps and noise from a per-step seeded stream,
   so a resumed run continues exactly where an uninterrupted one would be
3. telemetry record per step; checkpoint every `checkpoint_every` steps and at the end
4. a non-finite loss saves the last good state before the error propagates
"""

import logging
from typing import Callable, Dict, List, Optional

import numpy as np
from tqdm import tqdm

from autodiff.rng import make_rng
from config.settings import DiffusionConfig
from core.errors import NonFiniteError
from core.utils import Stopwatch
from diffusion.checkpoint import latest_checkpoint, load_train_state, save_checkpoint
from diffusion.constants import CHECKPOINT_PREFIX
from diffusion.denoiser import DenoiserNet
from diffusion.engine import TrainState, create_train_state, train_step
from diffusion.schedule import NoiseSchedule, schedule_from_config

logger = logging.getLogger(__name__)

TelemetrySink = Callable[[Dict], None]


class DiffusionTrainer:
    def __init__(self, cfg: DiffusionConfig, seed: int = 0, telemetry: Optional[TelemetrySink] = None,
                 progress: bool = False):
        self.cfg = cfg
        self.seed = seed
        self.telemetry = telemetry
        self.progress = progress
        self.schedule: NoiseSchedule = schedule_from_config(cfg)
        self.logger = logging.getLogger(__name__)
        self.stats = {"steps": 0, "resumed_from": None, "final_loss": None, "seconds": 0.0}

    def initial_state(self, net: DenoiserNet, checkpoint_dir=None) -> TrainState:
        if checkpoint_dir is not None and latest_checkpoint(checkpoint_dir) is not None:
            state = load_train_state(checkpoint_dir)
            self.stats["resumed_from"] = state.step
            return state
        return create_train_state(net, self.cfg)

    def sample_batch(self, data: np.ndarray, labels: Optional[np.ndarray], rng: np.random.Generator):
        idx = rng.integers(0, data.shape[0], size=self.cfg.batch_size)
        return data[idx], (None if labels is None else labels[idx])

    def train(self, net: DenoiserNet, data: np.ndarray, labels: Optional[np.ndarray] = None,
              checkpoint_dir=None, steps: Optional[int] = None) -> TrainState:
        """
        Train until `steps` (default cfg.train_steps) total steps have run.

        Args:
            net: Fresh denoiser; ignored when a checkpoint is resumed.
            data: (N, 3, C, W, H) normalized triplanes.
            labels: (N,) class labels or None for unconditional training.
            checkpoint_dir: Where checkpoints go; enables resume.

        Returns:
            TrainState: The final state.

        Raises:
            NonFiniteError: the loss became NaN/Inf (a checkpoint of the last
                good state is written first when checkpoint_dir is set).
        """
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 5 or data.shape[0] == 0:
            raise ValueError(f"training data must be a non-empty (N, 3, C, W, H) array, got {data.shape}")
        total = self.cfg.train_steps if steps is None else steps
        state = self.initial_state(net, checkpoint_dir)
        watch = Stopwatch()
        losses: List[float] = []

        self.logger.info(f"[START] Diffusion training: {data.shape[0]} triplanes, "
                         f"steps {state.step} -> {total}, batch {self.cfg.batch_size}")
        for _ in tqdm(range(state.step, total), desc="train", disable=not self.progress):
            rng = make_rng(self.seed, "diffusion-step", state.step)
            x0, y = self.sample_batch(data, labels, rng)
            try:
                loss = train_step(state, x0, y, self.schedule, rng, self.cfg)
            except NonFiniteError:
                if checkpoint_dir is not None:
                    save_checkpoint(checkpoint_dir, state, {"aborted": True})
                self.logger.error(f"[ERROR] Non-finite loss at step {state.step}; last good state saved")
                raise
            losses.append(loss)
            self.stats["steps"] += 1
            if self.telemetry is not None:
                self.telemetry({"phase": "diffusion", "step": state.step, "loss": loss,
                                "lr": state.lr, "seconds": round(watch.elapsed(), 3)})
            if state.step % self.cfg.log_every == 0:
                recent = float(np.mean(losses[-self.cfg.log_every:]))
                self.logger.info(f"[STATS] step {state.step}/{total} loss={recent:.5f} lr={state.lr:.2e}")
            if checkpoint_dir is not None and state.step % self.cfg.checkpoint_every == 0:
                save_checkpoint(checkpoint_dir, state)

        if checkpoint_dir is not None and (latest_checkpoint(checkpoint_dir) is None
                                           or latest_checkpoint(checkpoint_dir).name != _step_name(state)):
            save_checkpoint(checkpoint_dir, state)
        self.stats["final_loss"] = losses[-1] if losses else None
        self.stats["seconds"] += watch.elapsed()
        self.logger.info(f"[OK] Training finished at step {state.step} in {watch.elapsed():.1f}s")
        return state

    def get_stats_summary(self) -> Dict:
        return dict(self.stats)


def _step_name(state: TrainState) -> str:
    return f"{CHECKPOINT_PREFIX}{state.step:06d}"


def create_diffusion_trainer(cfg: DiffusionConfig, seed: int = 0,
                             telemetry: Optional[TelemetrySink] = None,
                             progress: bool = False) -> DiffusionTrainer:
    return DiffusionTrainer(cfg, seed=seed, telemetry=telemetry, progress=progress)
