"""
Noise schedules.

Arrays are indexed by timestep with index 0 reserved for the clean sample:
alpha_bar[0] = 1, beta[0] = 0. Valid diffusion steps are 1..T.
"""

from dataclasses import dataclass
from typing import Dict

import numpy as np

from config.settings import DiffusionConfig


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray       # (T + 1,), betas[0] = 0
    timesteps: np.ndarray   # (T + 1,), original training timestep of every index

    def __post_init__(self):
        betas = self.betas[1:]
        if betas.size == 0 or not (np.all(betas > 0) and np.all(betas < 1)):
            raise ValueError("betas must lie in (0, 1)")
        object.__setattr__(self, "alphas", 1.0 - self.betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - self.betas))
        alpha_bar_prev = np.concatenate([[1.0], self.alpha_bars[:-1]])
        variance = np.zeros_like(self.betas)
        variance[1:] = (1.0 - alpha_bar_prev[1:]) / (1.0 - self.alpha_bars[1:]) * self.betas[1:]
        object.__setattr__(self, "alpha_bar_prev", alpha_bar_prev)
        object.__setattr__(self, "posterior_variance", variance)

    @property
    def num_steps(self) -> int:
        return self.betas.shape[0] - 1

    def validate_t(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        if np.any(t < 1) or np.any(t > self.num_steps):
            raise ValueError(f"timesteps must lie in [1, {self.num_steps}], got {np.unique(t).tolist()}")
        return t

    def to_dict(self) -> Dict:
        return {
            "num_steps": self.num_steps,
            "beta_1": float(self.betas[1]),
            "beta_T": float(self.betas[-1]),
            "alpha_bar_T": float(self.alpha_bars[-1]),
        }


def linear_schedule(timesteps: int = 1000, beta_start: float = 1e-4, beta_end: float = 1e-2) -> NoiseSchedule:
    """beta_1 = beta_start ... beta_T = beta_end, evenly spaced."""
    betas = np.concatenate([[0.0], np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)])
    return NoiseSchedule(betas, np.arange(timesteps + 1))


def schedule_from_config(cfg: DiffusionConfig) -> NoiseSchedule:
    return linear_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)


def respace(schedule: NoiseSchedule, steps: int) -> NoiseSchedule:
    """
    Keep every (T/steps)-th training timestep and recompute betas from alpha_bar.

    The respaced schedule's alpha_bar at index k equals the training schedule's
    alpha_bar at timestep k·T/steps, and `timesteps[k]` records that training
    timestep so the denoiser is queried with the value it was trained on.
    """
    total = schedule.num_steps
    if steps < 1 or total % steps:
        raise ValueError(f"inference steps {steps} must divide {total}")
    stride = total // steps
    kept = np.arange(0, total + 1, stride)
    kept_bars = schedule.alpha_bars[kept]
    betas = np.zeros(steps + 1)
    betas[1:] = 1.0 - kept_bars[1:] / kept_bars[:-1]
    return NoiseSchedule(betas, schedule.timesteps[kept])
