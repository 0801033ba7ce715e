"""
DIFFUSION ENGINE
========================================

Responsibility: Forward noising, the eps-prediction training step, ancestral
(DDPM) and deterministic (DDIM) sampling, and spherical latent interpolation.

All triplane batches are numpy arrays of shape (B, 3, C, W, H) in normalized
space. Sampling runs under no_grad and returns numpy arrays.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from tqdm import tqdm

from autodiff import ops
from autodiff.optim import Adam
from autodiff.tensor import Tensor, backward, no_grad
from config.settings import DiffusionConfig
from core.errors import NonFiniteError
from diffusion.constants import SLERP_LINEAR_THRESHOLD
from diffusion.denoiser import DenoiserNet
from diffusion.schedule import NoiseSchedule, respace

logger = logging.getLogger(__name__)


def _per_sample(values: np.ndarray, ndim: int) -> np.ndarray:
    return values.reshape((-1,) + (1,) * (ndim - 1))


# ============================================================================
# FORWARD PROCESS AND POSTERIOR
# ============================================================================

def q_sample(schedule: NoiseSchedule, x0: np.ndarray, t, eps: np.ndarray) -> np.ndarray:
    """x_t = sqrt(alpha_bar_t)·x0 + sqrt(1 - alpha_bar_t)·eps, t per sample (or scalar)."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    t = schedule.validate_t(t)
    bars = schedule.alpha_bars[t]
    if t.ndim:
        bars = _per_sample(bars, x0.ndim)
    return np.sqrt(bars) * x0 + np.sqrt(1.0 - bars) * eps


def predict_x0(schedule: NoiseSchedule, x_t: np.ndarray, eps_hat: np.ndarray, t: int) -> np.ndarray:
    bar = schedule.alpha_bars[t]
    return (x_t - math.sqrt(1.0 - bar) * eps_hat) / math.sqrt(bar)


def posterior_step(schedule: NoiseSchedule, x_t: np.ndarray, eps_hat: np.ndarray, t: int,
                   rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    One reverse step x_t -> x_{t-1}.

    mean = (x_t - beta_t / sqrt(1 - alpha_bar_t)·eps_hat) / sqrt(alpha_t), plus
    sqrt(posterior_variance_t)·z for t > 1. At t = 1 no noise is added.
    """
    t = int(schedule.validate_t(t))
    x_t = np.asarray(x_t, dtype=np.float64)
    beta = schedule.betas[t]
    mean = (x_t - beta / math.sqrt(1.0 - schedule.alpha_bars[t]) * eps_hat) / math.sqrt(schedule.alphas[t])
    if t == 1:
        return mean
    if rng is None:
        raise ValueError("posterior_step needs an rng for t > 1")
    return mean + math.sqrt(schedule.posterior_variance[t]) * rng.standard_normal(x_t.shape)


def predict_eps(net: DenoiserNet, x_t: np.ndarray, timesteps, labels=None) -> np.ndarray:
    with no_grad():
        return net.denoise(Tensor(x_t), timesteps, labels).data.astype(np.float64)


# ============================================================================
# TRAINING
# ============================================================================

def learning_rate_at(cfg: DiffusionConfig, step: int) -> float:
    """Linear decay from cfg.lr at step 0 to cfg.lr_final at the last step."""
    span = max(cfg.train_steps - 1, 1)
    frac = min(max(step, 0) / span, 1.0)
    return cfg.lr + (cfg.lr_final - cfg.lr) * frac


@dataclass
class TrainState:
    net: DenoiserNet
    optimizer: Adam
    step: int = 0
    lr: float = 0.0


def create_train_state(net: DenoiserNet, cfg: DiffusionConfig) -> TrainState:
    lr = learning_rate_at(cfg, 0)
    return TrainState(net, Adam(net.parameters(), lr=lr), 0, lr)


def diffusion_loss(net: DenoiserNet, x_t: np.ndarray, t: np.ndarray, eps: np.ndarray, labels=None) -> Tensor:
    """Mean squared error between eps and eps_hat over every texel."""
    eps_hat = net.denoise(Tensor(x_t), t, labels)
    return ops.mean(ops.square(ops.sub(eps_hat, Tensor(eps))))


def train_step(state: TrainState, x0: np.ndarray, labels: Optional[np.ndarray], schedule: NoiseSchedule,
               rng: np.random.Generator, cfg: DiffusionConfig) -> float:
    """
    One Adam step on a batch of normalized triplanes.

    t is drawn uniformly from [1, T] per element; labels are replaced by the null
    class with probability cfg.null_class_prob.

    Raises:
        NonFiniteError: the loss is NaN or Inf (parameters are left untouched).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    batch = x0.shape[0]
    t = rng.integers(1, schedule.num_steps + 1, size=batch)
    eps = rng.standard_normal(x0.shape)
    if labels is not None and cfg.null_class_prob > 0:
        drop = rng.random(batch) < cfg.null_class_prob
        labels = np.where(drop, state.net.condition.null_class, labels)
    x_t = q_sample(schedule, x0, t, eps)

    state.lr = learning_rate_at(cfg, state.step)
    state.optimizer.set_lr(state.lr)
    state.optimizer.zero_grad()
    loss = diffusion_loss(state.net, x_t, t, eps, labels)
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteError("diffusion loss", f"step {state.step}, value {value}")
    backward(loss)
    state.optimizer.step()
    state.step += 1
    return value


# ============================================================================
# SAMPLING
# ============================================================================

def _labels_for(count: int, labels) -> Optional[np.ndarray]:
    if labels is None:
        return None
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    return np.full(count, int(labels[0]), dtype=np.int64) if labels.size == 1 else labels


def ddpm_sample(net: DenoiserNet, schedule: NoiseSchedule, count: int, rng: np.random.Generator,
                labels=None, steps: Optional[int] = None, progress: bool = False) -> np.ndarray:
    """
    Ancestral sampling over the schedule respaced to `steps` (default: unchanged).

    Returns:
        np.ndarray: (count, 3, C, W, H) normalized triplanes.
    """
    spaced = respace(schedule, steps) if steps and steps != schedule.num_steps else schedule
    labels = _labels_for(count, labels)
    x = rng.standard_normal((count,) + net.input_shape)
    for k in tqdm(range(spaced.num_steps, 0, -1), desc="ddpm", disable=not progress, leave=False):
        eps_hat = predict_eps(net, x, np.full(count, spaced.timesteps[k]), labels)
        x = posterior_step(spaced, x, eps_hat, k, rng)
    return x


def ddim_sample(net: DenoiserNet, schedule: NoiseSchedule, z: np.ndarray, labels=None,
                steps: Optional[int] = None, progress: bool = False) -> np.ndarray:
    """
    Deterministic DDIM (eta = 0) from the noise latent z.

    Each step predicts x0 from eps_hat and re-noises it to the previous retained
    timestep with the same eps_hat; the last step returns the x0 estimate.
    """
    spaced = respace(schedule, steps) if steps and steps != schedule.num_steps else schedule
    x = np.asarray(z, dtype=np.float64)
    labels = _labels_for(x.shape[0], labels)
    for k in tqdm(range(spaced.num_steps, 0, -1), desc="ddim", disable=not progress, leave=False):
        eps_hat = predict_eps(net, x, np.full(x.shape[0], spaced.timesteps[k]), labels)
        x0_hat = predict_x0(spaced, x, eps_hat, k)
        prev = spaced.alpha_bar_prev[k]
        x = math.sqrt(prev) * x0_hat + math.sqrt(1.0 - prev) * eps_hat
    return x


# ============================================================================
# INTERPOLATION
# ============================================================================

def slerp(z1: np.ndarray, z2: np.ndarray, tau: float) -> np.ndarray:
    """
    Spherical interpolation between two latents of the same shape.

    Falls back to linear interpolation when the angle between them is below
    1e-4 rad.

    Raises:
        ValueError: either latent is the zero vector, or tau is outside [0, 1].
    """
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise ValueError(f"latent shapes differ: {z1.shape} vs {z2.shape}")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    n1, n2 = np.linalg.norm(z1), np.linalg.norm(z2)
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("cannot interpolate a zero latent")
    if tau == 0.0:
        return z1.copy()
    if tau == 1.0:
        return z2.copy()
    cos = float(np.clip(np.vdot(z1, z2) / (n1 * n2), -1.0, 1.0))
    omega = math.acos(cos)
    if omega < SLERP_LINEAR_THRESHOLD:
        return (1.0 - tau) * z1 + tau * z2
    return (math.sin((1.0 - tau) * omega) * z1 + math.sin(tau * omega) * z2) / math.sin(omega)


def interpolation_path(z1: np.ndarray, z2: np.ndarray, frames: int) -> List[np.ndarray]:
    """`frames` latents at evenly spaced tau from 0 to 1 inclusive."""
    if frames < 2:
        raise ValueError("an interpolation needs at least 2 frames")
    return [slerp(z1, z2, float(tau)) for tau in np.linspace(0.0, 1.0, frames)]
