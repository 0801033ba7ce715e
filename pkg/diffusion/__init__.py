"""Triplane denoiser, noise schedules, training and sampling."""

from diffusion.attention import CrossPlaneAttention, MultiHeadAttention, TokenGrid, plane_features, plane_tokens
from diffusion.checkpoint import latest_checkpoint, load_denoiser, load_train_state, save_checkpoint
from diffusion.denoiser import DenoiserNet, create_denoiser, expected_parameter_count
from diffusion.embedding import ConditionEmbedding, timestep_embedding
from diffusion.engine import (
    TrainState,
    create_train_state,
    ddim_sample,
    ddpm_sample,
    interpolation_path,
    posterior_step,
    q_sample,
    slerp,
    train_step,
)
from diffusion.schedule import NoiseSchedule, linear_schedule, respace, schedule_from_config
from diffusion.trainer import DiffusionTrainer, create_diffusion_trainer
