"""Timestep and class conditioning."""

import math
from typing import Optional

import numpy as np

from autodiff import ops
from autodiff.nn import Embedding, Linear, Module
from autodiff.tensor import Tensor
from core.errors import ShapeError
from diffusion.constants import CLASS_EMBED_STD, MAX_PERIOD


def timestep_embedding(t, dim: int, max_period: float = MAX_PERIOD) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps: (B,) -> (B, dim), cosines then sines."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1)


class ConditionEmbedding(Module):
    """
    MLP(sinusoid(t)) + class embedding.

    Row `num_classes` of the class table is the null class used for
    unconditional generation.
    """

    def __init__(self, timestep_dim: int, width: int, num_classes: int, rng: np.random.Generator):
        self.timestep_dim = timestep_dim
        self.num_classes = num_classes
        self.time_fc1 = Linear(timestep_dim, width, rng)
        self.time_fc2 = Linear(width, width, rng)
        self.class_embed = Embedding(num_classes + 1, width, rng, std=CLASS_EMBED_STD)

    @property
    def null_class(self) -> int:
        return self.num_classes

    def resolve_labels(self, labels: Optional[np.ndarray], batch: int) -> np.ndarray:
        if labels is None:
            return np.full(batch, self.null_class, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != batch:
            raise ShapeError("condition", f"{labels.shape[0]} labels for a batch of {batch}")
        if labels.min() < 0 or labels.max() > self.null_class:
            raise ValueError(f"class labels must lie in [0, {self.null_class}], got {labels.tolist()}")
        return labels

    def forward(self, t, labels: Optional[np.ndarray] = None) -> Tensor:
        t = np.asarray(t).reshape(-1)
        temb = Tensor(timestep_embedding(t, self.timestep_dim))
        time = self.time_fc2(ops.silu(self.time_fc1(temb)))
        return ops.add(time, self.class_embed(self.resolve_labels(labels, t.shape[0])))
