"""Forward noising, the noise-matching objective, and denoiser pretraining.

The closed-form forward process draws

    x_t = sqrt(alpha_bar_t) * x_0 + sqrt(1 - alpha_bar_t) * eps

and the network learns to recover eps from (x_t, t). The backward-step
mean uses the standard reparametrization

    mu = (x_t - ((1 - alpha_t) / sqrt(1 - alpha_bar_t)) * eps_hat) / sqrt(alpha_t)

with the per-step variance fixed (never learned here). The array ops work
on numpy arrays and torch tensors alike; the training loop draws all
randomness from a seeded numpy generator so runs are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .errors import DivergedTraining, EmptyDataset, ShapeError
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class NoisyImage:
    """Pixels at a given chain timestep t in [1, T]."""

    pixels: np.ndarray
    timestep: int


def forward_noise(x0, t: int, eps, schedule: NoiseSchedule) -> NoisyImage:
    """Noise a clean image to chain position t with the given draw eps."""
    if tuple(np.shape(x0)) != tuple(np.shape(eps)):
        raise ShapeError(
            f"x0 shape {np.shape(x0)} != eps shape {np.shape(eps)}"
        )
    abar = schedule.alpha_bar(t)
    pixels = math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * eps
    return NoisyImage(pixels=pixels, timestep=int(t))


def posterior_mean(x: NoisyImage, eps_hat, schedule: NoiseSchedule):
    """Mean of the fixed-variance backward step given a noise estimate."""
    if tuple(np.shape(x.pixels)) != tuple(np.shape(eps_hat)):
        raise ShapeError(
            f"pixels shape {np.shape(x.pixels)} != eps_hat shape {np.shape(eps_hat)}"
        )
    t = schedule.check_timestep(x.timestep)
    alpha = schedule.alpha(t)
    abar = schedule.alpha_bar(t)
    coef = (1.0 - alpha) / math.sqrt(1.0 - abar)
    return (x.pixels - coef * eps_hat) / math.sqrt(alpha)


def ddpm_loss(eps, eps_hat):
    """Mean squared difference between injected and predicted noise.

    Returns a scalar of the input family: float for numpy inputs, a 0-dim
    tensor (differentiable) for torch inputs.
    """
    if tuple(np.shape(eps)) != tuple(np.shape(eps_hat)):
        raise ShapeError(
            f"eps shape {np.shape(eps)} != eps_hat shape {np.shape(eps_hat)}"
        )
    diff = eps_hat - eps
    return (diff * diff).mean()


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-4
    seed: int = 0


def train_ddpm(
    unlabeled: Sequence[np.ndarray],
    model,
    schedule: NoiseSchedule,
    config: PretrainConfig,
) -> tuple[object, list[float]]:
    """Pretrain the noise predictor on unlabeled images.

    Each step samples a batch with one uniform timestep and one standard
    normal draw per image, forms x_t in closed form, and takes one Adam
    step on the noise-matching loss. Returns the (mutated) model and the
    per-step loss trace.
    """
    n = len(unlabeled)
    if n == 0:
        raise EmptyDataset("no unlabeled images")
    shape = tuple(np.shape(unlabeled[0]))
    for img in unlabeled:
        if tuple(np.shape(img)) != shape:
            raise ShapeError("unlabeled images have mixed shapes")
    model.check_input(shape)

    dtype = next(model.parameters()).dtype
    rng = np.random.default_rng(config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    losses: list[float] = []
    model.train()
    for _ in range(config.steps):
        idx = rng.integers(0, n, size=config.batch_size)
        t = rng.integers(1, schedule.total_steps + 1, size=config.batch_size)
        x0 = np.stack([np.asarray(unlabeled[i], dtype=np.float64) for i in idx])
        eps = rng.standard_normal(x0.shape)
        abar = schedule.alpha_bars[t - 1][:, None, None, None]
        xt = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps

        xt_t = torch.as_tensor(xt, dtype=dtype)
        t_t = torch.as_tensor(t.astype(np.float64), dtype=dtype)
        eps_t = torch.as_tensor(eps, dtype=dtype)
        eps_hat = model(xt_t, t_t)
        loss = ddpm_loss(eps_t, eps_hat)
        if not torch.isfinite(loss):
            raise DivergedTraining(f"non-finite loss at step {len(losses)}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    model.eval()
    return model, losses
