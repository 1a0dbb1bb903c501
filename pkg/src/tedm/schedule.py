"""Variance schedule for the forward noising chain.

The chain runs over timesteps t = 1..T with per-step noise variance
beta_t, signal retention alpha_t = 1 - beta_t and cumulative retention
alpha_bar_t = prod_{i<=t} alpha_i. Timestep 0 (the clean image) has no
array slot; callers pass t in [1, T] and indexing is t - 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSchedule, InvalidTimestep


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta/alpha/alpha_bar arrays over T steps."""

    total_steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    kind: str = "linear"

    def check_timestep(self, t: int) -> int:
        if not 1 <= int(t) <= self.total_steps:
            raise InvalidTimestep(
                f"timestep {t} outside [1, {self.total_steps}]"
            )
        return int(t)

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self.check_timestep(t) - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self.check_timestep(t) - 1])

    def beta(self, t: int) -> float:
        return float(self.betas[self.check_timestep(t) - 1])


def build_schedule(
    total_steps: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    kind: str = "linear",
) -> NoiseSchedule:
    """Build a linear variance schedule with T entries.

    betas interpolate linearly from beta_start to beta_end inclusive;
    alphas and alpha_bars follow exactly from the definitions above.

    Raises InvalidSchedule for T < 1, betas outside (0, 1), a decreasing
    beta range, or an unknown schedule kind.
    """
    if kind != "linear":
        raise InvalidSchedule(f"unknown schedule kind {kind!r}")
    if total_steps < 1:
        raise InvalidSchedule(f"total_steps must be >= 1, got {total_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise InvalidSchedule(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )

    betas = np.linspace(beta_start, beta_end, total_steps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    if alpha_bars[-1] <= 0.0:
        raise InvalidSchedule("alpha_bar underflowed to zero")
    return NoiseSchedule(
        total_steps=total_steps,
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        kind=kind,
    )
