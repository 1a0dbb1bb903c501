"""Intensity preprocessing applied before pretraining and extraction."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateIntensity, DegenerateVariance, ShapeError


def quantile_normalize(
    image: np.ndarray,
    mask: np.ndarray | None = None,
    q_low: float = 0.01,
    q_high: float = 0.99,
) -> np.ndarray:
    """Affine-map masked pixels so quantiles (q_low, q_high) land on (-1, +1).

    Uses a = 2 / (x_hi - x_lo) and b = 1 - a * x_hi where x_lo/x_hi are
    the masked quantiles. Pixels outside the mask are left unchanged; a
    missing mask means all pixels.
    """
    image = np.asarray(image, dtype=np.float64)
    if mask is None:
        mask = np.ones(image.shape, dtype=bool)
    else:
        mask = np.asarray(mask).astype(bool)
        if mask.shape != image.shape:
            raise ShapeError(f"mask shape {mask.shape} != image shape {image.shape}")
    if not mask.any():
        raise DegenerateIntensity("empty mask")
    vals = image[mask]
    x_lo = float(np.quantile(vals, q_low))
    x_hi = float(np.quantile(vals, q_high))
    if x_hi <= x_lo:
        raise DegenerateIntensity(
            f"degenerate quantiles: q{q_low}={x_lo} >= q{q_high}={x_hi}"
        )
    a = 2.0 / (x_hi - x_lo)
    b = 1.0 - a * x_hi
    out = image.copy()
    out[mask] = a * image[mask] + b
    return out


def standardize(image: np.ndarray, mean: float, variance: float) -> np.ndarray:
    """(image - mean) / sqrt(variance); variance must be positive."""
    if variance <= 0:
        raise DegenerateVariance(f"variance must be > 0, got {variance}")
    return (np.asarray(image, dtype=np.float64) - mean) / np.sqrt(variance)
