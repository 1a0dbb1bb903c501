"""Ridge-penalized logistic probes over single-step latents.

A linear softmax classifier per pixel, fit by L-BFGS on

    mean cross-entropy + lambda * ||W||^2

with the bias excluded from the penalty. One probe per diffusion step
isolates how predictive that step's latents are on their own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import EmptyDataset, MixedStepError, ShapeError


@dataclass
class RidgeProbe:
    weights: np.ndarray  # (channels, n_classes)
    bias: np.ndarray  # (n_classes,)
    ridge_lambda: float
    step: int

    def __post_init__(self):
        if self.ridge_lambda < 0:
            raise ShapeError(f"ridge_lambda must be >= 0, got {self.ridge_lambda}")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]

    def decision(self, x: np.ndarray) -> np.ndarray:
        """(N, channels) sample matrix to (N, n_classes) logits."""
        return x @ self.weights + self.bias

    def predict(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(channels, H, W) map to (labels H x W, probs classes x H x W)."""
        c, h, w = features.shape
        if c != self.weights.shape[0]:
            raise ShapeError(
                f"feature width {c} != probe width {self.weights.shape[0]}"
            )
        logits = self.decision(features.reshape(c, -1).T)
        probs = _softmax(logits).T.reshape(self.n_classes, h, w)
        return np.argmax(probs, axis=0), probs


@dataclass(frozen=True)
class ProbeConfig:
    max_iter: int = 200
    max_pixels: int | None = 20000
    seed: int = 0


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def probe_objective(
    params: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    lam: float,
    n_classes: int,
) -> tuple[float, np.ndarray]:
    """Penalized loss and its gradient for a flat (W, b) parameter vector."""
    n, c = x.shape
    w = params[: c * n_classes].reshape(c, n_classes)
    b = params[c * n_classes :]
    p = _softmax(x @ w + b)
    nll = -np.log(np.clip(p[np.arange(n), y], 1e-300, None)).mean()
    loss = nll + lam * float((w * w).sum())
    delta = p
    delta[np.arange(n), y] -= 1.0
    grad_w = x.T @ delta / n + 2.0 * lam * w
    grad_b = delta.mean(axis=0)
    return loss, np.concatenate([grad_w.reshape(-1), grad_b])


def train_probe(
    latents: list[tuple[int, np.ndarray, np.ndarray]],
    t: int,
    ridge_lambda: float = 1.0,
    config: ProbeConfig = ProbeConfig(),
    n_classes: int = 2,
) -> RidgeProbe:
    """Fit the probe for step t on (step, features, labels) triples.

    Every item must carry step t; anything else raises MixedStepError.
    Pixels are pooled across images and optionally subsampled to
    config.max_pixels (seeded, for tractable exact optimization).
    """
    if ridge_lambda < 0:
        raise ShapeError(f"ridge_lambda must be >= 0, got {ridge_lambda}")
    if not latents:
        raise EmptyDataset("no labeled latents")
    xs, ys = [], []
    for step, feats, labels in latents:
        if int(step) != int(t):
            raise MixedStepError(f"probe for step {t} got latents from {step}")
        c, h, w = feats.shape
        if labels.shape != (h, w):
            raise ShapeError(f"label shape {labels.shape} != map shape {(h, w)}")
        xs.append(feats.reshape(c, -1).T)
        ys.append(np.asarray(labels).reshape(-1).astype(np.int64))
    x = np.concatenate(xs).astype(np.float64)
    y = np.concatenate(ys)
    if y.min() < 0 or y.max() >= n_classes:
        raise ShapeError(f"labels outside [0, {n_classes})")
    if config.max_pixels is not None and y.size > config.max_pixels:
        keep = np.random.default_rng(config.seed).choice(
            y.size, size=config.max_pixels, replace=False
        )
        x, y = x[keep], y[keep]

    c = x.shape[1]
    x0 = np.zeros(c * n_classes + n_classes)
    res = minimize(
        probe_objective,
        x0,
        args=(x, y, float(ridge_lambda), n_classes),
        method="L-BFGS-B",
        jac=True,
        options={"maxiter": config.max_iter},
    )
    w = res.x[: c * n_classes].reshape(c, n_classes)
    b = res.x[c * n_classes :]
    return RidgeProbe(
        weights=w, bias=b, ridge_lambda=float(ridge_lambda), step=int(t)
    )
