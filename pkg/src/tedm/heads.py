"""Pixel-wise classifier heads over diffusion latents.

Three families share one lightweight per-pixel MLP (in -> 128 -> 32 ->
classes, rectified between layers):

* concat head: one MLP per ensemble member over the |S|*c_total
  concatenated feature map, members averaged at prediction time;
* shared head: a single MLP over c_total applied to every step's map,
  trained on the mean cross-entropy across steps and ensembled at test
  time by averaging the per-step class probabilities (timestep voting);
* supervised baseline: the denoiser's encoder-decoder retargeted to
  class logits, trained on images directly.

The shared head's parameter count does not depend on |S|; the concat
head's input width grows linearly with it. Ties in any argmax resolve to
the lowest class index.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DivergedTraining, EmptyDataset, ShapeError
from .features import FeatureMap, LatentStack
from .unet import SegmentationNet, SegNetConfig

MLP_HIDDEN = (128, 32)


class PixelMLP(nn.Module):
    """Three linear layers applied independently to each pixel's features."""

    def __init__(self, in_channels: int, n_classes: int, seed: int = 0):
        super().__init__()
        self.in_channels = in_channels
        self.n_classes = n_classes
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.fc1 = nn.Linear(in_channels, MLP_HIDDEN[0])
            self.fc2 = nn.Linear(MLP_HIDDEN[0], MLP_HIDDEN[1])
            self.fc3 = nn.Linear(MLP_HIDDEN[1], n_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.fc1(x))
        h = F.relu(self.fc2(h))
        return self.fc3(h)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    @staticmethod
    def expected_parameter_count(in_channels: int, n_classes: int) -> int:
        h1, h2 = MLP_HIDDEN
        return (
            in_channels * h1 + h1 + h1 * h2 + h2 + h2 * n_classes + n_classes
        )


@dataclass
class TedmHead:
    """Shared per-pixel MLP over single-step latents plus its step set."""

    mlp: PixelMLP
    steps: tuple[int, ...]

    @property
    def in_channels(self) -> int:
        return self.mlp.in_channels

    @property
    def n_classes(self) -> int:
        return self.mlp.n_classes


@dataclass
class LedmHead:
    """Independent per-pixel MLP members over the concatenated map."""

    members: list[PixelMLP]
    steps: tuple[int, ...]

    @property
    def in_channels(self) -> int:
        return self.members[0].in_channels

    @property
    def n_classes(self) -> int:
        return self.members[0].n_classes


@dataclass(frozen=True)
class HeadTrainConfig:
    steps: int = 2000
    lr: float = 1e-4
    pixel_batch: int = 512
    n_classes: int = 2
    seed: int = 0


def _pixel_matrix(arr: np.ndarray) -> np.ndarray:
    """(c, H, W) feature map to an (H*W, c) sample matrix."""
    c = arr.shape[0]
    return arr.reshape(c, -1).T


def _check_labels(spatial: tuple[int, int], labels: np.ndarray, n_classes: int):
    labels = np.asarray(labels)
    if tuple(labels.shape) != tuple(spatial):
        raise ShapeError(f"label shape {labels.shape} != image shape {spatial}")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ShapeError(
            f"label values outside [0, {n_classes}): "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels.astype(np.int64)


def tedm_loss(stack: LatentStack, head: TedmHead, labels: np.ndarray) -> float:
    """Mean cross-entropy over pixels and over the stack's steps."""
    return float(_tedm_loss_tensor(stack, head, labels).detach())


def _tedm_loss_tensor(
    stack: LatentStack, head: TedmHead, labels: np.ndarray
) -> torch.Tensor:
    if stack.channels != head.in_channels:
        raise ShapeError(
            f"stack width {stack.channels} != head width {head.in_channels}"
        )
    y = _check_labels(stack.spatial, labels, head.n_classes)
    dtype = next(head.mlp.parameters()).dtype
    xs = np.concatenate(
        [_pixel_matrix(stack.latents[s]) for s in stack.steps], axis=0
    )
    ys = np.tile(y.reshape(-1), len(stack.steps))
    logits = head.mlp(torch.as_tensor(xs, dtype=dtype))
    return F.cross_entropy(logits, torch.as_tensor(ys))


def train_tedm(
    stacks: list[tuple[LatentStack, np.ndarray]], config: HeadTrainConfig
) -> TedmHead:
    """Fit the shared MLP on labeled stacks; deterministic given the seed."""
    if not stacks:
        raise EmptyDataset("no labeled stacks")
    width = stacks[0][0].channels
    steps = stacks[0][0].steps
    samples = []
    for stack, labels in stacks:
        if stack.channels != width or stack.steps != steps:
            raise ShapeError("stacks disagree on width or step set")
        y = _check_labels(stack.spatial, labels, config.n_classes)
        xs = np.stack(
            [_pixel_matrix(stack.latents[s]) for s in stack.steps]
        )  # (|S|, HW, c)
        samples.append((xs.astype(np.float32), y.reshape(-1)))

    mlp = PixelMLP(width, config.n_classes, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    opt = torch.optim.Adam(mlp.parameters(), lr=config.lr)
    n_steps = len(steps)
    for it in range(config.steps):
        xs, y = samples[rng.integers(0, len(samples))]
        pix = rng.integers(0, y.size, size=min(config.pixel_batch, y.size))
        xb = torch.as_tensor(xs[:, pix, :].reshape(n_steps * pix.size, width))
        yb = torch.as_tensor(np.tile(y[pix], n_steps))
        loss = F.cross_entropy(mlp(xb), yb)
        if not torch.isfinite(loss):
            raise DivergedTraining(f"non-finite loss at step {it}")
        opt.zero_grad()
        loss.backward()
        opt.step()
    mlp.eval()
    return TedmHead(mlp=mlp, steps=steps)


def restrict_stack(stack: LatentStack, steps) -> LatentStack:
    """Sub-stack over a subset of the stack's steps (for step ablations)."""
    steps = tuple(sorted(int(s) for s in steps))
    missing = [s for s in steps if s not in stack.latents]
    if missing:
        raise ShapeError(f"steps {missing} not present in stack {stack.steps}")
    return replace(
        stack, steps=steps, latents={s: stack.latents[s] for s in steps}
    )


def predict_vote(
    stack: LatentStack, head: TedmHead
) -> tuple[np.ndarray, np.ndarray]:
    """Average the per-step class distributions, then take the argmax.

    Returns (labels H x W, probabilities classes x H x W). Ties resolve
    to the lowest class index.
    """
    if stack.channels != head.in_channels:
        raise ShapeError(
            f"stack width {stack.channels} != head width {head.in_channels}"
        )
    h, w = stack.spatial
    dtype = next(head.mlp.parameters()).dtype
    acc = np.zeros((head.n_classes, h * w), dtype=np.float64)
    with torch.no_grad():
        for s in stack.steps:
            x = torch.as_tensor(_pixel_matrix(stack.latents[s]), dtype=dtype)
            acc += torch.softmax(head.mlp(x), dim=1).numpy().T
    probs = (acc / len(stack.steps)).reshape(head.n_classes, h, w)
    return np.argmax(probs, axis=0), probs


def train_ledm(
    feature_maps: list[tuple[FeatureMap, np.ndarray]],
    n_members: int,
    config: HeadTrainConfig,
    member_seeds=None,
) -> LedmHead:
    """Fit n_members independent MLPs on concatenated maps.

    Members get distinct seeds derived from config.seed unless explicit
    member_seeds are given.
    """
    if not feature_maps:
        raise EmptyDataset("no labeled feature maps")
    width = feature_maps[0][0].data.shape[0]
    steps = feature_maps[0][0].steps
    samples = []
    for fmap, labels in feature_maps:
        if fmap.data.shape[0] != width:
            raise ShapeError("feature maps disagree on channel width")
        y = _check_labels(fmap.data.shape[1:], labels, config.n_classes)
        samples.append(
            (_pixel_matrix(fmap.data).astype(np.float32), y.reshape(-1))
        )
    if member_seeds is None:
        member_seeds = [config.seed + k for k in range(n_members)]
    if len(member_seeds) != n_members:
        raise ShapeError(f"need {n_members} member seeds, got {len(member_seeds)}")

    members = []
    for seed in member_seeds:
        mlp = PixelMLP(width, config.n_classes, seed=int(seed))
        rng = np.random.default_rng(int(seed))
        opt = torch.optim.Adam(mlp.parameters(), lr=config.lr)
        for it in range(config.steps):
            xs, y = samples[rng.integers(0, len(samples))]
            pix = rng.integers(0, y.size, size=min(config.pixel_batch, y.size))
            xb = torch.as_tensor(xs[pix])
            yb = torch.as_tensor(y[pix])
            loss = F.cross_entropy(mlp(xb), yb)
            if not torch.isfinite(loss):
                raise DivergedTraining(f"non-finite loss at step {it}")
            opt.zero_grad()
            loss.backward()
            opt.step()
        mlp.eval()
        members.append(mlp)
    return LedmHead(members=members, steps=steps)


def predict_ledm(
    Z: FeatureMap, head: LedmHead, aggregate: str = "mean_prob"
) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble the members over one concatenated map.

    mean_prob averages member softmax outputs; majority takes the modal
    member argmax (probabilities still report the mean distribution).
    """
    if Z.data.shape[0] != head.in_channels:
        raise ShapeError(
            f"map width {Z.data.shape[0]} != head width {head.in_channels}"
        )
    c, h, w = Z.data.shape
    dtype = next(head.members[0].parameters()).dtype
    x = torch.as_tensor(_pixel_matrix(Z.data), dtype=dtype)
    member_probs = []
    with torch.no_grad():
        for m in head.members:
            member_probs.append(torch.softmax(m(x), dim=1).numpy().T)
    probs = np.mean(member_probs, axis=0).reshape(head.n_classes, h, w)
    if aggregate == "mean_prob":
        labels = np.argmax(probs, axis=0)
    elif aggregate == "majority":
        votes = np.stack([np.argmax(p, axis=0) for p in member_probs])
        counts = np.apply_along_axis(
            lambda v: np.bincount(v, minlength=head.n_classes), 0, votes
        )
        labels = np.argmax(counts, axis=0).reshape(h, w)
    else:
        raise ShapeError(f"unknown aggregate {aggregate!r}")
    return labels, probs


@dataclass(frozen=True)
class BaselineTrainConfig:
    steps: int = 2000
    lr: float = 1e-4
    image_batch: int = 4
    n_classes: int = 2
    seed: int = 0
    net: SegNetConfig = field(default_factory=SegNetConfig)


def train_supervised_baseline(
    images: list[tuple[np.ndarray, np.ndarray]], config: BaselineTrainConfig
) -> SegmentationNet:
    """Fit the encoder-decoder segmenter on labeled images directly."""
    if not images:
        raise EmptyDataset("no labeled images")
    prepared = []
    for img, labels in images:
        img = np.asarray(img, dtype=np.float32)
        y = _check_labels(img.shape[-2:], labels, config.n_classes)
        prepared.append((img, y))

    net_cfg = SegNetConfig(
        n_classes=config.n_classes, denoiser=config.net.denoiser
    )
    net = SegmentationNet(net_cfg, seed=config.seed)
    net.body.check_input(prepared[0][0].shape)
    rng = np.random.default_rng(config.seed)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    net.train()
    for it in range(config.steps):
        idx = rng.integers(0, len(prepared), size=config.image_batch)
        xb = torch.as_tensor(np.stack([prepared[i][0] for i in idx]))
        yb = torch.as_tensor(np.stack([prepared[i][1] for i in idx]))
        loss = F.cross_entropy(net(xb), yb)
        if not torch.isfinite(loss):
            raise DivergedTraining(f"non-finite loss at step {it}")
        opt.zero_grad()
        loss.backward()
        opt.step()
    net.eval()
    return net
