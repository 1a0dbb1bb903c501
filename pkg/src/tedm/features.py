"""Per-timestep latent maps from the trained denoiser.

For each requested step s, the source image is noised with a draw that is
a pure function of (seed, image id, s), pushed through the denoiser, and
the configured activation taps are bilinearly upsampled to the input size
and concatenated channel-wise into z_s of width c_total. Stacks keep one
such map per step; the concatenated variant joins all steps into one wide
feature map in ascending step order.

Bilinear convention (corner-aligned): output index i on an axis of input
length n maps to source coordinate ``src = i * (n - 1) / (N - 1)`` and the
two neighbours blend as ``v = v_lo + frac(src) * (v_hi - v_lo)``. Corners
map to corners exactly and constants stay constant.
"""

from __future__ import annotations

import hashlib
import os
import zlib
from dataclasses import dataclass

import numpy as np
import torch

from .errors import (
    FormatError,
    InvalidTimestep,
    ModelError,
    ShapeError,
    StorageError,
    UnsupportedResize,
)
from .schedule import NoiseSchedule
from .tensorio import load_latents_file, save_latents_file


def validate_timestep_set(steps, total_steps: int) -> tuple[int, ...]:
    """Sorted ascending nonempty tuple of distinct steps within [1, T]."""
    steps = tuple(int(s) for s in steps)
    if not steps:
        raise InvalidTimestep("empty timestep set")
    if len(set(steps)) != len(steps):
        raise InvalidTimestep(f"duplicate steps in {steps}")
    for s in steps:
        if not 1 <= s <= total_steps:
            raise InvalidTimestep(f"step {s} outside [1, {total_steps}]")
    return tuple(sorted(steps))


def upsample_bilinear(z: np.ndarray, H: int, W: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a c x h x w map to c x H x W."""
    z = np.asarray(z)
    if z.ndim != 3:
        raise ShapeError(f"expected c x h x w input, got shape {z.shape}")
    c, h, w = z.shape
    if H < h or W < w:
        raise UnsupportedResize(f"cannot downscale {h}x{w} to {H}x{W}")

    def axis_grid(n_in: int, n_out: int):
        if n_in == 1 or n_out == 1:
            src = np.zeros(n_out, dtype=np.float64)
        else:
            src = np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)
        lo = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    rlo, rhi, rw = axis_grid(h, H)
    clo, chi, cw = axis_grid(w, W)
    zl = z[:, rlo, :]
    rows = zl + rw[None, :, None] * (z[:, rhi, :] - zl)
    left = rows[:, :, clo]
    out = left + cw[None, None, :] * (rows[:, :, chi] - left)
    return out.astype(z.dtype, copy=False)


@dataclass(frozen=True)
class LatentStack:
    """One upsampled latent map per step, all c_total x H x W."""

    steps: tuple[int, ...]
    latents: dict[int, np.ndarray]
    image_id: str = ""
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(int(s) for s in self.steps))
        if not self.steps:
            raise ShapeError("empty latent stack")
        if list(self.steps) != sorted(set(self.steps)):
            raise ShapeError(f"steps must be distinct ascending, got {self.steps}")
        if set(self.latents) != set(self.steps):
            raise ShapeError("latents keys do not match steps")
        shapes = {self.latents[s].shape for s in self.steps}
        if len(shapes) != 1 or any(len(s) != 3 for s in shapes):
            raise ShapeError(f"heterogeneous latent shapes {sorted(shapes)}")

    @property
    def channels(self) -> int:
        return self.latents[self.steps[0]].shape[0]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.latents[self.steps[0]].shape[1:]


@dataclass(frozen=True)
class FeatureMap:
    """Channel-wise concatenation of a stack, ascending step order."""

    data: np.ndarray
    steps: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(int(s) for s in self.steps))
        if self.data.ndim != 3:
            raise ShapeError(f"expected channels x H x W, got {self.data.shape}")
        if list(self.steps) != sorted(set(self.steps)) or not self.steps:
            raise ShapeError(f"steps must be distinct ascending, got {self.steps}")
        if self.data.shape[0] % len(self.steps):
            raise ShapeError(
                f"{self.data.shape[0]} channels not divisible by {len(self.steps)} steps"
            )

    @property
    def block_channels(self) -> int:
        return self.data.shape[0] // len(self.steps)

    def block(self, k: int) -> np.ndarray:
        c = self.block_channels
        return self.data[k * c : (k + 1) * c]


def concat_features(stack: LatentStack) -> FeatureMap:
    """Join per-step maps along channels, smallest step first."""
    data = np.concatenate([stack.latents[s] for s in stack.steps], axis=0)
    return FeatureMap(data=data, steps=stack.steps)


def noise_for(seed: int, image_id: str, step: int, shape) -> np.ndarray:
    """The standard normal draw for one (image, step); stable across runs."""
    tag = zlib.crc32(str(image_id).encode("utf-8"))
    ss = np.random.SeedSequence([int(seed), int(step), tag])
    return np.random.default_rng(ss).standard_normal(shape).astype(np.float32)


def model_content_hash(model) -> str:
    h = hashlib.sha256()
    h.update(repr(model.config).encode())
    h.update(model.parameter_vector().astype("<f4").tobytes())
    return h.hexdigest()


class LatentCache:
    """Disk cache of per-(model, image, step, seed) latents.

    A key is written at most once; a second writer must produce identical
    bytes or the put fails. Writes go through a temp file and an atomic
    rename so readers never observe partial files.
    """

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)

    def path(self, model_hash: str, image_id: str, seed: int, step: int) -> str:
        safe = "".join(c if c.isalnum() or c in "_-" else "-" for c in image_id)
        tag = zlib.crc32(image_id.encode("utf-8"))
        name = f"{model_hash[:16]}_{safe}_{tag:08x}_s{seed}_t{step}.latz"
        return os.path.join(self.root, name)

    def get(self, model_hash: str, image_id: str, seed: int, step: int):
        p = self.path(model_hash, image_id, seed, step)
        if not os.path.exists(p):
            return None
        records = load_latents_file(p)
        if len(records) != 1 or records[0][0] != step:
            raise FormatError(f"{p}: expected a single record for step {step}")
        return records[0][1]

    def put(
        self, model_hash: str, image_id: str, seed: int, step: int, arr: np.ndarray
    ) -> None:
        p = self.path(model_hash, image_id, seed, step)
        if os.path.exists(p):
            existing = self.get(model_hash, image_id, seed, step)
            if existing.shape != arr.shape or not np.array_equal(existing, arr):
                raise StorageError(f"{p}: cache key rewritten with different data")
            return
        save_latents_file(p, [(step, np.asarray(arr, dtype=np.float32))])


class FeatureExtractor:
    """Latent extraction with optional caching and a forward-pass counter."""

    def __init__(self, model, schedule: NoiseSchedule, cache_dir: str | None = None):
        self.model = model
        self.schedule = schedule
        self.cache = LatentCache(cache_dir) if cache_dir else None
        self.model_hash = model_content_hash(model)
        self.forward_count = 0

    def _compute(self, x0: np.ndarray, image_id: str, step: int, seed: int):
        eps = noise_for(seed, image_id, step, x0.shape)
        abar = self.schedule.alpha_bar(step)
        xt = (
            np.sqrt(abar) * x0.astype(np.float32)
            + np.sqrt(1.0 - abar).astype(np.float32) * eps
        )
        dtype = next(self.model.parameters()).dtype
        with torch.no_grad():
            xt_t = torch.as_tensor(xt, dtype=dtype)[None]
            t_t = torch.tensor([float(step)], dtype=dtype)
            _, taps = self.model(xt_t, t_t, return_taps=True)
        self.forward_count += 1
        H, W = x0.shape[-2:]
        parts = [
            upsample_bilinear(
                taps[name][0].cpu().numpy().astype(np.float32), H, W
            )
            for name in self.model.config.taps
        ]
        return np.concatenate(parts, axis=0)

    def latent(
        self, x0: np.ndarray, image_id: str, step: int, seed: int
    ) -> np.ndarray:
        """c_total x H x W map for one (image, step), cached when possible."""
        step = self.schedule.check_timestep(step)
        if self.cache is not None:
            hit = self.cache.get(self.model_hash, image_id, seed, step)
            if hit is not None:
                return hit
        z = self._compute(x0, image_id, step, seed)
        if self.cache is not None:
            self.cache.put(self.model_hash, image_id, seed, step, z)
        return z

    def extract(
        self, x0: np.ndarray, steps, seed: int, image_id: str = "img"
    ) -> LatentStack:
        x0 = np.asarray(x0, dtype=np.float32)
        try:
            self.model.check_input(x0.shape)
        except ShapeError as e:
            raise ModelError(str(e)) from e
        steps = validate_timestep_set(steps, self.schedule.total_steps)
        latents = {s: self.latent(x0, image_id, s, seed) for s in steps}
        return LatentStack(
            steps=steps, latents=latents, image_id=image_id, seed=seed
        )


def extract_latents(
    model,
    x0: np.ndarray,
    steps,
    schedule: NoiseSchedule,
    seed: int,
    image_id: str = "img",
    cache_dir: str | None = None,
) -> LatentStack:
    """One-shot extraction without keeping the extractor around."""
    ex = FeatureExtractor(model, schedule, cache_dir=cache_dir)
    return ex.extract(x0, steps, seed, image_id=image_id)


def persist_latents(obj, path: str) -> None:
    """Write a stack or a concatenated map to the latent container."""
    if isinstance(obj, LatentStack):
        records = [(s, obj.latents[s]) for s in obj.steps]
    elif isinstance(obj, FeatureMap):
        records = [(s, obj.block(k)) for k, s in enumerate(obj.steps)]
    else:
        raise ShapeError(f"cannot persist {type(obj).__name__}")
    save_latents_file(path, records)


def load_latents(path: str, kind: str = "stack", image_id: str = "", seed: int = 0):
    """Read a latent container back as a stack or a concatenated map.

    The on-disk layout stores per-step records either way, so the caller
    says which shape it wants back.
    """
    records = load_latents_file(path)
    if not records:
        raise FormatError(f"{path}: no records")
    steps = tuple(s for s, _ in records)
    if list(steps) != sorted(set(steps)):
        raise FormatError(f"{path}: records not in ascending step order")
    latents = {s: arr for s, arr in records}
    stack = LatentStack(steps=steps, latents=latents, image_id=image_id, seed=seed)
    if kind == "stack":
        return stack
    if kind == "map":
        return concat_features(stack)
    raise ShapeError(f"unknown kind {kind!r}")
