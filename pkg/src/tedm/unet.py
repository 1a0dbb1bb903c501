"""Noise-prediction network and the supervised segmentation variant.

A small encoder-decoder with skip connections: one conv block per
resolution level on each side, a bottleneck block, sinusoidal time
embedding injected into every block. The output conv is zero-initialized
so an untrained net predicts zero noise. Named activation taps expose
intermediate feature maps for downstream feature extraction; their summed
channel count defines the latent width of the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffusion import NoisyImage
from .errors import ModelError, ShapeError


@dataclass(frozen=True)
class DenoiserConfig:
    in_channels: int = 1
    widths: tuple[int, ...] = (16, 32)
    bottleneck_width: int = 64
    time_embed_dim: int = 32
    taps: tuple[str, ...] = ("bottleneck", "dec1", "dec0")
    out_channels: int | None = None

    @property
    def levels(self) -> int:
        return len(self.widths)

    @property
    def output_channels(self) -> int:
        return self.in_channels if self.out_channels is None else self.out_channels

    def tap_channels(self) -> dict[str, int]:
        """Channel width of every available tap, keyed by tap name."""
        chans = {"bottleneck": self.bottleneck_width}
        for i, w in enumerate(self.widths):
            chans[f"enc{i}"] = w
            chans[f"dec{i}"] = w
        return chans

    @property
    def latent_width(self) -> int:
        """Summed channel count of the configured taps (c_total)."""
        chans = self.tap_channels()
        unknown = [t for t in self.taps if t not in chans]
        if unknown:
            raise ModelError(f"unknown taps {unknown}; available: {sorted(chans)}")
        return sum(chans[t] for t in self.taps)


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos positional encoding of scalar timesteps."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device)
        / max(half - 1, 1)
    )
    args = t[:, None].to(freqs.dtype) * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2 == 1:
        emb = F.pad(emb, (0, 1))
    return emb


class ConvBlock(nn.Module):
    """conv-norm-act twice, with the time embedding added between convs."""

    def __init__(self, in_ch: int, out_ch: int, temb_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(1, out_ch)
        self.temb_proj = nn.Linear(temb_dim, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(1, out_ch)

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.norm1(self.conv1(x)))
        h = h + self.temb_proj(temb)[:, :, None, None]
        return F.silu(self.norm2(self.conv2(h)))


class DenoiserUNet(nn.Module):
    """Encoder-decoder noise predictor with named activation taps."""

    def __init__(self, config: DenoiserConfig, seed: int = 0):
        super().__init__()
        config.latent_width  # validates tap names
        self.config = config
        w = config.widths
        wb = config.bottleneck_width
        td = config.time_embed_dim
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.time_mlp = nn.Sequential(
                nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td)
            )
            self.in_conv = nn.Conv2d(config.in_channels, w[0], 3, padding=1)
            self.enc = nn.ModuleList(
                [ConvBlock(w[i], w[i], td) for i in range(len(w))]
            )
            downs = []
            for i in range(len(w)):
                nxt = wb if i == len(w) - 1 else w[i + 1]
                downs.append(nn.Conv2d(w[i], nxt, 3, stride=2, padding=1))
            self.down = nn.ModuleList(downs)
            self.mid = ConvBlock(wb, wb, td)
            ups, decs = [], []
            for i in reversed(range(len(w))):
                above = wb if i == len(w) - 1 else w[i + 1]
                ups.append(nn.Conv2d(above, w[i], 3, padding=1))
                decs.append(ConvBlock(2 * w[i], w[i], td))
            self.up = nn.ModuleList(ups)          # ordered from deepest level
            self.dec = nn.ModuleList(decs)
            self.out_conv = nn.Conv2d(w[0], config.output_channels, 1)
            nn.init.zeros_(self.out_conv.weight)
            nn.init.zeros_(self.out_conv.bias)

    @property
    def latent_width(self) -> int:
        return self.config.latent_width

    def check_input(self, shape: tuple[int, ...]) -> None:
        c, h, wd = shape[-3], shape[-2], shape[-1]
        if c != self.config.in_channels:
            raise ShapeError(
                f"expected {self.config.in_channels} input channels, got {c}"
            )
        factor = 2 ** self.config.levels
        if h % factor or wd % factor:
            raise ShapeError(
                f"spatial size {h}x{wd} not divisible by {factor}"
            )

    def forward(
        self, x: torch.Tensor, t: torch.Tensor, return_taps: bool = False
    ):
        self.check_input(tuple(x.shape))
        temb = self.time_mlp(
            sinusoidal_embedding(t.to(x.dtype), self.config.time_embed_dim)
        )
        taps: dict[str, torch.Tensor] = {}
        h = self.in_conv(x)
        skips = []
        for i, block in enumerate(self.enc):
            h = block(h, temb)
            taps[f"enc{i}"] = h
            skips.append(h)
            h = self.down[i](h)
        h = self.mid(h, temb)
        taps["bottleneck"] = h
        for j, i in enumerate(reversed(range(len(self.enc)))):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = self.up[j](h)
            h = self.dec[j](torch.cat([h, skips[i]], dim=1), temb)
            taps[f"dec{i}"] = h
        out = self.out_conv(h)
        if return_taps:
            return out, {name: taps[name] for name in self.config.taps}
        return out

    def parameter_vector(self) -> np.ndarray:
        """All parameters flattened into one float vector."""
        return (
            torch.nn.utils.parameters_to_vector(self.parameters())
            .detach()
            .cpu()
            .numpy()
        )

    def load_parameter_vector(self, vec: np.ndarray) -> None:
        expected = sum(p.numel() for p in self.parameters())
        if vec.size != expected:
            raise ShapeError(f"expected {expected} parameters, got {vec.size}")
        torch.nn.utils.vector_to_parameters(
            torch.as_tensor(vec, dtype=next(self.parameters()).dtype),
            self.parameters(),
        )

    def state_tensors(self) -> dict[str, np.ndarray]:
        return {
            name: p.detach().cpu().numpy() for name, p in self.named_parameters()
        }

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        dtype = next(self.parameters()).dtype
        state = {k: torch.as_tensor(v, dtype=dtype) for k, v in tensors.items()}
        missing = set(dict(self.named_parameters())) - set(state)
        if missing:
            raise ModelError(f"checkpoint missing tensors: {sorted(missing)}")
        self.load_state_dict(state, strict=True)


def predict_noise(model: DenoiserUNet, x: NoisyImage) -> np.ndarray:
    """Run the noise predictor on one noisy image.

    Pure function of (parameters, pixels, timestep); output shape equals
    the input pixel shape.
    """
    pixels = np.asarray(x.pixels)
    if pixels.ndim != 3:
        raise ShapeError(f"expected C x H x W pixels, got shape {pixels.shape}")
    model.check_input(pixels.shape)
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        xt = torch.as_tensor(pixels, dtype=dtype)[None]
        tt = torch.tensor([float(x.timestep)], dtype=dtype)
        out = model(xt, tt)
    return out[0].cpu().numpy().astype(pixels.dtype, copy=False)


@dataclass(frozen=True)
class SegNetConfig:
    """Supervised baseline: the denoiser body with a class-logit head."""

    n_classes: int = 2
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)


class SegmentationNet(nn.Module):
    """Same encoder-decoder as the denoiser, emitting per-pixel class logits.

    The time embedding input is fixed at zero so the architecture matches
    the denoiser exactly while the task needs no timestep.
    """

    def __init__(self, config: SegNetConfig, seed: int = 0):
        super().__init__()
        self.config = config
        body_cfg = DenoiserConfig(
            in_channels=config.denoiser.in_channels,
            widths=config.denoiser.widths,
            bottleneck_width=config.denoiser.bottleneck_width,
            time_embed_dim=config.denoiser.time_embed_dim,
            taps=config.denoiser.taps,
            out_channels=config.n_classes,
        )
        self.body = DenoiserUNet(body_cfg, seed=seed)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        t = torch.zeros(x.shape[0], dtype=x.dtype, device=x.device)
        return self.body(x, t)

    def predict(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-pixel (class labels, class probabilities) for one image."""
        dtype = next(self.parameters()).dtype
        with torch.no_grad():
            xt = torch.as_tensor(np.asarray(image), dtype=dtype)[None]
            logits = self.forward(xt)[0]
            probs = torch.softmax(logits, dim=0).cpu().numpy()
        return np.argmax(probs, axis=0), probs
