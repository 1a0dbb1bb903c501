"""Seeded synthetic segmentation corpus with three-tier domain shift.

Domain A supplies the unlabeled pretraining set, the labeled pool and the
in-domain test split. Domain B keeps A's structural family but shifts the
appearance a classifier keys on (intensity means, contrast, noise,
texture). Domain C additionally shifts the shape statistics, so it is out
of domain for both the denoiser and the classifier.

Every image is painted from primitives (rotated ellipses over a biased,
textured background) and its mask records exactly the painted pixels, so
ground truth is exact by construction.
"""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import BudgetError, FormatError, InvalidSpec, ShapeError
from .tensorio import load_checkpoint, save_checkpoint


@dataclass(frozen=True)
class DomainSpec:
    shape_count: int = 3
    size_range: tuple[float, float] = (0.10, 0.22)
    eccentricity: tuple[float, float] = (1.0, 1.8)
    fg_mean: float = 0.75
    bg_mean: float = 0.25
    fg_contrast: float = 0.05
    bg_contrast: float = 0.03
    noise_level: float = 0.04
    texture_freq: float = 3.0
    texture_amp: float = 0.04
    bias_strength: float = 0.08

    def validate(self) -> "DomainSpec":
        lo, hi = self.size_range
        elo, ehi = self.eccentricity
        checks = [
            (self.shape_count >= 1, "shape_count must be >= 1"),
            (0.0 < lo <= hi < 0.5, f"bad size_range {self.size_range}"),
            (1.0 <= elo <= ehi, f"bad eccentricity {self.eccentricity}"),
            (self.noise_level >= 0, "noise_level must be >= 0"),
            (self.texture_freq >= 0, "texture_freq must be >= 0"),
            (
                all(
                    np.isfinite(
                        [self.fg_mean, self.bg_mean, self.fg_contrast,
                         self.bg_contrast, self.texture_amp, self.bias_strength]
                    )
                ),
                "intensity parameters must be finite",
            ),
        ]
        for ok, msg in checks:
            if not ok:
                raise InvalidSpec(msg)
        return self


@dataclass(frozen=True)
class SuiteSizes:
    unlabeled_train: int = 2000
    labeled_pool: int = 64
    test_per_domain: int = 64
    image_size: int = 64
    n_classes: int = 2
    channels: int = 1

    def validate(self) -> "SuiteSizes":
        if min(self.unlabeled_train, self.labeled_pool, self.test_per_domain) < 1:
            raise InvalidSpec("split sizes must be positive")
        if self.image_size < 8:
            raise InvalidSpec("image_size must be >= 8")
        if not 2 <= self.n_classes <= 4:
            raise InvalidSpec("n_classes must be in [2, 4]")
        return self


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    image: np.ndarray  # (channels, H, W) float32
    mask: np.ndarray | None  # (H, W) int64 class map, None for unlabeled


@dataclass
class DomainSuite:
    unlabeled_train: list[ImageRecord]
    labeled_pool: list[ImageRecord]
    test_in: list[ImageRecord]
    test_shift_classifier: list[ImageRecord]
    test_shift_both: list[ImageRecord]
    specs: dict[str, DomainSpec]
    sizes: SuiteSizes
    seed: int

    SPLIT_DOMAINS = {
        "unlabeled_train": "A",
        "labeled_pool": "A",
        "test_in": "A",
        "test_shift_classifier": "B",
        "test_shift_both": "C",
    }

    def split(self, name: str) -> list[ImageRecord]:
        if name not in self.SPLIT_DOMAINS:
            raise ShapeError(f"unknown split {name!r}")
        return getattr(self, name)


def _render(
    spec: DomainSpec, size: int, n_classes: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One (image, mask, painted) triple; painted is the primitive bookkeeping."""
    yy, xx = np.meshgrid(
        np.linspace(0.0, 1.0, size), np.linspace(0.0, 1.0, size), indexing="ij"
    )
    canvas = np.full((size, size), spec.bg_mean + spec.bg_contrast
                     * float(rng.uniform(-1.0, 1.0)))
    u, v = rng.uniform(-1.0, 1.0, size=2)
    canvas += spec.bias_strength * (u * (xx - 0.5) + v * (yy - 0.5))
    theta = float(rng.uniform(0.0, np.pi))
    phase = float(rng.uniform(0.0, 2 * np.pi))
    canvas += spec.texture_amp * np.sin(
        2 * np.pi * spec.texture_freq * (np.cos(theta) * xx + np.sin(theta) * yy)
        + phase
    )

    mask = np.zeros((size, size), dtype=np.int64)
    painted = np.zeros((size, size), dtype=bool)
    for k in range(spec.shape_count):
        cls = 1 + k % (n_classes - 1)
        cx, cy = rng.uniform(0.22, 0.78, size=2)
        a = float(rng.uniform(*spec.size_range))
        ecc = float(rng.uniform(*spec.eccentricity))
        b = a / ecc
        rot = float(rng.uniform(0.0, np.pi))
        dx, dy = xx - cx, yy - cy
        xr = np.cos(rot) * dx + np.sin(rot) * dy
        yr = -np.sin(rot) * dx + np.cos(rot) * dy
        inside = (xr / a) ** 2 + (yr / b) ** 2 <= 1.0
        level = (
            spec.fg_mean
            - 0.12 * (cls - 1)
            + spec.fg_contrast * float(rng.uniform(-1.0, 1.0))
        )
        canvas[inside] = level
        mask[inside] = cls
        painted |= inside

    canvas += spec.noise_level * rng.standard_normal((size, size))
    return canvas.astype(np.float32)[None], mask, painted


def generate_image(
    spec: DomainSpec, size: int, n_classes: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    image, mask, _ = _render(spec, size, n_classes, rng)
    return image, mask


def _split_rng(seed: int, split: str, index: int) -> np.random.Generator:
    tag = zlib.crc32(split.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([seed, tag, index]))


def generate_suite(
    specs: tuple[DomainSpec, DomainSpec, DomainSpec],
    sizes: SuiteSizes,
    seed: int,
) -> DomainSuite:
    """Deterministically generate all five splits from (A, B, C) specs."""
    spec_a, spec_b, spec_c = (s.validate() for s in specs)
    sizes = sizes.validate()

    def make(split: str, spec: DomainSpec, count: int, labeled: bool):
        domain = DomainSuite.SPLIT_DOMAINS[split]
        records = []
        for i in range(count):
            rng = _split_rng(seed, split, i)
            image, mask = generate_image(spec, sizes.image_size, sizes.n_classes, rng)
            records.append(
                ImageRecord(
                    image_id=f"{domain}-{split}-{i:04d}",
                    image=image,
                    mask=mask if labeled else None,
                )
            )
        return records

    return DomainSuite(
        unlabeled_train=make("unlabeled_train", spec_a, sizes.unlabeled_train, False),
        labeled_pool=make("labeled_pool", spec_a, sizes.labeled_pool, True),
        test_in=make("test_in", spec_a, sizes.test_per_domain, True),
        test_shift_classifier=make(
            "test_shift_classifier", spec_b, sizes.test_per_domain, True
        ),
        test_shift_both=make("test_shift_both", spec_c, sizes.test_per_domain, True),
        specs={"A": spec_a, "B": spec_b, "C": spec_c},
        sizes=sizes,
        seed=seed,
    )


@dataclass(frozen=True)
class LabelBudget:
    n: int
    seed: int = 0


def subsample_labels(
    pool: list[ImageRecord], budget: LabelBudget
) -> list[ImageRecord]:
    """Uniform subset without replacement; nested across budgets per seed.

    One permutation of the pool is drawn from the seed and every budget
    takes its prefix, so the n=3 subset is contained in the n=6 subset.
    """
    if budget.n > len(pool):
        raise BudgetError(f"budget {budget.n} exceeds pool size {len(pool)}")
    if budget.n < 1:
        raise BudgetError(f"budget must be >= 1, got {budget.n}")
    order = np.random.default_rng(budget.seed).permutation(len(pool))
    picked = sorted(order[: budget.n])
    return [pool[i] for i in picked]


def save_suite(suite: DomainSuite, root: str) -> None:
    """One directory per split; images/masks in the tensor-archive format."""
    os.makedirs(root, exist_ok=True)
    lines = [f"seed {suite.seed}"]
    for f in fields(suite.sizes):
        lines.append(f"sizes.{f.name} {getattr(suite.sizes, f.name)}")
    for domain in sorted(suite.specs):
        spec = suite.specs[domain]
        for f in fields(spec):
            value = getattr(spec, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"spec.{domain}.{f.name} {value}")
    for split in DomainSuite.SPLIT_DOMAINS:
        records = suite.split(split)
        split_dir = os.path.join(root, split)
        images = {r.image_id: r.image for r in records}
        save_checkpoint(os.path.join(split_dir, "images.bin"), images)
        masks = {
            r.image_id: r.mask.astype(np.float32)
            for r in records
            if r.mask is not None
        }
        if masks:
            save_checkpoint(os.path.join(split_dir, "masks.bin"), masks)
        lines.append(f"split {split} " + " ".join(r.image_id for r in records))
    with open(os.path.join(root, "manifest.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")


def load_suite(root: str) -> DomainSuite:
    manifest_path = os.path.join(root, "manifest.txt")
    try:
        with open(manifest_path) as f:
            lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    except OSError as e:
        raise FormatError(f"cannot read {manifest_path}: {e}") from e

    seed = None
    size_kv: dict[str, str] = {}
    spec_kv: dict[str, dict[str, str]] = {"A": {}, "B": {}, "C": {}}
    split_ids: dict[str, list[str]] = {}
    for line in lines:
        key, _, rest = line.partition(" ")
        if key == "seed":
            seed = int(rest)
        elif key.startswith("sizes."):
            size_kv[key[len("sizes."):]] = rest
        elif key.startswith("spec."):
            _, domain, name = key.split(".", 2)
            spec_kv[domain][name] = rest
        elif key == "split":
            name, _, ids = rest.partition(" ")
            split_ids[name] = ids.split() if ids else []
        else:
            raise FormatError(f"{manifest_path}: unknown line {line!r}")
    if seed is None or set(split_ids) != set(DomainSuite.SPLIT_DOMAINS):
        raise FormatError(f"{manifest_path}: incomplete manifest")

    def parse_spec(kv: dict[str, str]) -> DomainSpec:
        kwargs = {}
        for f in fields(DomainSpec):
            raw = kv[f.name]
            if f.name in ("size_range", "eccentricity"):
                kwargs[f.name] = tuple(float(x) for x in raw.split(","))
            elif f.name == "shape_count":
                kwargs[f.name] = int(raw)
            else:
                kwargs[f.name] = float(raw)
        return DomainSpec(**kwargs)

    sizes = SuiteSizes(**{k: int(v) for k, v in size_kv.items()})
    splits: dict[str, list[ImageRecord]] = {}
    for split, ids in split_ids.items():
        split_dir = os.path.join(root, split)
        images, _ = load_checkpoint(os.path.join(split_dir, "images.bin"))
        masks_path = os.path.join(split_dir, "masks.bin")
        masks = load_checkpoint(masks_path)[0] if os.path.exists(masks_path) else {}
        records = []
        for image_id in ids:
            if image_id not in images:
                raise FormatError(f"{split}: missing image {image_id}")
            mask = masks.get(image_id)
            records.append(
                ImageRecord(
                    image_id=image_id,
                    image=images[image_id],
                    mask=None if mask is None else mask.astype(np.int64),
                )
            )
        splits[split] = records

    return DomainSuite(
        unlabeled_train=splits["unlabeled_train"],
        labeled_pool=splits["labeled_pool"],
        test_in=splits["test_in"],
        test_shift_classifier=splits["test_shift_classifier"],
        test_shift_both=splits["test_shift_both"],
        specs={d: parse_spec(kv) for d, kv in spec_kv.items()},
        sizes=sizes,
        seed=seed,
    )


def preprocess_suite(suite: DomainSuite, normalize) -> DomainSuite:
    """Apply a per-image intensity transform to every split."""
    def conv(records):
        return [replace(r, image=normalize(r.image).astype(np.float32)) for r in records]

    return DomainSuite(
        unlabeled_train=conv(suite.unlabeled_train),
        labeled_pool=conv(suite.labeled_pool),
        test_in=conv(suite.test_in),
        test_shift_classifier=conv(suite.test_shift_classifier),
        test_shift_both=conv(suite.test_shift_both),
        specs=suite.specs,
        sizes=suite.sizes,
        seed=suite.seed,
    )
