"""Dataset ingestion (``<root>/<split>/<generator>/<real|fake>/*``) and a synthetic toy corpus."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import IngestionError, InvalidImageError, LabelError
from .preprocess import IMAGE_SUFFIXES, load_image, save_image

LABELS = {"real": 0, "fake": 1}


@dataclass
class LabeledSample:
    path: Path | None
    label: int
    generator: str
    image: np.ndarray | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise LabelError(f"label must be 0 or 1, got {self.label!r}")

    def load(self) -> np.ndarray:
        if self.image is not None:
            return self.image
        return load_image(self.path)


def _images_in(d: Path) -> list:
    return sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def _is_generator_dir(d: Path) -> bool:
    return any((d / name).is_dir() for name in LABELS)


def resolve_split(root, split: str | None) -> Path:
    root = Path(root)
    if split and (root / split).is_dir():
        return root / split
    if root.is_dir() and any(_is_generator_dir(d) for d in root.iterdir() if d.is_dir()):
        return root
    raise IngestionError(f"no dataset split {split!r} under {root}", [root])


def scan_dataset(root, split: str | None = "test") -> "OrderedDict[str, list]":
    """Map generator name -> samples, generators and files in sorted order."""
    base = resolve_split(root, split)
    out = OrderedDict()
    for gdir in sorted(d for d in base.iterdir() if d.is_dir() and _is_generator_dir(d)):
        samples = []
        for name, label in LABELS.items():
            if (gdir / name).is_dir():
                samples += [LabeledSample(p, label, gdir.name) for p in _images_in(gdir / name)]
        if samples:
            out[gdir.name] = samples
    if not out:
        raise IngestionError(f"dataset under {base} contains no images", [base])
    return out


def flatten(dataset) -> list:
    return [s for samples in dataset.values() for s in samples]


def check_readable(samples) -> None:
    bad = []
    for s in samples:
        try:
            s.load()
        except InvalidImageError:
            bad.append(s.path)
    if bad:
        raise IngestionError(f"{len(bad)} unreadable image(s): {', '.join(map(str, bad[:10]))}", bad)


# synthetic corpus -----------------------------------------------------------

def smooth_image(rng: np.random.Generator, size: int, channels: int = 3) -> np.ndarray:
    """Low-frequency random field in roughly [0.15, 0.85]."""
    noise = rng.standard_normal((size, size, channels))
    field = gaussian_filter(noise, sigma=(size / 8, size / 8, 0), mode="wrap")
    field = (field - field.mean()) / (field.std() + 1e-12)
    return np.clip(0.5 + 0.12 * field, 0.15, 0.85)


def checker(size: int, amplitude: float, channels: int = 3) -> np.ndarray:
    i, j = np.indices((size, size))
    pattern = np.where((i + j) % 2 == 0, amplitude, -amplitude)
    return np.repeat(pattern[:, :, None], channels, axis=2)


def make_checker_dataset(
    root,
    n_images: int = 200,
    size: int = 32,
    amplitude: float = 0.1,
    seed: int = 0,
    split: str = "train",
    generator: str = "checker",
) -> Path:
    """Write a balanced real/fake corpus where fakes carry an additive pixel checkerboard."""
    rng = np.random.default_rng(seed)
    base = Path(root) / split / generator
    for name in LABELS:
        (base / name).mkdir(parents=True, exist_ok=True)
    pat = checker(size, amplitude)
    for n in range(n_images):
        img = smooth_image(rng, size)
        if n % 2:
            save_image(base / "fake" / f"{n:05d}.png", np.clip(img + pat, 0.0, 1.0))
        else:
            save_image(base / "real" / f"{n:05d}.png", img)
    return Path(root)
