"""Image decoding and the image -> six standardized view tensors pipeline."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from .errors import InvalidImageError
from .filterbank import FilterBank, default_bank, make_views

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


def load_image(path) -> np.ndarray:
    """Decode to an H x W x 3 float64 array in [0, 1]."""
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise InvalidImageError(f"cannot decode {path}: {exc}") from None
    return arr.astype(np.float64) / 255.0


def to_uint8(image) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def save_image(path, image):
    Image.fromarray(to_uint8(image)).save(Path(path))


def resize(pixels: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of an H x W x C array to size x size (no-op when already there)."""
    if pixels.shape[0] == size and pixels.shape[1] == size:
        return pixels
    t = torch.from_numpy(np.ascontiguousarray(pixels.transpose(2, 0, 1)))[None]
    out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return out[0].numpy().transpose(1, 2, 0)


def view_stack(image, image_size: int, bank: FilterBank | None = None) -> np.ndarray:
    """(6, size, size, C) array: five group residuals then the original, each resized."""
    views = make_views(image, bank if bank is not None else default_bank())
    return np.stack([resize(v.pixels, image_size) for v in views])


def view_tensor(model, image, bank: FilterBank | None = None) -> torch.Tensor:
    """Standardized (6, C, H, W) tensor ready for ``model``."""
    return model.standardize(view_stack(image, model.cfg.backbone.image_size, bank))
