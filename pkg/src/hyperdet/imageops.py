"""Gaussian blur and JPEG round-trip on float images in [0, 1]."""

from __future__ import annotations

import io
import math

import numpy as np
from PIL import Image
from scipy.ndimage import correlate1d

from .errors import CodecError
from .preprocess import to_uint8

MIN_SIGMA = 1e-6


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized Gaussian taps on [-r, r] with r = ceil(3 sigma)."""
    radius = max(1, math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image, sigma: float) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if sigma < MIN_SIGMA:
        return img.copy()
    k = gaussian_kernel1d(sigma)
    out = correlate1d(img, k, axis=0, mode="mirror")
    return correlate1d(out, k, axis=1, mode="mirror")


def jpeg_roundtrip(image, quality: int, kind: str = "codec") -> np.ndarray:
    """Encode as JPEG at ``quality`` and decode back to floats in [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 3 and img.shape[2] == 1
    u8 = to_uint8(img[:, :, 0] if squeeze else img)
    try:
        buf = io.BytesIO()
        Image.fromarray(u8).save(buf, format="JPEG", quality=int(quality))
        buf.seek(0)
        with Image.open(buf) as im:
            out = np.asarray(im, dtype=np.uint8).astype(np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise CodecError(f"JPEG round-trip at quality {quality} failed: {exc}", kind=kind) from None
    return out[:, :, None] if squeeze else out
