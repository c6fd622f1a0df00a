"""Averaged Fourier spectra of images and of their group residuals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..filterbank import FilterGroup, as_image, default_bank, group_residual
from ..preprocess import resize


@dataclass
class Spectrum:
    log_magnitude: np.ndarray  # DC-centred, mean of log(1 + |F|)
    power: np.ndarray  # DC-centred, mean of |F|^2
    low_band_fraction: float
    group: int | None

    def save_png(self, path):
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        plt.imsave(path, self.log_magnitude, cmap="gray")


def low_band_fraction(power: np.ndarray, band: int | None = None) -> float:
    """Share of spectral energy inside the centred box of side N/8."""
    n = power.shape[0]
    band = band or max(1, n // 8)
    c0, c1 = power.shape[0] // 2, power.shape[1] // 2
    lo0, lo1 = c0 - band // 2, c1 - band // 2
    total = float(power.sum())
    if total == 0.0:
        return 0.0
    return float(power[lo0:lo0 + band, lo1:lo1 + band].sum()) / total


def average_spectrum(images, group: FilterGroup | None = None, size: int = 256, bank=None) -> Spectrum:
    """Mean centred spectrum over ``images`` (optionally of their group residual)."""
    bank = bank if bank is not None else default_bank()
    images = list(images)
    if not images:
        raise ValueError("average_spectrum needs at least one image")
    logmag = np.zeros((size, size))
    power = np.zeros((size, size))
    for image in images:
        img = resize(as_image(image), size)
        if group is not None:
            img = group_residual(img, group, bank).pixels
        f = np.fft.fftshift(np.fft.fft2(img, axes=(0, 1)), axes=(0, 1))
        mag = np.abs(f)
        logmag += np.log1p(mag).mean(axis=2)
        power += (mag ** 2).mean(axis=2)
    logmag /= len(images)
    power /= len(images)
    return Spectrum(logmag, power, low_band_fraction(power), None if group is None else group.group_id)
