"""Residual views: per-kernel SRM responses, group means and the six-view stack."""

from __future__ import annotations

import logging
import os

import numpy as np

from ..errors import InvalidImageError
from .kernels import GROUPS, FilterBank, FilterGroup, FilterKernel, default_bank

log = logging.getLogger(__name__)

ORIGINAL = "original"
N_VIEWS = len(GROUPS) + 1

try:
    if os.environ.get("HYPERDET_PURE_PYTHON"):
        raise ImportError("compiled core disabled by HYPERDET_PURE_PYTHON")
    from ._core import group_residual_padded as _compiled_kernel
except ImportError as exc:  # pragma: no cover - depends on build
    log.debug("SRM compiled core unavailable (%s); using numpy fallback", exc)
    _compiled_kernel = None

from ._fallback import group_residual_padded as _python_kernel

BACKENDS = {"python": _python_kernel}
if _compiled_kernel is not None:
    BACKENDS["compiled"] = _compiled_kernel
BACKEND = "compiled" if _compiled_kernel is not None else "python"


def _kernel_impl(backend):
    name = backend or BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; available: {sorted(BACKENDS)}") from None


class ResidualView:
    """An image-shaped map produced by one filter group, or the untouched input."""

    __slots__ = ("source_group", "pixels")

    def __init__(self, source_group, pixels):
        self.source_group = source_group
        self.pixels = pixels

    @property
    def is_original(self) -> bool:
        return self.source_group == ORIGINAL

    def __array__(self, dtype=None, copy=None):
        return self.pixels if dtype is None else self.pixels.astype(dtype)

    def __repr__(self):
        return f"ResidualView(source_group={self.source_group!r}, shape={self.pixels.shape})"


def as_image(image) -> np.ndarray:
    """Coerce to a finite float64 H x W x C array (2-D input gains a channel axis)."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise InvalidImageError(f"expected H x W x C image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidImageError(f"empty image of shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidImageError("image contains non-finite pixels")
    return arr


def _pad_chw(img: np.ndarray) -> np.ndarray:
    # (H, W, C) -> (C, H+4, W+4), mirror reflection without edge repeat.
    chw = np.transpose(img, (2, 0, 1))
    return np.ascontiguousarray(np.pad(chw, ((0, 0), (2, 2), (2, 2)), mode="reflect"))


def _run(img, weights, norms, backend=None) -> np.ndarray:
    out = _kernel_impl(backend)(
        _pad_chw(img), np.ascontiguousarray(weights, dtype=np.float64),
        np.ascontiguousarray(norms, dtype=np.float64),
    )
    return np.ascontiguousarray(np.transpose(out, (1, 2, 0)))


def apply_kernel(image, kernel: FilterKernel, backend=None) -> np.ndarray:
    """Normalized SRM residual of one kernel, per channel, same size as ``image``."""
    img = as_image(image)
    return _run(img, kernel.weights[None], np.array([kernel.normalizer]), backend)


def group_residual(image, group: FilterGroup, bank: FilterBank | None = None, backend=None) -> ResidualView:
    """Arithmetic mean of the normalized residuals of every kernel in ``group``."""
    bank = bank if bank is not None else default_bank()
    weights, norms = bank.stack(group)
    img = as_image(image)
    return ResidualView(group.group_id, _run(img, weights, norms, backend))


def make_views(image, bank: FilterBank | None = None, groups=GROUPS, backend=None) -> list:
    """Five group residuals followed by the original image, in that fixed order."""
    bank = bank if bank is not None else default_bank()
    img = as_image(image)
    views = [group_residual(img, g, bank, backend) for g in groups]
    views.append(ResidualView(ORIGINAL, img))
    return views
