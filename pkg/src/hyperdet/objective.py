"""Binary cross-entropy and the original/filtered weighted total loss."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError, LabelError


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.1
    epsilon: float = 1e-7

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha={self.alpha}: must lie in [0, 1]")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon={self.epsilon}: must be > 0")


def _as_float(values) -> torch.Tensor:
    # Plain sequences default to float64 rather than torch's float32.
    if isinstance(values, torch.Tensor):
        return values if values.is_floating_point() else values.to(torch.float64)
    return torch.as_tensor(values, dtype=torch.float64)


def _labels(labels, like: torch.Tensor) -> torch.Tensor:
    y = torch.as_tensor(labels, dtype=like.dtype, device=like.device)
    if y.shape != like.shape:
        raise LabelError(f"labels shape {tuple(y.shape)} != scores shape {tuple(like.shape)}")
    if not torch.all((y == 0) | (y == 1)):
        raise LabelError("labels must be 0 (real) or 1 (fake)")
    return y


def bce_loss(scores, labels, epsilon: float = 1e-7) -> torch.Tensor:
    """Mean BCE over probabilities, clamped to [eps, 1 - eps]."""
    p = _as_float(scores)
    y = _labels(labels, p)
    p = p.clamp(epsilon, 1.0 - epsilon)
    return -(y * torch.log(p) + (1 - y) * torch.log1p(-p)).mean()


def bce_with_logits(logits, labels) -> torch.Tensor:
    """Mean BCE computed from pre-sigmoid logits (stable log-sum-exp form)."""
    z = _as_float(logits)
    y = _labels(labels, z)
    return F.binary_cross_entropy_with_logits(z, y, reduction="mean")


def total_loss(loss_original, loss_filtered, cfg: LossConfig = LossConfig()):
    """``alpha * L_original + (1 - alpha) * L_filtered``.

    Written as ``L_f + alpha (L_o - L_f)`` so equal inputs come back unchanged,
    and the endpoints return the selected term exactly without touching the other.
    """
    a = cfg.alpha
    if a == 0.0:
        return loss_filtered
    if a == 1.0:
        return loss_original
    return loss_filtered + a * (loss_original - loss_filtered)
