"""Post-processing perturbations for robustness evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from ..errors import ConfigError
from ..imageops import gaussian_blur, jpeg_roundtrip

log = logging.getLogger(__name__)

KINDS = ("none", "blur", "jpeg")
DOCUMENTED = {"blur": (0.0, 4.0), "jpeg": (30, 100)}
ROBUSTNESS_GRID = (
    [("blur", s) for s in (1, 2, 3, 4)]
    + [("jpeg", q) for q in (90, 80, 70, 60, 50, 40, 30)]
)


@dataclass(frozen=True)
class Perturbation:
    kind: str
    param: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"perturbation kind={self.kind!r}: expected one of {KINDS}")
        if self.kind == "blur" and (self.param is None or self.param < 0):
            raise ConfigError(f"blur sigma={self.param!r}: expected >= 0")
        if self.kind == "jpeg" and (self.param is None or not 1 <= self.param <= 100):
            raise ConfigError(f"jpeg quality={self.param!r}: expected 1..100")
        lo_hi = DOCUMENTED.get(self.kind)
        if lo_hi and not lo_hi[0] <= self.param <= lo_hi[1]:
            log.warning("%s parameter %s outside the documented range %s", self.kind, self.param, lo_hi)

    @classmethod
    def parse(cls, text: str) -> "Perturbation":
        """``'blur:2'``, ``'jpeg:70'`` or ``'none'``."""
        kind, _, param = text.strip().partition(":")
        kind = kind.strip().lower()
        if kind in ("", "none", "identity"):
            return cls("none")
        try:
            value = float(param)
        except ValueError:
            raise ConfigError(f"perturbation {text!r}: expected kind:value, e.g. blur:2 or jpeg:70") from None
        return cls(kind, int(value) if kind == "jpeg" else value)

    def describe(self) -> dict:
        return {"kind": self.kind, "param": self.param}

    def __call__(self, image):
        return perturb(image, self.kind, self.param)


def perturb(image, kind: str, param=None):
    """Blur with a truncated Gaussian (radius ceil(3 sigma)) or JPEG re-encode at ``param``."""
    if kind == "none":
        return image
    if kind == "blur":
        return gaussian_blur(image, float(param))
    if kind == "jpeg":
        return jpeg_roundtrip(image, int(param), kind="perturb-codec")
    raise ConfigError(f"perturbation kind={kind!r}: expected one of {KINDS}")
