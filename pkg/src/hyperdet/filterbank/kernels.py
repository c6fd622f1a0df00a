"""SRM kernel bank and its five-group partition."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ..errors import GroupResolutionError, KernelInvariantError, KernelManifestError

N_KERNELS = 30
KERNEL_SIZE = 5


@dataclass(frozen=True)
class FilterKernel:
    id: int
    weights: np.ndarray
    normalizer: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (KERNEL_SIZE, KERNEL_SIZE):
            raise KernelInvariantError(
                f"kernel {self.id}: weights must be {KERNEL_SIZE}x{KERNEL_SIZE}, got {w.shape}"
            )
        total = math.fsum(w.ravel())
        if abs(total) > 1e-12 * max(1.0, np.abs(w).sum()):
            raise KernelInvariantError(f"kernel {self.id}: weights sum to {total:g}, expected 0")
        if not self.normalizer > 0:
            raise KernelInvariantError(f"kernel {self.id}: normalizer must be > 0")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "normalizer", float(self.normalizer))

    @property
    def scaled(self) -> np.ndarray:
        return self.weights / self.normalizer


@dataclass(frozen=True)
class FilterGroup:
    group_id: int
    kernel_ids: tuple
    description: str = ""

    @property
    def size(self) -> int:
        return len(self.kernel_ids)


GROUPS: tuple = (
    FilterGroup(1, tuple(range(1, 9)), "simple directional edges (first-order)"),
    FilterGroup(2, tuple(range(9, 13)), "stronger weight variation edges (second-order)"),
    FilterGroup(3, tuple(range(13, 21)), "multi-level edges and curves (third-order)"),
    FilterGroup(4, tuple(range(21, 26)), "coarse edges and contours (3x3 square/edge)"),
    FilterGroup(5, tuple(range(26, 31)), "high-order edges and texture (5x5 square/edge)"),
)


def get_group(group_id: int) -> FilterGroup:
    for g in GROUPS:
        if g.group_id == group_id:
            return g
    raise GroupResolutionError(f"no filter group {group_id}; expected 1..{len(GROUPS)}")


def group_of(kernel_id: int) -> int:
    for g in GROUPS:
        if kernel_id in g.kernel_ids:
            return g.group_id
    raise GroupResolutionError(f"kernel {kernel_id} belongs to no group")


@dataclass(frozen=True)
class FilterBank:
    kernels: dict = field(default_factory=dict)
    source: str = ""

    def __getitem__(self, kernel_id: int) -> FilterKernel:
        return self.kernels[kernel_id]

    def __contains__(self, kernel_id) -> bool:
        return kernel_id in self.kernels

    def __iter__(self) -> Iterator[FilterKernel]:
        return iter(self.kernels[k] for k in sorted(self.kernels))

    def __len__(self) -> int:
        return len(self.kernels)

    @property
    def ids(self) -> list:
        return sorted(self.kernels)

    def resolve(self, group: FilterGroup) -> list:
        missing = [k for k in group.kernel_ids if k not in self.kernels]
        if missing:
            raise GroupResolutionError(
                f"group {group.group_id} references kernels {missing} absent from the bank"
            )
        return [self.kernels[k] for k in group.kernel_ids]

    def stack(self, group: FilterGroup) -> tuple:
        """(N, 5, 5) weight stack and (N,) normalizers for a group, in group order."""
        ks = self.resolve(group)
        return (
            np.stack([k.weights for k in ks]).astype(np.float64),
            np.array([k.normalizer for k in ks], dtype=np.float64),
        )

    def to_text(self) -> str:
        lines = [
            "# SRM basic high-pass kernels",
            "# format: id, 25 row-major weights, normalizer q",
        ]
        for k in self:
            vals = " ".join(_fmt(v) for v in k.weights.ravel())
            lines.append(f"{k.id} {vals} {_fmt(k.normalizer)}")
        return "\n".join(lines) + "\n"


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def default_kernel_path() -> Path:
    return Path(str(resources.files("hyperdet.filterbank") / "data" / "srm_kernels.txt"))


def parse_kernels(text: str, source: str = "<string>", expected: int = N_KERNELS) -> FilterBank:
    kernels = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 27:
            raise KernelManifestError(
                f"{source}:{lineno}: expected 27 fields (id, 25 weights, normalizer), got {len(parts)}"
            )
        try:
            kid = int(parts[0])
            vals = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise KernelManifestError(f"{source}:{lineno}: {exc}") from None
        if kid in kernels:
            raise KernelManifestError(f"{source}:{lineno}: duplicate kernel id {kid}")
        kernels[kid] = FilterKernel(kid, np.array(vals[:25]).reshape(5, 5), vals[25])
    if expected is not None:
        want = set(range(1, expected + 1))
        if set(kernels) != want:
            missing = sorted(want - set(kernels))
            extra = sorted(set(kernels) - want)
            raise KernelManifestError(
                f"{source}: expected kernel ids 1..{expected}, got {len(kernels)} kernels"
                f" (missing {missing}, unexpected {extra})"
            )
    return FilterBank(kernels, source)


def load_kernels(path=None) -> FilterBank:
    """Load a kernel bank from the text manifest (defaults to the bundled SRM set)."""
    path = Path(path) if path is not None else default_kernel_path()
    try:
        text = path.read_text()
    except OSError as exc:
        raise KernelManifestError(f"cannot read kernel file {path}: {exc}") from None
    return parse_kernels(text, str(path))


_DEFAULT_BANK = None


def default_bank() -> FilterBank:
    global _DEFAULT_BANK
    if _DEFAULT_BANK is None:
        _DEFAULT_BANK = load_kernels()
    return _DEFAULT_BANK


def synthetic_group(kernel_ids: Sequence[int], group_id: int = 0) -> FilterGroup:
    return FilterGroup(group_id, tuple(kernel_ids), "ad hoc")
