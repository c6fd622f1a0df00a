"""Exception hierarchy.

Every error carries a short machine-readable ``kind`` so callers (the CLI,
batch detection) can report failures without string matching.
"""


class HyperDetError(Exception):
    kind = "error"

    def __init__(self, message, kind=None):
        super().__init__(message)
        if kind is not None:
            self.kind = kind

    def __str__(self):
        return f"[{self.kind}] {super().__str__()}"


class ConfigError(HyperDetError, ValueError):
    """Invalid configuration value; the message names the key and accepted range."""

    kind = "config"


class KernelManifestError(HyperDetError):
    kind = "kernel-manifest"


class KernelInvariantError(HyperDetError):
    kind = "kernel-invariant"


class GroupResolutionError(HyperDetError):
    kind = "group-resolution"


class InvalidImageError(HyperDetError, ValueError):
    kind = "invalid-image"


class ShapeError(HyperDetError, ValueError):
    kind = "shape"


class UnknownSiteError(HyperDetError, KeyError):
    kind = "unknown-site"


class UnknownExpertError(HyperDetError, IndexError):
    kind = "unknown-expert"


class InputSizeError(HyperDetError, ValueError):
    kind = "input-size"


class LabelError(HyperDetError, ValueError):
    kind = "label"


class DivergenceError(HyperDetError, FloatingPointError):
    kind = "divergence"


class CodecError(HyperDetError):
    kind = "codec"


class IngestionError(HyperDetError):
    kind = "ingestion"

    def __init__(self, message, paths=()):
        super().__init__(message)
        self.paths = list(paths)


class DegenerateAPError(HyperDetError, ValueError):
    kind = "degenerate-ap"


class EmptyResultError(HyperDetError):
    kind = "empty-result"


class CheckpointError(HyperDetError):
    kind = "checkpoint"
