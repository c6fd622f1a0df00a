"""Average precision, accuracy and the per-generator report."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateAPError, LabelError

DECISION_BOUNDARY = 0.5


def _validate(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise LabelError(f"{s.size} scores but {y.size} labels")
    if not np.all((y == 0) | (y == 1)):
        raise LabelError("labels must be 0 (real) or 1 (fake)")
    return s, y.astype(np.int64)


def average_precision(scores, labels) -> float:
    """AP with fakes as positives: mean precision at each positive's rank.

    Tied scores form one threshold, so every member of a tie shares the
    precision measured at the bottom of the tie.
    """
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise DegenerateAPError("average precision needs at least one real and one fake sample")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    # Last index of each run of equal scores.
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp_at = tp[last]
    precision = tp_at / (last + 1)
    new_pos = np.diff(np.r_[0, tp_at])
    return float(np.sum(new_pos * precision) / n_pos)


def accuracy(scores, labels, boundary: float = DECISION_BOUNDARY) -> float:
    """Fraction correct, score >= boundary counting as fake."""
    s, y = _validate(scores, labels)
    if s.size == 0:
        raise LabelError("accuracy of an empty set")
    return float(np.mean((s >= boundary).astype(np.int64) == y))


@dataclass
class GeneratorMetrics:
    acc: float
    ap: float | None
    n_real: int
    n_fake: int
    real_acc: float | None = None
    fake_acc: float | None = None

    @property
    def degenerate(self) -> bool:
        return self.ap is None


@dataclass
class MetricsReport:
    """Per-generator accuracy/AP in percent plus their unweighted means."""

    per_generator: dict
    config: dict = field(default_factory=dict)
    perturbation: dict | None = None
    scores: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def avg_acc(self) -> float:
        return float(np.mean([m.acc for m in self.per_generator.values()]))

    @property
    def mAP(self) -> float | None:
        aps = [m.ap for m in self.per_generator.values() if m.ap is not None]
        return float(np.mean(aps)) if aps else None

    def summary(self) -> dict:
        return {
            "avg_acc": self.avg_acc,
            "mAP": self.mAP,
            "per_generator": {
                g: {"acc": m.acc, "ap": m.ap, "n_real": m.n_real, "n_fake": m.n_fake,
                    "ap_degenerate": m.degenerate}
                for g, m in self.per_generator.items()
            },
        }

    def to_dict(self) -> dict:
        d = self.summary()
        d["perturbation"] = self.perturbation
        d["config"] = self.config
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, **kw)

    def to_table(self) -> str:
        rows = [("generator", "acc", "AP", "real", "fake")]
        for g, m in self.per_generator.items():
            rows.append((g, f"{m.acc:.2f}", "degenerate" if m.ap is None else f"{m.ap:.2f}",
                         str(m.n_real), str(m.n_fake)))
        mAP = self.mAP
        rows.append(("mean", f"{self.avg_acc:.2f}", "n/a" if mAP is None else f"{mAP:.2f}", "", ""))
        widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
        lines = ["  ".join(v.ljust(w) if c == 0 else v.rjust(w) for c, (v, w) in enumerate(zip(r, widths)))
                 for r in rows]
        lines.insert(1, "-" * len(lines[0]))
        lines.insert(len(lines) - 1, "-" * len(lines[0]))
        if self.perturbation:
            lines.insert(0, f"perturbation: {self.perturbation}")
        return "\n".join(lines)


def generator_metrics(scores, labels) -> GeneratorMetrics:
    s, y = _validate(scores, labels)
    pred = s >= DECISION_BOUNDARY
    try:
        ap = 100.0 * average_precision(s, y)
    except DegenerateAPError:
        ap = None
    real, fake = y == 0, y == 1
    return GeneratorMetrics(
        acc=100.0 * accuracy(s, y),
        ap=ap,
        n_real=int(real.sum()),
        n_fake=int(fake.sum()),
        real_acc=100.0 * float(np.mean(~pred[real])) if real.any() else None,
        fake_acc=100.0 * float(np.mean(pred[fake])) if fake.any() else None,
    )
