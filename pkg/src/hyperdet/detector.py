"""Merged multi-expert detection with the optional early-exit loop."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from .backbone import DetectorNet
from .checkpoint import checkpoint_hash, load_checkpoint
from .errors import EmptyResultError, HyperDetError
from .filterbank import FilterBank, default_bank
from .hyperlora import ORIGINAL_EXPERT
from .preprocess import IMAGE_SUFFIXES, load_image, view_tensor

DECISION_BOUNDARY = 0.5
DISABLED = -math.inf


@dataclass
class Verdict:
    merged_score: float
    per_expert_scores: list
    experts: list
    experts_evaluated: int
    label: str
    threshold_used: float
    normalized_score: float
    path: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        # JSON has no infinities.
        if math.isinf(self.threshold_used):
            d["threshold_used"] = "inf" if self.threshold_used > 0 else "-inf"
        return d


@dataclass
class DetectionError:
    path: str
    error: str
    message: str

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DetectorModel:
    """A trained network plus the filter bank it was trained with; read-only after load."""

    net: DetectorNet
    bank: FilterBank = field(default_factory=default_bank)
    checkpoint_hash: str | None = None
    manifest: dict | None = None

    def __post_init__(self):
        self.net.eval()
        self.net.cache_loras = True

    @classmethod
    def load(cls, directory) -> "DetectorModel":
        net, bank, manifest = load_checkpoint(directory)
        return cls(net, bank, checkpoint_hash(directory), manifest)

    @property
    def merge(self) -> str:
        return self.net.cfg.merge

    def views(self, image) -> torch.Tensor:
        return view_tensor(self.net, image, self.bank)

    def expert_output(self, views: torch.Tensor, expert: int) -> float:
        """Sigmoid score (or logit, when merging logits) of one expert on its view."""
        with torch.no_grad():
            z = self.net.logits(views[expert - 1:expert], expert)
        return float(z[0]) if self.merge == "logit" else float(torch.sigmoid(z)[0])

    def normalize(self, merged: float, count: int) -> float:
        mean = merged / count
        if self.merge == "logit":
            return 1.0 / (1.0 + math.exp(-mean))
        return mean

    def score(self, image) -> float:
        """Normalized merged score over all six experts (no early exit)."""
        return detect(self, image).normalized_score


def detect(model: DetectorModel, image, early_exit_threshold: float | None = DISABLED,
           order=(1, 2, 3, 4, 5)) -> Verdict:
    """Score the six views and merge.

    The first iteration adds the group-1 expert and the original-image expert;
    each later one adds one filtered expert.  After every iteration the loop
    continues only while the running sum is >= the threshold.
    """
    threshold = DISABLED if early_exit_threshold is None else float(early_exit_threshold)
    views = model.views(image)
    y = 0.0
    scores, experts = [], []
    evaluated = 0
    for n, i in enumerate(order):
        if n == 0:
            s_i = model.expert_output(views, i)
            s_o = model.expert_output(views, ORIGINAL_EXPERT)
            scores += [s_i, s_o]
            experts += [i, ORIGINAL_EXPERT]
            y = y + (s_i + s_o)
        else:
            s_i = model.expert_output(views, i)
            scores.append(s_i)
            experts.append(i)
            y = y + s_i
        evaluated += 1
        if not y >= threshold:
            break
    norm = model.normalize(y, len(scores))
    return Verdict(
        merged_score=y,
        per_expert_scores=scores,
        experts=experts,
        experts_evaluated=evaluated,
        label="fake" if norm >= DECISION_BOUNDARY else "real",
        threshold_used=threshold,
        normalized_score=norm,
    )


def expand_inputs(inputs) -> list:
    if isinstance(inputs, (str, Path)):
        inputs = [inputs]
    out = []
    for p in map(Path, inputs):
        if p.is_dir():
            out += sorted(q for q in p.rglob("*") if q.is_file() and q.suffix.lower() in IMAGE_SUFFIXES)
        else:
            out.append(p)
    return out


def detect_batch(model: DetectorModel, paths, early_exit_threshold: float | None = DISABLED):
    """Detect every path in order; failures become inline ``DetectionError`` records.

    Returns ``(results, summary)``.
    """
    results = []
    for p in expand_inputs(paths):
        try:
            v = detect(model, load_image(p), early_exit_threshold)
            v.path = str(p)
            results.append(v)
        except HyperDetError as exc:
            results.append(DetectionError(str(p), exc.kind, str(exc)))
    verdicts = [r for r in results if isinstance(r, Verdict)]
    if not verdicts:
        raise EmptyResultError(f"none of the {len(results)} input(s) could be scored")
    summary = {
        "n_inputs": len(results),
        "n_scored": len(verdicts),
        "n_errors": len(results) - len(verdicts),
        "n_fake": sum(v.label == "fake" for v in verdicts),
        "n_real": sum(v.label == "real" for v in verdicts),
        "checkpoint_hash": model.checkpoint_hash,
    }
    return results, summary

