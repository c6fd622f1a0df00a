"""Training loop: original view through expert 6, group-i views through expert i.

Each update minimizes ``alpha * L_original + (1 - alpha) * L_filtered_i`` and
touches only the hypernetwork and the classification head.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .backbone import BackboneSpec, DetectorNet, ModelConfig
from .checkpoint import load_checkpoint, load_optimizer_state, save_checkpoint
from .data import check_readable, flatten, scan_dataset
from .errors import ConfigError, DivergenceError, IngestionError
from .filterbank import FilterBank, default_bank, load_kernels
from .hyperlora import ORIGINAL_EXPERT
from .imageops import gaussian_blur, jpeg_roundtrip
from .objective import LossConfig, bce_with_logits, total_loss
from .preprocess import view_stack

log = logging.getLogger(__name__)

FILTERED_EXPERTS = (1, 2, 3, 4, 5)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 5
    batch_size: int = 16
    rank: int = 16
    fine_tuned_blocks: int = 8
    alpha: float = 0.1
    p_blur: float = 0.1
    p_jpeg: float = 0.1
    blur_sigma: tuple = (0.0, 2.0)
    jpeg_quality: tuple = (60, 95)
    seed: int = 0
    train_root: str = ""
    train_split: str = "train"
    val_root: str = ""
    val_split: str = "val"
    checkpoint_dir: str = "runs/hyperdet"
    kernel_file: str = ""
    schedule: str = "round-robin"
    update: str = "accumulate"
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        self.blur_sigma = tuple(float(v) for v in self.blur_sigma)
        self.jpeg_quality = tuple(int(v) for v in self.jpeg_quality)
        checks = [
            ("learning_rate", self.learning_rate > 0, "> 0"),
            ("epochs", isinstance(self.epochs, int) and self.epochs >= 0, "integer >= 0"),
            ("batch_size", isinstance(self.batch_size, int) and self.batch_size > 0, "integer > 0"),
            ("rank", isinstance(self.rank, int) and self.rank > 0, "integer > 0"),
            ("fine_tuned_blocks", isinstance(self.fine_tuned_blocks, int) and self.fine_tuned_blocks > 0,
             "integer > 0"),
            ("alpha", 0.0 <= self.alpha <= 1.0, "in [0, 1]"),
            ("p_blur", 0.0 <= self.p_blur <= 1.0, "in [0, 1]"),
            ("p_jpeg", 0.0 <= self.p_jpeg <= 1.0, "in [0, 1]"),
            ("blur_sigma", len(self.blur_sigma) == 2 and 0 <= self.blur_sigma[0] <= self.blur_sigma[1],
             "[lo, hi] with 0 <= lo <= hi"),
            ("jpeg_quality", len(self.jpeg_quality) == 2
             and 1 <= self.jpeg_quality[0] <= self.jpeg_quality[1] <= 100, "[lo, hi] within 1..100"),
            ("schedule", self.schedule in ("round-robin", "full"), "'round-robin' or 'full'"),
            ("update", self.update in ("accumulate", "step-per-view"), "'accumulate' or 'step-per-view'"),
        ]
        for key, ok, accepted in checks:
            if not ok:
                raise ConfigError(f"{key}={getattr(self, key)!r}: expected {accepted}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown training config key(s): {', '.join(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blur_sigma"], d["jpeg_quality"] = list(self.blur_sigma), list(self.jpeg_quality)
        return d

    def model_config(self) -> ModelConfig:
        m = dict(self.model)
        bb = dict(m.pop("backbone", {}))
        bb.setdefault("n_finetune", self.fine_tuned_blocks)
        m.setdefault("rank", self.rank)
        m.setdefault("seed", self.seed)
        try:
            return ModelConfig(backbone=BackboneSpec(**bb), **m)
        except TypeError as exc:
            raise ConfigError(f"model: {exc}") from None

    def experts_for_batch(self, batch_index: int) -> tuple:
        if self.schedule == "full":
            return FILTERED_EXPERTS
        return (FILTERED_EXPERTS[batch_index % len(FILTERED_EXPERTS)],)


# augmentation ---------------------------------------------------------------

def _augment(image, cfg: TrainConfig, rng: np.random.Generator):
    # Fixed draw order keeps the stream aligned whatever fires.
    fire_blur = rng.random() < cfg.p_blur
    sigma = rng.uniform(*cfg.blur_sigma)
    fire_jpeg = rng.random() < cfg.p_jpeg
    quality = int(rng.integers(cfg.jpeg_quality[0], cfg.jpeg_quality[1] + 1))
    out = image
    if fire_blur:
        out = gaussian_blur(out, sigma)
    if fire_jpeg:
        out = jpeg_roundtrip(out, quality, kind="augment-codec")
    return out, (fire_blur or fire_jpeg)


def augment(image, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    """Random Gaussian blur then JPEG re-encoding, each with its own probability."""
    return _augment(image, cfg, rng)[0]


# one optimization step --------------------------------------------------------

@dataclass
class StepReport:
    experts: tuple
    loss_original: float
    loss_filtered: dict
    total: float
    grad_norm: float


class Trainer:
    """Owns the optimizer; the single writer of the model's trainable parameters."""

    def __init__(self, model: DetectorNet, cfg: TrainConfig, lr: float | None = None, dump_dir=None):
        self.model = model
        self.cfg = cfg
        self.loss_cfg = LossConfig(alpha=cfg.alpha)
        self.dump_dir = Path(dump_dir) if dump_dir else None
        params = list(model.trainable_parameters().values())
        self.optimizer = torch.optim.Adam(
            params, lr=cfg.learning_rate if lr is None else lr, weight_decay=0.0, foreach=False
        )

    def _loss(self, views, labels, expert, grad: bool):
        view_idx = expert - 1
        with torch.set_grad_enabled(grad):
            return bce_with_logits(self.model.logits(views[:, view_idx], expert), labels)

    def _objective(self, views, labels, experts):
        alpha = self.loss_cfg.alpha
        lo = self._loss(views, labels, ORIGINAL_EXPERT, grad=alpha > 0)
        lfs, total = {}, None
        for i in experts:
            lf = self._loss(views, labels, i, grad=alpha < 1)
            lfs[i] = lf
            t = total_loss(lo, lf, self.loss_cfg)
            total = t if total is None else total + t
        return lo, lfs, total

    def _apply(self, lo, lfs, total, experts) -> StepReport:
        if not torch.isfinite(total):
            self._dump(lo, lfs, total, experts)
            raise DivergenceError(
                f"non-finite loss {float(total.detach())} (L_original={float(lo.detach())}, "
                f"L_filtered={ {i: float(v.detach()) for i, v in lfs.items()} })"
            )
        if total.requires_grad:
            total.backward()
        grads = [p.grad for p in self.optimizer.param_groups[0]["params"] if p.grad is not None]
        gnorm = math.sqrt(sum(float((g.detach() ** 2).sum()) for g in grads)) if grads else 0.0
        self.optimizer.step()
        self.model.invalidate_cache()
        return StepReport(
            tuple(experts),
            float(lo.detach()),
            {i: float(v.detach()) for i, v in lfs.items()},
            float(total.detach()),
            gnorm,
        )

    def _dump(self, lo, lfs, total, experts):
        if self.dump_dir is None:
            return
        self.dump_dir.mkdir(parents=True, exist_ok=True)
        payload = {
            "experts": list(experts),
            "loss_original": float(lo.detach()),
            "loss_filtered": {str(i): float(v.detach()) for i, v in lfs.items()},
            "total": float(total.detach()),
            "param_norms": {n: float(p.detach().norm()) for n, p in self.model.trainable_parameters().items()},
        }
        (self.dump_dir / "divergence.json").write_text(json.dumps(payload, indent=2, sort_keys=True))

    def step(self, views: torch.Tensor, labels, experts) -> StepReport | list:
        """One update on a batch of (N, 6, C, H, W) standardized views.

        ``experts`` is one filtered-view index (1..5) or several.  Several
        experts sum their losses into one update, or take one update each
        when ``update == 'step-per-view'`` (a list of reports is returned).
        """
        if isinstance(experts, int):
            experts = (experts,)
        bad = [i for i in experts if i not in FILTERED_EXPERTS]
        if bad:
            raise ConfigError(f"expert_i={bad}: expected values in 1..5")
        labels = torch.as_tensor(labels, dtype=views.dtype)
        self.model.train()
        if self.cfg.update == "step-per-view" and len(experts) > 1:
            reports = []
            for i in experts:
                self.optimizer.zero_grad(set_to_none=True)
                reports.append(self._apply(*self._objective(views, labels, (i,)), (i,)))
            return reports
        self.optimizer.zero_grad(set_to_none=True)
        return self._apply(*self._objective(views, labels, experts), experts)


def train_step(trainer: Trainer, views, labels, expert_i) -> StepReport:
    return trainer.step(views, labels, expert_i)


# full training run ------------------------------------------------------------

class _ViewCache:
    """Decoded images and their un-augmented view stacks, keyed by sample index."""

    def __init__(self, samples, image_size, bank):
        self.samples = samples
        self.image_size = image_size
        self.bank = bank
        self._images = {}
        self._views = {}

    def image(self, n):
        if n not in self._images:
            self._images[n] = self.samples[n].load()
        return self._images[n]

    def views(self, n, cfg, rng):
        img, changed = _augment(self.image(n), cfg, rng)
        if changed:
            return view_stack(img, self.image_size, self.bank)
        if n not in self._views:
            self._views[n] = view_stack(img, self.image_size, self.bank)
        return self._views[n]


def _load_split(root, split):
    try:
        dataset = scan_dataset(root, split)
    except OSError as exc:
        raise IngestionError(f"cannot read dataset {root}: {exc}", [root]) from None
    samples = flatten(dataset)
    check_readable(samples)
    return dataset, samples


def train_epoch(trainer: Trainer, cache: _ViewCache, epoch: int) -> dict:
    cfg = trainer.cfg
    rng = np.random.default_rng([cfg.seed, epoch])
    order = rng.permutation(len(cache.samples))
    n_batches = math.ceil(len(order) / cfg.batch_size)
    totals, los, lfs = [], [], []
    for b in range(n_batches):
        idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
        stacks = np.stack([cache.views(int(n), cfg, rng) for n in idx])
        views = trainer.model.standardize(stacks.reshape(-1, *stacks.shape[2:]))
        views = views.view(len(idx), stacks.shape[1], *views.shape[1:])
        labels = [cache.samples[int(n)].label for n in idx]
        reports = trainer.step(views, labels, cfg.experts_for_batch(epoch * n_batches + b))
        for r in reports if isinstance(reports, list) else [reports]:
            totals.append(r.total / len(r.experts))
            los.append(r.loss_original)
            lfs.extend(r.loss_filtered.values())
    return {
        "epoch": epoch + 1,
        "total_loss": float(np.mean(totals)),
        "loss_original": float(np.mean(los)),
        "loss_filtered": float(np.mean(lfs)),
        "batches": n_batches,
    }


def train(cfg: TrainConfig, out_dir=None, resume_from=None) -> Path:
    """Train to ``cfg.epochs`` total epochs and write the checkpoint directory.

    ``resume_from`` continues a previous checkpoint (model, optimizer state and
    epoch counter); the run is identical to an uninterrupted one.
    """
    from .detector import DetectorModel
    from .evalkit import evaluate

    torch.use_deterministic_algorithms(True)
    out = Path(out_dir or cfg.checkpoint_dir)
    if not cfg.train_root:
        raise IngestionError("train_root is not set", [])
    dataset, samples = _load_split(cfg.train_root, cfg.train_split)
    val = None
    if cfg.val_root:
        val, _ = _load_split(cfg.val_root, cfg.val_split)

    history = []
    if resume_from is not None:
        model, bank, manifest = load_checkpoint(resume_from)
        start = int(manifest["epoch"])
        history = list(manifest.get("metrics", {}).get("history", []))
    else:
        model = DetectorNet(cfg.model_config())
        bank = load_kernels(cfg.kernel_file) if cfg.kernel_file else default_bank()
        start = 0
    trainer = Trainer(model, cfg, dump_dir=out)
    if resume_from is not None:
        load_optimizer_state(resume_from, model, trainer.optimizer)

    cache = _ViewCache(samples, model.cfg.backbone.image_size, bank)
    log_lines = []
    for epoch in range(start, cfg.epochs):
        stats = train_epoch(trainer, cache, epoch)
        history.append(stats)
        log.info("epoch %d/%d total=%.6f original=%.6f filtered=%.6f", epoch + 1, cfg.epochs,
                 stats["total_loss"], stats["loss_original"], stats["loss_filtered"])
        log_lines.append(json.dumps(stats, sort_keys=True))

    model.eval()
    detector = DetectorModel(model, bank)
    metrics = {"history": history, "train": evaluate(detector, dataset).summary()}
    if val is not None:
        metrics["val"] = evaluate(detector, val).summary()
    # Where the run was written is not part of its configuration; leaving it out keeps
    # identical runs byte-identical wherever they land.
    recorded = {k: v for k, v in cfg.to_dict().items() if k != "checkpoint_dir"}
    save_checkpoint(out, model, bank, train_config=recorded, seed=cfg.seed,
                    epoch=max(start, cfg.epochs), metrics=metrics, optimizer=trainer.optimizer)
    with open(out / "train_log.jsonl", "a" if resume_from is not None else "w") as fh:
        fh.writelines(line + "\n" for line in log_lines)
    return out


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **kw)
