"""Per-generator evaluation and robustness sweeps."""

from __future__ import annotations

import csv
import logging
from collections import OrderedDict
from pathlib import Path

from ..data import scan_dataset
from ..errors import IngestionError
from .metrics import MetricsReport, generator_metrics
from .perturb import ROBUSTNESS_GRID, Perturbation

log = logging.getLogger(__name__)


def _as_perturbation(p):
    if p is None or isinstance(p, Perturbation):
        return p
    if isinstance(p, str):
        return Perturbation.parse(p)
    kind, param = p
    return Perturbation(kind, param)


def evaluate(model, dataset, perturbation=None, config: dict | None = None) -> MetricsReport:
    """Score every sample with ``model.score(image)`` (normalized merged score).

    ``dataset`` maps generator name to samples, or is a dataset root.
    """
    if isinstance(dataset, (str, Path)):
        dataset = scan_dataset(dataset)
    if not dataset or not any(dataset.values()):
        raise IngestionError("evaluation dataset is empty")
    pert = _as_perturbation(perturbation)
    per_gen, scores = OrderedDict(), OrderedDict()
    for gen, samples in dataset.items():
        if not samples:
            continue
        s = []
        for sample in samples:
            img = sample.load()
            if pert is not None:
                img = pert(img)
            s.append(float(model.score(img)))
        labels = [sample.label for sample in samples]
        per_gen[gen] = generator_metrics(s, labels)
        scores[gen] = s
        if per_gen[gen].degenerate:
            log.warning("generator %s has a single class; AP marked degenerate", gen)
    return MetricsReport(
        per_generator=per_gen,
        config=dict(config or {}),
        perturbation=None if pert is None else pert.describe(),
        scores=scores,
    )


def parse_grid(specs) -> list:
    """``['blur=1,2,3,4', 'jpeg=90,80']`` -> [('blur', 1.0), ..., ('jpeg', 90), ...]."""
    grid = []
    for spec in specs:
        kind, _, values = spec.partition("=")
        kind = kind.strip().lower()
        for v in filter(None, (x.strip() for x in values.split(","))):
            p = Perturbation.parse(f"{kind}:{v}") if kind != "none" else Perturbation("none")
            grid.append((p.kind, p.param))
    return grid


def robustness_sweep(model, dataset, grid=ROBUSTNESS_GRID, out_dir=None, config: dict | None = None) -> list:
    """One report per grid point; with ``out_dir`` also writes sweep.csv and one plot per metric."""
    reports = [evaluate(model, dataset, (kind, param), config) for kind, param in grid]
    if out_dir is not None and reports:
        write_sweep(reports, out_dir)
    return reports


def write_sweep(reports, out_dir) -> dict:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [(r.perturbation["kind"], r.perturbation["param"], r.avg_acc, r.mAP) for r in reports]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "param", "avg_acc", "mAP"])
        w.writerows(rows)
    written = {"csv": out / "sweep.csv"}
    for col, metric in ((2, "avg_acc"), (3, "mAP")):
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        for ax, kind, xlabel in ((axes[0], "blur", "Gaussian blur sigma"), (axes[1], "jpeg", "JPEG quality")):
            pts = [(r[1], r[col]) for r in rows if r[0] == kind and r[col] is not None]
            if pts:
                ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o")
            if kind == "jpeg":
                ax.invert_xaxis()
            ax.set_xlabel(xlabel)
            ax.set_ylabel(metric)
            ax.set_ylim(0, 100)
            ax.grid(alpha=0.3)
        fig.tight_layout()
        path = out / f"sweep_{metric}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written[metric] = path
    return written
