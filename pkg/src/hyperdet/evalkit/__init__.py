"""Evaluation toolkit: metrics, perturbations, robustness sweeps and spectra."""

from .evaluate import evaluate, parse_grid, robustness_sweep, write_sweep
from .metrics import MetricsReport, accuracy, average_precision, generator_metrics
from .perturb import ROBUSTNESS_GRID, Perturbation, perturb
from .spectrum import Spectrum, average_spectrum, low_band_fraction

__all__ = [
    "MetricsReport", "ROBUSTNESS_GRID", "Perturbation", "Spectrum", "accuracy", "average_precision",
    "average_spectrum", "evaluate", "generator_metrics", "low_band_fraction", "parse_grid",
    "perturb", "robustness_sweep", "write_sweep",
]
