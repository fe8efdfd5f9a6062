"""Accuracy metrics, outlier-classification confusion matrix, analysis exports.

Reconstruction error is reported as relative L1 / L2 norms of the predicted
field against the clean reference on a dense evaluation grid. The trained
gate doubles as an outlier classifier (reject = weight below a threshold);
analysis exports provide plot-ready CSVs: learned vs true residual density on
the quadrature grid, the per-measurement gate overlay, and gate-parameter
traces.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import ebm as ebm_mod
from .corruption import CorruptedDataset, NoiseSpec
from .pdes import ReferenceField, eval_grid
from .training import TrainedRun


def rmae(pred: np.ndarray, truth: np.ndarray) -> float:
    """Relative mean absolute error ||pred - truth||_1 / ||truth||_1."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    denom = np.sum(np.abs(truth))
    if denom == 0.0:
        raise ValueError("zero-norm truth")
    return float(np.sum(np.abs(pred - truth)) / denom)


def rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    """Relative L2 error ||pred - truth||_2 / ||truth||_2."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    denom = np.linalg.norm(truth.ravel())
    if denom == 0.0:
        raise ValueError("zero-norm truth")
    return float(np.linalg.norm((pred - truth).ravel()) / denom)


@dataclass
class Confusion:
    tp: int    # outlier rejected
    fn: int    # outlier accepted
    fp: int    # normal rejected
    tn: int    # normal accepted

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    @property
    def recall(self) -> float:
        pos = self.tp + self.fn
        return self.tp / pos if pos else float("nan")

    @property
    def precision(self) -> float:
        rej = self.tp + self.fp
        return self.tp / rej if rej else float("nan")

    def percentages(self) -> dict:
        n = self.total
        return {k: 100.0 * v / n for k, v in
                (("tp", self.tp), ("fn", self.fn), ("fp", self.fp), ("tn", self.tn))}


def classify_outliers(run: TrainedRun, dataset: CorruptedDataset,
                      threshold: float = 0.5) -> Confusion:
    """Rejection (gate weight < threshold) against ground-truth labels."""
    _, _, g = run.data_diagnostics(dataset)
    rejected = g < threshold
    out = dataset.is_outlier
    return Confusion(
        tp=int(np.sum(rejected & out)),
        fn=int(np.sum(~rejected & out)),
        fp=int(np.sum(rejected & ~out)),
        tn=int(np.sum(~rejected & ~out)),
    )


@dataclass
class MetricsReport:
    method: str
    benchmark: str
    ratio: float
    seed: int
    rmae: float
    rmse: float
    per_channel_rmae: list
    per_channel_rmse: list
    pde_params: dict
    confusion: dict | None = None
    recall: float | None = None
    precision: float | None = None

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path) -> "MetricsReport":
        with open(path) as fh:
            return cls(**json.load(fh))


def evaluate_run(run: TrainedRun, field: ReferenceField,
                 dataset: CorruptedDataset, benchmark: str, ratio: float,
                 eval_n: int = 120, gate_threshold: float = 0.5) -> MetricsReport:
    """Metrics on the dense evaluation grid, plus gate classification when
    the run has a gate."""
    grid = eval_grid(field, eval_n)
    pred = run.predict(grid.coords)
    per_rmae = [rmae(pred[:, c], grid.clean[:, c]) for c in range(grid.channels)]
    per_rmse = [rmse(pred[:, c], grid.clean[:, c]) for c in range(grid.channels)]
    report = MetricsReport(
        method=run.method, benchmark=benchmark, ratio=ratio, seed=run.seed,
        rmae=rmae(pred, grid.clean), rmse=rmse(pred, grid.clean),
        per_channel_rmae=per_rmae, per_channel_rmse=per_rmse,
        pde_params=dict(run.pde_params),
    )
    if run.gate is not None:
        confusion = classify_outliers(run, dataset, gate_threshold)
        report.confusion = {"tp": confusion.tp, "fn": confusion.fn,
                            "fp": confusion.fp, "tn": confusion.tn}
        report.recall = confusion.recall
        report.precision = confusion.precision
    return report


# ---------------------------------------------------------------------------
# Analysis exports (plot-ready data)
# ---------------------------------------------------------------------------

def true_normalized_density(noise: NoiseSpec, dataset: CorruptedDataset,
                            sigma_run: float, grid: np.ndarray) -> np.ndarray:
    """Density of the scaled sensor noise in normalized-residual units.

    The raw mixture is scaled per channel by dataset.noise_scale and pooled
    with equal weight per scalar measurement; normalized residuals divide by
    sigma_run, so each channel contributes (s/c) * pdf_raw(x * s / c) with
    s = sigma_run and c the channel scale.
    """
    out = np.zeros_like(grid)
    channels = len(dataset.noise_scale)
    counts = np.bincount(dataset.channel, minlength=channels)
    weights = counts / counts.sum()
    for c in range(channels):
        ratio = sigma_run / dataset.noise_scale[c]
        shifted = grid * ratio
        if noise.center_mean:
            shifted = shifted + noise.mixture_mean()
        out += weights[c] * ratio * noise.density(shifted)
    return out


def kl_true_vs_learned(noise: NoiseSpec, dataset: CorruptedDataset,
                       run: TrainedRun) -> float:
    """KL(true noise density || learned density) by quadrature on the grid."""
    model = run.ebm
    grid = model.quad_grid
    w = np.exp(model.quad_log_weights)
    p = true_normalized_density(noise, dataset, run.running.sigma, grid)
    q = ebm_mod.density_on_grid(model)
    mask = p > 0
    p_mass = np.sum(w[mask] * p[mask])
    return float(np.sum(w[mask] * p[mask] * np.log(p[mask] / q[mask])) / p_mass
                 - np.log(p_mass))


def count_density_modes(run: TrainedRun, rel_height: float = 0.02) -> int:
    """Interior local maxima of the learned density above a relative floor."""
    d = ebm_mod.density_on_grid(run.ebm)
    interior = (d[1:-1] > d[:-2]) & (d[1:-1] >= d[2:])
    return int(np.sum(interior & (d[1:-1] > rel_height * d.max())))


def export_density_comparison(run: TrainedRun, noise: NoiseSpec,
                              dataset: CorruptedDataset, path) -> None:
    """CSV over the quadrature grid: normalized residual, energy, learned
    density, true noise density."""
    model = run.ebm
    grid = model.quad_grid
    energies = ebm_mod.energy(model, grid)
    learned = ebm_mod.density_on_grid(model)
    true = true_normalized_density(noise, dataset, run.running.sigma, grid)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r_normalized", "energy", "learned_density", "true_density"])
        for i in range(len(grid)):
            w.writerow([f"{grid[i]:.17g}", f"{energies[i]:.17g}",
                        f"{learned[i]:.17g}", f"{true[i]:.17g}"])


def export_gate_overlay(run: TrainedRun, dataset: CorruptedDataset, path) -> None:
    """CSV with one row per measurement: energy, gate weight, true label."""
    _, energies, g = run.data_diagnostics(dataset)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["energy", "gate_weight", "is_outlier"])
        for i in range(dataset.n):
            w.writerow([f"{energies[i]:.17g}", f"{g[i]:.17g}",
                        int(dataset.is_outlier[i])])
