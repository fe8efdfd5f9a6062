"""Experiment matrix: generate, corrupt, train, evaluate, aggregate.

A declarative YAML config describes the experiment grid (benchmarks x methods
x outlier ratios x seeds). Reference fields are cached by a content hash of
their generation inputs; each matrix cell writes an isolated run directory

    out/<benchmark>/<method>/<ratio>/<seed>/
        metrics.json  trace.csv  dataset.csv  checkpoint.npz
        density.csv   gate.csv            (adaptive method only)

and the final pass aggregates mean +/- std per cell into out/summary.csv with
relative-improvement rows, mirroring the main results table layout.
"""

from __future__ import annotations

import hashlib
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .corruption import CorruptedDataset, NoiseSpec, OutlierSpec, inject
from .evaluation import (
    MetricsReport,
    evaluate_run,
    export_density_comparison,
    export_gate_overlay,
)
from .nets import save_params
from .pdes import ReferenceField, generate_reference, problem_by_name, sensor_grid
from .training import (
    DESK_SCHEDULE,
    FULL_SCHEDULE,
    METHODS,
    Schedule,
    TrainingProblem,
    train,
    write_trace_csv,
)

CLEAN_LABEL = "clean"

DESK_PRESET = {
    # burgers needs the fine grid regardless of scale (cell-Reynolds bound);
    # the solve is cached once per seed
    "solver_grid": {"allen_cahn": 64, "burgers": 512, "lambda_omega": 64},
    "snapshots": 10,
    "seeds": [0, 1, 2],
    "schedule": DESK_SCHEDULE,
}
FULL_PRESET = {
    # the spec sheet calls for 256 everywhere; the advective central scheme
    # needs 512 for unit-amplitude initial fields or it blows up
    "solver_grid": {"allen_cahn": 256, "burgers": 512, "lambda_omega": 256},
    "snapshots": 30,
    "seeds": list(range(10)),
    "schedule": FULL_SCHEDULE,
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    benchmarks: list
    methods: list
    ratios: list
    seeds: list
    scale: str = "desk"                    # desk | full
    solver_grid: dict = field(default_factory=dict)
    snapshots: int | None = None
    sensors_n: int = 15
    eval_n: int = 120
    schedule: Schedule | None = None
    lambda_rej: float = 0.5
    lambda_sweep: list = field(default_factory=lambda: [round(0.1 * k, 1) for k in range(1, 11)])
    sweep_ratio: float = 0.15
    clean_reference: bool = False
    noise_weights: list | None = None
    noise_center_mean: bool = False
    seed_offset: int = 0

    def __post_init__(self):
        if self.scale not in ("desk", "full"):
            raise ConfigError(f"scale must be desk or full, got {self.scale!r}")
        preset = DESK_PRESET if self.scale == "desk" else FULL_PRESET
        self.solver_grid = {**preset["solver_grid"], **(self.solver_grid or {})}
        if self.snapshots is None:
            self.snapshots = preset["snapshots"]
        if not self.seeds:
            self.seeds = list(preset["seeds"])
        if self.schedule is None:
            self.schedule = preset["schedule"]
        for b in self.benchmarks:
            problem_by_name(b)  # raises on unknown names
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        for r in self.ratios:
            if not 0.0 <= float(r) < 1.0:
                raise ConfigError(f"outlier ratio out of range: {r}")

    @property
    def noise(self) -> NoiseSpec:
        return NoiseSpec(weights=tuple(self.noise_weights) if self.noise_weights
                         else None, center_mean=self.noise_center_mean)

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        sched = raw.pop("schedule", None)
        try:
            cfg = cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        if sched is not None:
            base = cfg.schedule
            cfg.schedule = replace(base, **sched)
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schedule"] = asdict(self.schedule)
        return d

    def echo(self, out_dir: Path) -> None:
        with open(out_dir / "config.yaml", "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)


# ---------------------------------------------------------------------------
# Reference-field cache
# ---------------------------------------------------------------------------

def field_cache_key(benchmark: str, grid_n: int, snapshots: int, seed) -> str:
    spec = problem_by_name(benchmark)
    payload = json.dumps({
        "kind": benchmark, "grid_n": grid_n, "snapshots": snapshots,
        "seed": None if benchmark != "burgers" else int(seed),
        "true_params": {k: spec.true_params[k] for k in sorted(spec.true_params)},
    }, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def load_or_generate_field(benchmark: str, grid_n: int, snapshots: int,
                           seed, cache_dir: Path) -> ReferenceField:
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = field_cache_key(benchmark, grid_n, snapshots, seed)
    path = cache_dir / f"{benchmark}_{key}.npz"
    if path.exists():
        return ReferenceField.load(path)
    fld = generate_reference(problem_by_name(benchmark), grid_n, snapshots,
                             seed=seed)
    fld.save(path)
    return fld


def clean_dataset(fld: ReferenceField, sensors_n: int = 15) -> CorruptedDataset:
    """Uncorrupted sensor readings (the clean-measurement reference mode)."""
    sample = sensor_grid(fld, sensors_n)
    channels = sample.channels
    coords = np.repeat(sample.coords, channels, axis=0)
    channel = np.tile(np.arange(channels), sample.n_points)
    clean = sample.clean.reshape(-1)
    return CorruptedDataset(coords=coords, channel=channel, clean=clean,
                            observed=clean.copy(),
                            is_outlier=np.zeros(len(clean), dtype=bool),
                            noise_sigma=np.zeros(channels),
                            noise_scale=np.zeros(channels))


# ---------------------------------------------------------------------------
# Single cell
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    benchmark: str
    method: str
    ratio: float | None          # None = clean reference mode
    seed: int
    lambda_rej: float = 0.5

    @property
    def ratio_label(self) -> str:
        return CLEAN_LABEL if self.ratio is None else f"{self.ratio:g}"

    def run_dir(self, out_dir: Path) -> Path:
        return out_dir / self.benchmark / self.method / self.ratio_label / str(self.seed)


def run_cell(config: ExperimentConfig, cell: Cell, out_dir: Path,
             cache_dir: Path | None = None) -> MetricsReport:
    """Generate/load, corrupt, train, evaluate, persist one matrix cell."""
    out_dir = Path(out_dir)
    run_dir = cell.run_dir(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    grid_n = config.solver_grid[cell.benchmark]
    fld = load_or_generate_field(cell.benchmark, grid_n, config.snapshots,
                                 cell.seed,
                                 cache_dir if cache_dir is not None
                                 else out_dir / "cache")
    seed = config.seed_offset + cell.seed
    if cell.ratio is None:
        ds = clean_dataset(fld, config.sensors_n)
    else:
        ds = inject(fld, config.noise, OutlierSpec(ratio=cell.ratio),
                    seed=seed, sensors_n=config.sensors_n)
    ds.save_csv(run_dir / "dataset.csv")

    problem = TrainingProblem.build(problem_by_name(cell.benchmark), ds,
                                    config.schedule.collocation_n)
    run = train(problem, cell.method, config.schedule, seed=seed,
                lambda_rej=cell.lambda_rej)

    report = evaluate_run(run, fld, ds, cell.benchmark,
                          cell.ratio if cell.ratio is not None else 0.0,
                          eval_n=config.eval_n)
    report.to_json(run_dir / "metrics.json")
    write_trace_csv(run.trace, run_dir / "trace.csv")
    save_params(run_dir / "checkpoint.npz", run.model.params)
    if run.gate is not None:
        export_density_comparison(run, config.noise, ds, run_dir / "density.csv")
        export_gate_overlay(run, ds, run_dir / "gate.csv")
    return report


def _cell_worker(args):
    config_dict, cell, out_dir = args
    config = ExperimentConfig.from_dict(config_dict)
    try:
        report = run_cell(config, cell, Path(out_dir))
        return cell, report, None
    except Exception:
        return cell, None, traceback.format_exc()


# ---------------------------------------------------------------------------
# Matrix driver
# ---------------------------------------------------------------------------

def matrix_cells(config: ExperimentConfig) -> list[Cell]:
    cells = []
    for b in config.benchmarks:
        for m in config.methods:
            for r in config.ratios:
                for s in config.seeds:
                    cells.append(Cell(b, m, float(r), int(s), config.lambda_rej))
        if config.clean_reference:
            for s in config.seeds:
                cells.append(Cell(b, "vanilla", None, int(s), config.lambda_rej))
    return cells


def run_matrix(config: ExperimentConfig, out_dir, jobs: int = 1):
    """Run every cell; failures are recorded and do not stop the matrix.

    Returns (reports, failures); failures is a list of (cell, traceback).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.echo(out_dir)
    cells = matrix_cells(config)

    # generate shared reference fields up front so workers only read the
    # cache; a failing field is reported by the cell that needs it
    seen = set()
    for cell in cells:
        key = (cell.benchmark, cell.seed)
        if key in seen:
            continue
        seen.add(key)
        try:
            load_or_generate_field(cell.benchmark,
                                   config.solver_grid[cell.benchmark],
                                   config.snapshots, cell.seed,
                                   out_dir / "cache")
        except Exception:
            pass

    reports, failures = [], []
    if jobs <= 1:
        for cell in cells:
            try:
                reports.append((cell, run_cell(config, cell, out_dir)))
            except Exception:
                failures.append((cell, traceback.format_exc()))
    else:
        args = [(config.to_dict(), cell, str(out_dir)) for cell in cells]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for cell, report, err in pool.map(_cell_worker, args):
                if err is None:
                    reports.append((cell, report))
                else:
                    failures.append((cell, err))

    for cell, err in failures:
        fail_dir = cell.run_dir(out_dir)
        fail_dir.mkdir(parents=True, exist_ok=True)
        (fail_dir / "FAILED.txt").write_text(err)

    write_summary(reports, out_dir / "summary.csv", config)
    return reports, failures


def write_summary(reports, path, config: ExperimentConfig) -> None:
    """Aggregate mean +/- std per (benchmark, method, ratio) plus the relative
    improvement of the adaptive method over the best baseline."""
    import csv as _csv

    groups: dict = {}
    for cell, rep in reports:
        groups.setdefault((cell.benchmark, cell.method, cell.ratio_label), []).append(rep)

    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["benchmark", "method", "ratio", "n_seeds", "scale",
                    "rmae_mean", "rmae_std", "rmse_mean", "rmse_std",
                    "recall_mean", "precision_mean"])
        for (b, m, r), reps in sorted(groups.items()):
            rmaes = np.array([x.rmae for x in reps])
            rmses = np.array([x.rmse for x in reps])
            recalls = [x.recall for x in reps if x.recall is not None]
            precisions = [x.precision for x in reps if x.precision is not None]
            w.writerow([
                b, m, r, len(reps), config.scale,
                f"{rmaes.mean():.6f}", f"{rmaes.std(ddof=0):.6f}",
                f"{rmses.mean():.6f}", f"{rmses.std(ddof=0):.6f}",
                f"{np.mean(recalls):.6f}" if recalls else "",
                f"{np.mean(precisions):.6f}" if precisions else "",
            ])
        # relative improvement of the adaptive method over the best baseline
        for (b, r) in sorted({(b, r) for (b, m, r) in groups if m == "napinn"}):
            ours = np.mean([x.rmse for x in groups[(b, "napinn", r)]])
            ours_mae = np.mean([x.rmae for x in groups[(b, "napinn", r)]])
            base_rmse = [np.mean([x.rmse for x in reps])
                         for (bb, m, rr), reps in groups.items()
                         if bb == b and rr == r and m != "napinn"]
            base_rmae = [np.mean([x.rmae for x in reps])
                         for (bb, m, rr), reps in groups.items()
                         if bb == b and rr == r and m != "napinn"]
            if not base_rmse:
                continue
            w.writerow([b, "improvement_vs_best_baseline", r, "", config.scale,
                        f"{100 * (min(base_rmae) - ours_mae) / min(base_rmae):.2f}%",
                        "", f"{100 * (min(base_rmse) - ours) / min(base_rmse):.2f}%",
                        "", "", ""])


# ---------------------------------------------------------------------------
# Rejection-cost sweep
# ---------------------------------------------------------------------------

def sweep_rejection_cost(config: ExperimentConfig, out_dir, jobs: int = 1):
    """Sweep lambda_rej on the fixed benchmark/ratio, identical seeds per
    value; writes sweep.csv with accuracy and rejected fraction."""
    import csv as _csv

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.echo(out_dir)
    rows = []
    for lam in config.lambda_sweep:
        lam_dir = out_dir / f"lambda_{lam:g}"
        cell_reports = []
        for s in config.seeds:
            cell = Cell("allen_cahn", "napinn", config.sweep_ratio, int(s),
                        float(lam))
            report = run_cell(config, cell, lam_dir,
                              cache_dir=out_dir / "cache")
            rejected = _rejected_fraction(cell.run_dir(lam_dir))
            cell_reports.append((report, rejected))
        rmaes = np.array([r.rmae for r, _ in cell_reports])
        rmses = np.array([r.rmse for r, _ in cell_reports])
        rejs = np.array([f for _, f in cell_reports])
        rows.append((lam, rmaes.mean(), rmses.mean(), rejs.mean()))

    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["lambda_rej", "rmae", "rmse", "rejected_fraction"])
        for lam, a, m, f in rows:
            w.writerow([f"{lam:g}", f"{a:.6f}", f"{m:.6f}", f"{f:.6f}"])
    return rows


def _rejected_fraction(run_dir: Path) -> float:
    gate = np.genfromtxt(run_dir / "gate.csv", delimiter=",", names=True)
    return float(np.mean(gate["gate_weight"] < 0.5))


# ---------------------------------------------------------------------------
# Figure data
# ---------------------------------------------------------------------------

def emit_plot_data(results_dir) -> list:
    """Write robustness-curve and gate-parameter-trace CSVs from a results
    directory; density/gate overlays already live in the run directories."""
    import csv as _csv

    results_dir = Path(results_dir)
    summary = results_dir / "summary.csv"
    if not summary.exists():
        raise FileNotFoundError(f"no summary.csv under {results_dir}")
    written = []

    rows = list(_csv.DictReader(open(summary)))
    benchmarks = sorted({r["benchmark"] for r in rows
                         if not r["method"].startswith("improvement")})
    for b in benchmarks:
        path = results_dir / f"fig_robustness_{b}.csv"
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["ratio", "method", "rmse_mean", "rmse_std"])
            for r in rows:
                if (r["benchmark"] == b and r["ratio"] != CLEAN_LABEL
                        and not r["method"].startswith("improvement")):
                    w.writerow([r["ratio"], r["method"], r["rmse_mean"],
                                r["rmse_std"]])
        written.append(path)

    for b in benchmarks:
        traces = sorted((results_dir / b / "napinn").glob("*/*/trace.csv"))
        if not traces:
            continue
        path = results_dir / f"fig_gate_trace_{b}.csv"
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["ratio", "seed", "iter", "a", "tau"])
            for tr in traces:
                ratio, seed = tr.parent.parent.name, tr.parent.name
                for row in _csv.DictReader(open(tr)):
                    if row["stage"] == "joint":
                        w.writerow([ratio, seed, row["iter"], row["a"],
                                    row["tau"]])
        written.append(path)
    return written
