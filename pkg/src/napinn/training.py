"""Staged training with an energy-guided reliability gate, plus baselines.

The adaptive method runs three stages. (i) Warm-up: minimize the plain
physics + data objective so residuals reflect sensor noise rather than an
untrained network. (ii) Density initialization: freeze the predictor, pool
its measurement residuals, and fit the 1D energy model on them with running
std normalization. (iii) Joint phase: every iteration updates the network,
the physical parameters and the gate (steepness, cutoff) on

    L = L_pde + mean(g_i * r~_i^2) + lambda_rej * mean(1 - g_i),

with g_i = sigmoid(a * (tau - E(r~_i))), followed by one energy-model update
on the same normalized residual minibatch (1:1 ratio).

Gradient contract: in the gated data term the network parameters receive
gradient only through the weighted squared residual; the path through the
energy into the gate is cut (the gate sees energies as frozen scores). Gate
parameters receive gradient through g with the energies frozen. The energy
model is updated only by its own likelihood loss. Gating and the gated data
term act on normalized residuals r~ = r / sigma_run: the rejection trade-off
then compares per-point losses of order one against lambda_rej, which is what
makes a single lambda_rej work across benchmarks with very different field
magnitudes.

Baselines (plain MSE, L1, heavy-tailed q-Gaussian) run a single stage on raw
residuals with the same physics term.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import ebm as ebm_mod
from .corruption import CorruptedDataset
from .nets import (
    AdamState,
    NetworkShape,
    ScaledMlp,
    adam_step,
    init_xavier,
)
from .pdes import (
    JET_DIRECTIONS,
    ProblemSpec,
    collocation_coords,
    forcing_function,
    residual_operator,
)

PINN_HIDDEN_LAYERS = 5
PINN_HIDDEN_WIDTH = 80

BASELINE_LOSSES = ("mse", "l1", "q")


class TrainingDiverged(RuntimeError):
    def __init__(self, stage: str, iteration: int):
        super().__init__(f"non-finite loss in stage {stage!r} at iteration {iteration}")
        self.stage = stage
        self.iteration = iteration


def softplus(x: float) -> float:
    return float(np.logaddexp(0.0, x))


def softplus_inverse(y: float) -> float:
    if y > 30.0:
        return float(y)  # softplus is the identity to double precision here
    return float(np.log(np.expm1(y)))


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


@dataclass
class GateState:
    raw_a: float                  # steepness via a = softplus(raw_a) > 0
    tau: float                    # energy cutoff
    lambda_rej: float = 0.5

    @property
    def a(self) -> float:
        return softplus(self.raw_a)


@dataclass(frozen=True)
class LossWeights:
    w_f: float = 1.0
    w_d: float = 1.0


@dataclass(frozen=True)
class Schedule:
    warmup: int
    ebm_init: int
    joint: int
    collocation_batch: int = 1024
    data_batch: int = 512
    ebm_batch: int = 512
    collocation_n: int = 100
    lr: float = 1e-3
    gate_lr: float | None = None      # default: lr
    ebm_lr: float | None = None
    pde_lr: float | None = None
    ema_beta: float = 0.05
    log_every: int = 50

    def __post_init__(self):
        if min(self.warmup, self.ebm_init, self.joint) < 0:
            raise ValueError("iteration counts must be >= 0")

    @property
    def baseline_iterations(self) -> int:
        # baselines update the network as often as the adaptive method does
        return self.warmup + self.joint

    @property
    def lr_gate(self) -> float:
        return self.lr if self.gate_lr is None else self.gate_lr

    @property
    def lr_ebm(self) -> float:
        return self.lr if self.ebm_lr is None else self.ebm_lr

    @property
    def lr_pde(self) -> float:
        return self.lr if self.pde_lr is None else self.pde_lr


FULL_SCHEDULE = Schedule(warmup=5000, ebm_init=5000, joint=25000)
DESK_SCHEDULE = Schedule(warmup=500, ebm_init=500, joint=2500,
                         collocation_batch=256, data_batch=512)


@dataclass(frozen=True)
class BaselineKind:
    loss: str                     # one of BASELINE_LOSSES
    q: float | None = None        # only for loss == "q"

    def __post_init__(self):
        if self.loss not in BASELINE_LOSSES:
            raise ValueError(f"unknown baseline loss {self.loss!r}")
        if self.loss == "q":
            if self.q is None or not 1.0 < self.q < 3.0:
                raise ValueError("q-Gaussian baseline needs q in (1, 3)")

    @property
    def beta_q(self) -> float:
        return 1.0 / (2.0 * (3.0 - self.q))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def data_loss_and_slope(kind: BaselineKind, r: np.ndarray):
    """Mean per-measurement loss and d(loss)/d(r_i) (already divided by N)."""
    n = r.size
    if kind.loss == "mse":
        return float(np.mean(r**2)), 2.0 * r / n
    if kind.loss == "l1":
        return float(np.mean(np.abs(r))), np.sign(r) / n
    beta = kind.beta_q
    q = kind.q
    val = float(np.mean(np.log1p((q - 1.0) * beta * r**2) / (q - 1.0)))
    slope = (2.0 * beta * r / (1.0 + (q - 1.0) * beta * r**2)) / n
    return val, slope


def q_gaussian_loss(r: np.ndarray, q: float) -> np.ndarray:
    """Per-point heavy-tailed loss log(1 + (q-1) beta r^2) / (q-1)."""
    beta = 1.0 / (2.0 * (3.0 - q))
    return np.log1p((q - 1.0) * beta * np.asarray(r) ** 2) / (q - 1.0)


def gate_weights(ebm: ebm_mod.EnergyModel, gate: GateState,
                 r_norm: np.ndarray) -> np.ndarray:
    """Reliability weights g = sigmoid(a * (tau - E(r~))) in (0, 1)."""
    energies = ebm_mod.energy(ebm, r_norm)
    return sigmoid(gate.a * (gate.tau - energies))


def gated_data_value(g: np.ndarray, r_norm: np.ndarray) -> float:
    return float(np.mean(g * r_norm**2))


def rejection_value(g: np.ndarray) -> float:
    return float(np.mean(1.0 - g))


# ---------------------------------------------------------------------------
# Problem bundle
# ---------------------------------------------------------------------------

@dataclass
class TrainingProblem:
    spec: ProblemSpec
    collocation: np.ndarray           # [n x 3] candidate residual points
    dataset: CorruptedDataset

    @classmethod
    def build(cls, spec: ProblemSpec, dataset: CorruptedDataset,
              collocation_n: int = 100) -> "TrainingProblem":
        times = np.unique(dataset.coords[:, 2])
        colloc = collocation_coords(spec, times, collocation_n)
        return cls(spec=spec, collocation=colloc, dataset=dataset)


@dataclass
class TraceRow:
    iteration: int
    stage: str
    loss_pde: float
    loss_data: float
    loss_rej: float
    a: float
    tau: float
    sigma_run: float
    pde_params: dict


@dataclass
class TrainedRun:
    method: str
    model: ScaledMlp
    pde_params: dict
    gate: GateState | None
    ebm: ebm_mod.EnergyModel | None
    running: ebm_mod.RunningStd | None
    trace: list[TraceRow]
    schedule: Schedule
    seed: int

    def predict(self, coords: np.ndarray, chunk: int = 20000) -> np.ndarray:
        """Network values at coordinate rows, chunked to bound memory."""
        outs = []
        for start in range(0, len(coords), chunk):
            outs.append(self.model.forward(coords[start : start + chunk]))
        return np.vstack(outs)

    def data_residuals(self, dataset: CorruptedDataset) -> np.ndarray:
        pred = self.predict(dataset.coords)
        picked = pred[np.arange(dataset.n), dataset.channel]
        return dataset.observed - picked

    def data_diagnostics(self, dataset: CorruptedDataset):
        """Per-measurement (normalized residual, energy, gate weight)."""
        if self.ebm is None or self.gate is None or self.running is None:
            raise ValueError("run has no gate (baseline method)")
        r_norm = self.data_residuals(dataset) / self.running.sigma
        energies = ebm_mod.energy(self.ebm, r_norm)
        g = sigmoid(self.gate.a * (self.gate.tau - energies))
        return r_norm, energies, g


def write_trace_csv(rows: list[TraceRow], path) -> None:
    param_names = sorted(rows[0].pde_params) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "stage", "loss_pde", "loss_data", "loss_rej",
                    "a", "tau", "sigma_run", *param_names])
        for row in rows:
            w.writerow([row.iteration, row.stage,
                        f"{row.loss_pde:.17g}", f"{row.loss_data:.17g}",
                        f"{row.loss_rej:.17g}", f"{row.a:.17g}",
                        f"{row.tau:.17g}", f"{row.sigma_run:.17g}",
                        *[f"{row.pde_params[p]:.17g}" for p in param_names]])


# ---------------------------------------------------------------------------
# Trainer
# ---------------------------------------------------------------------------

class _Trainer:
    def __init__(self, problem: TrainingProblem, schedule: Schedule, seed: int,
                 lambda_rej: float = 0.5, weights: LossWeights = LossWeights(),
                 gate_init_percentile: float = 90.0):
        self.problem = problem
        self.schedule = schedule
        self.seed = seed
        self.lambda_rej = lambda_rej
        self.weights = weights
        self.gate_init_percentile = gate_init_percentile

        spec = problem.spec
        ss = np.random.SeedSequence(seed)
        s_net, s_ebm, s_batch, s_fit = ss.spawn(4)
        shape = NetworkShape(3, spec.state_channels, PINN_HIDDEN_LAYERS,
                             PINN_HIDDEN_WIDTH)
        lo = (spec.x_bounds[0], spec.y_bounds[0], spec.t_bounds[0])
        hi = (spec.x_bounds[1], spec.y_bounds[1], spec.t_bounds[1])
        self.model = ScaledMlp.for_box(init_xavier(shape, s_net), lo, hi)
        self.pde_params = dict(spec.param_init)
        self.param_names = sorted(self.pde_params)
        self.residual_op = residual_operator(spec)
        self.forcing = forcing_function(spec)

        self.rng = np.random.default_rng(s_batch)
        self.ebm_seed = s_ebm
        self.fit_seed = s_fit

        self.adam_theta = AdamState.zeros(shape.n_params)
        self.adam_pde = AdamState.zeros(len(self.param_names))
        self.adam_gate = AdamState.zeros(2)
        self.adam_ebm = None

        self.ebm: ebm_mod.EnergyModel | None = None
        self.running: ebm_mod.RunningStd | None = None
        self.gate: GateState | None = None

        self.trace: list[TraceRow] = []
        self.iteration = 0

        ds = problem.dataset
        self._data_coords = ds.coords
        self._data_channel = ds.channel
        self._data_observed = ds.observed

    # -- shared pieces ----------------------------------------------------

    def _collocation_batch(self):
        n = len(self.problem.collocation)
        size = min(self.schedule.collocation_batch, n)
        idx = self.rng.choice(n, size=size, replace=False)
        return self.problem.collocation[idx]

    def _data_batch_idx(self):
        n = len(self._data_observed)
        size = min(self.schedule.data_batch, n)
        return self.rng.choice(n, size=size, replace=False)

    def _pde_terms(self, coords):
        """Physics loss on a collocation batch with parameter gradients."""
        tape = self.model.record(coords, JET_DIRECTIONS)
        jets = tape.jets()
        f = self.forcing(coords) if self.forcing is not None else None
        res = self.residual_op.residual(jets, self.pde_params,
                                        None if f is None else f[:, 0])
        loss = float(np.sum(res**2) / res.shape[0])
        bar_res = 2.0 * res / res.shape[0]
        bar_v, bar_d1, bar_d2, dparams = self.residual_op.backward(
            jets, self.pde_params, bar_res,
            None if f is None else f[:, 0])
        grad_theta = tape.backprop(bar_v, bar_d1, bar_d2)
        grad_pde = np.array([dparams[p] for p in self.param_names])
        return loss, grad_theta, grad_pde

    def _data_residual_batch(self, idx):
        coords = self._data_coords[idx]
        tape = self.model.record(coords)
        pred = tape.jets().values
        chan = self._data_channel[idx]
        r = self._data_observed[idx] - pred[np.arange(len(idx)), chan]
        return tape, chan, r

    def _theta_grad_from_slope(self, tape, chan, slope):
        """slope = d(loss)/d(r_i); residual is observation minus prediction."""
        bar_values = np.zeros((len(chan), self.problem.spec.state_channels))
        bar_values[np.arange(len(chan)), chan] = -slope
        return tape.backprop(bar_values)

    def _apply_updates(self, grad_theta, grad_pde):
        self.model.params.flat = adam_step(self.model.params.flat, grad_theta,
                                           self.adam_theta, lr=self.schedule.lr)
        if self.param_names:
            vec = np.array([self.pde_params[p] for p in self.param_names])
            vec = adam_step(vec, grad_pde, self.adam_pde,
                            lr=self.schedule.lr_pde)
            for p, v in zip(self.param_names, vec):
                self.pde_params[p] = float(v)

    def _log(self, stage, loss_pde, loss_data, loss_rej, force=False):
        if not force and self.iteration % self.schedule.log_every != 0:
            return
        self.trace.append(TraceRow(
            iteration=self.iteration, stage=stage, loss_pde=loss_pde,
            loss_data=loss_data, loss_rej=loss_rej,
            a=self.gate.a if self.gate else float("nan"),
            tau=self.gate.tau if self.gate else float("nan"),
            sigma_run=self.running.sigma if self.running else float("nan"),
            pde_params=dict(self.pde_params),
        ))

    def _check_finite(self, stage, *losses):
        if not all(np.isfinite(v) for v in losses):
            raise TrainingDiverged(stage, self.iteration)

    # -- stages -----------------------------------------------------------

    def plain_step(self, stage: str, kind: BaselineKind):
        loss_pde, grad_theta, grad_pde = self._pde_terms(self._collocation_batch())
        tape, chan, r = self._data_residual_batch(self._data_batch_idx())
        loss_data, slope = data_loss_and_slope(kind, r)
        self._check_finite(stage, loss_pde, loss_data)
        grad_theta = self.weights.w_f * grad_theta + self.weights.w_d * \
            self._theta_grad_from_slope(tape, chan, slope)
        self._apply_updates(grad_theta, self.weights.w_f * grad_pde)
        self._log(stage, loss_pde, loss_data, 0.0)
        self.iteration += 1

    def residual_pool(self) -> np.ndarray:
        pred_chunks = []
        coords = self._data_coords
        for start in range(0, len(coords), 20000):
            pred_chunks.append(self.model.forward(coords[start : start + 20000]))
        pred = np.vstack(pred_chunks)
        picked = pred[np.arange(len(coords)), self._data_channel]
        return self._data_observed - picked

    def init_density_and_gate(self):
        pool = self.residual_pool()
        self.ebm = ebm_mod.make_energy_model(self.ebm_seed)
        self.ebm, self.running = ebm_mod.fit_initial(
            self.ebm, pool, steps=self.schedule.ebm_init,
            batch_size=self.schedule.ebm_batch, seed=self.fit_seed,
            lr=self.schedule.lr_ebm, ema_beta=self.schedule.ema_beta,
        )
        self.adam_ebm = AdamState.zeros(self.ebm.net.shape.n_params)
        energies = ebm_mod.energy(self.ebm, pool / self.running.sigma)
        tau0 = float(np.percentile(energies, self.gate_init_percentile))
        self.gate = GateState(raw_a=softplus_inverse(1.0), tau=tau0,
                              lambda_rej=self.lambda_rej)
        self.iteration += self.schedule.ebm_init

    def joint_step(self):
        loss_pde, grad_theta, grad_pde = self._pde_terms(self._collocation_batch())

        idx = self._data_batch_idx()
        tape, chan, r = self._data_residual_batch(idx)
        r_norm = ebm_mod.update_running_std(self.running, r)
        energies = ebm_mod.energy(self.ebm, r_norm)
        g = sigmoid(self.gate.a * (self.gate.tau - energies))

        n = r.size
        loss_data = float(np.mean(g * r_norm**2))
        loss_rej = float(np.mean(1.0 - g))
        self._check_finite("joint", loss_pde, loss_data, loss_rej)

        # network: gradient through the weighted squared residual only
        slope = 2.0 * g * r_norm / (n * self.running.sigma)
        grad_theta = self.weights.w_f * grad_theta + self.weights.w_d * \
            self._theta_grad_from_slope(tape, chan, slope)

        # gate: gradient through g with energies frozen
        dl_dg = (self.weights.w_d * r_norm**2 - self.lambda_rej) / n
        s = g * (1.0 - g)
        grad_tau = float(np.sum(dl_dg * s * self.gate.a))
        grad_raw_a = float(np.sum(dl_dg * s * (self.gate.tau - energies))
                           * sigmoid(self.gate.raw_a))

        self._apply_updates(grad_theta, self.weights.w_f * grad_pde)
        gate_vec = adam_step(np.array([self.gate.raw_a, self.gate.tau]),
                             np.array([grad_raw_a, grad_tau]), self.adam_gate,
                             lr=self.schedule.lr_gate)
        self.gate.raw_a, self.gate.tau = float(gate_vec[0]), float(gate_vec[1])

        # density model: one likelihood step on the same normalized residuals
        nll, grad_phi = ebm_mod.nll_and_grad(self.ebm, r_norm)
        self._check_finite("joint", nll)
        self.ebm.net.flat = adam_step(self.ebm.net.flat, grad_phi,
                                      self.adam_ebm, lr=self.schedule.lr_ebm)

        self._log("joint", loss_pde, loss_data, loss_rej)
        self.iteration += 1

    # -- drivers ----------------------------------------------------------

    def run_adaptive(self) -> TrainedRun:
        mse = BaselineKind("mse")
        for _ in range(self.schedule.warmup):
            self.plain_step("warmup", mse)
        self.init_density_and_gate()
        for _ in range(self.schedule.joint):
            self.joint_step()
        return self._finish("napinn")

    def run_baseline(self, kind: BaselineKind, name: str) -> TrainedRun:
        for _ in range(self.schedule.baseline_iterations):
            self.plain_step("baseline", kind)
        return self._finish(name)

    def _finish(self, method: str) -> TrainedRun:
        return TrainedRun(
            method=method, model=self.model, pde_params=dict(self.pde_params),
            gate=self.gate, ebm=self.ebm, running=self.running,
            trace=self.trace, schedule=self.schedule, seed=self.seed,
        )


METHODS = ("napinn", "vanilla", "lad", "orpinn_q1.9", "orpinn_q2.9")


def method_kind(method: str) -> BaselineKind | None:
    """Baseline loss for a method name; None for the adaptive method."""
    if method == "napinn":
        return None
    if method == "vanilla":
        return BaselineKind("mse")
    if method == "lad":
        return BaselineKind("l1")
    if method.startswith("orpinn_q"):
        return BaselineKind("q", q=float(method.removeprefix("orpinn_q")))
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def train(problem: TrainingProblem, method: str, schedule: Schedule, seed: int,
          lambda_rej: float = 0.5) -> TrainedRun:
    """Train one run of the given method; deterministic given the seed."""
    trainer = _Trainer(problem, schedule, seed, lambda_rej=lambda_rej)
    kind = method_kind(method)
    if kind is None:
        return trainer.run_adaptive()
    return trainer.run_baseline(kind, method)
