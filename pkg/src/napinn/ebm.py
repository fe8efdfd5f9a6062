"""One-dimensional energy-based density model for measurement residuals.

The density is p(r) = exp(-E(r)) / Z with E a small tanh MLP and Z computed
by trapezoidal quadrature on a fixed symmetric grid (1024 nodes), evaluated
in log domain. Maximum likelihood then has an exact gradient: the quadrature
nodes are fixed, so d(log Z)/d(phi) is a model-probability-weighted sum of
energy gradients over the grid and no sampling is needed. Residuals are
normalized by a running standard deviation maintained through an EMA of
per-batch sample standard deviations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import (
    AdamState,
    NetworkParams,
    NetworkShape,
    adam_step,
    forward,
    init_xavier,
    record_jets,
)

QUAD_NODES = 1024


@dataclass
class EnergyModel:
    net: NetworkParams
    half_width: float = 12.0

    def __post_init__(self):
        if self.net.shape.input_dim != 1 or self.net.shape.output_dim != 1:
            raise ValueError("energy net must map R -> R")
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")

    @property
    def quad_grid(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, QUAD_NODES)

    @property
    def quad_log_weights(self) -> np.ndarray:
        h = 2.0 * self.half_width / (QUAD_NODES - 1)
        w = np.full(QUAD_NODES, h)
        w[0] = w[-1] = h / 2.0
        return np.log(w)

    def copy(self) -> "EnergyModel":
        return EnergyModel(self.net.copy(), self.half_width)


def make_energy_model(seed, half_width: float = 12.0, hidden_layers: int = 3,
                      hidden_width: int = 32) -> EnergyModel:
    shape = NetworkShape(1, 1, hidden_layers, hidden_width)
    return EnergyModel(init_xavier(shape, seed), half_width)


def energy(model: EnergyModel, r: np.ndarray) -> np.ndarray:
    """E(r) elementwise; inputs beyond the quadrature support are clamped to
    the nearer endpoint (density outside the grid is treated as zero)."""
    r = np.clip(np.asarray(r, dtype=float), -model.half_width, model.half_width)
    return forward(model.net, r.reshape(-1, 1))[:, 0].reshape(np.shape(r))


def log_partition(model: EnergyModel) -> float:
    """log of the trapezoid rule applied to exp(-E), in log-sum-exp form."""
    a = -energy(model, model.quad_grid) + model.quad_log_weights
    m = a.max()
    return float(m + np.log(np.sum(np.exp(a - m))))


def density_on_grid(model: EnergyModel) -> np.ndarray:
    """Normalized density values on the quadrature grid."""
    return np.exp(-energy(model, model.quad_grid) - log_partition(model))


def nll(model: EnergyModel, batch: np.ndarray) -> float:
    """Negative log-likelihood: mean energy plus log partition function."""
    batch = np.asarray(batch, dtype=float)
    if batch.size == 0:
        raise ValueError("empty residual batch")
    return float(np.mean(energy(model, batch)) + log_partition(model))


def nll_and_grad(model: EnergyModel, batch: np.ndarray) -> tuple[float, np.ndarray]:
    """NLL and its exact gradient with respect to the energy-net parameters.

    d(NLL)/d(phi) = mean_batch dE/dphi - E_{p_phi on grid}[dE/dphi], where the
    second term is the quadrature-weighted model distribution over grid nodes.
    """
    batch = np.asarray(batch, dtype=float)
    if batch.size == 0:
        raise ValueError("empty residual batch")
    clipped = np.clip(batch, -model.half_width, model.half_width)

    tape_b = record_jets(model.net, clipped.reshape(-1, 1))
    e_batch = tape_b.jets().values[:, 0]

    tape_g = record_jets(model.net, model.quad_grid.reshape(-1, 1))
    e_grid = tape_g.jets().values[:, 0]

    a = -e_grid + model.quad_log_weights
    m = a.max()
    log_z = m + np.log(np.sum(np.exp(a - m)))
    q = np.exp(a - log_z)                       # sums to 1

    loss = float(e_batch.mean() + log_z)
    grad = tape_b.backprop(np.full((batch.size, 1), 1.0 / batch.size))
    grad -= tape_g.backprop(q[:, None])
    return loss, grad


@dataclass
class RunningStd:
    sigma: float
    ema_beta: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.ema_beta <= 1.0:
            raise ValueError("ema_beta must be in (0, 1]")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


def update_running_std(state: RunningStd, residuals: np.ndarray) -> np.ndarray:
    """EMA step sigma <- (1-beta) sigma + beta * std(batch), then normalize.

    Mutates ``state`` and returns the normalized residuals r / sigma.
    """
    residuals = np.asarray(residuals, dtype=float)
    if residuals.size < 2:
        raise ValueError("running-std update needs a batch of size >= 2")
    s_batch = float(np.std(residuals, ddof=1))
    state.sigma = (1.0 - state.ema_beta) * state.sigma + state.ema_beta * s_batch
    return residuals / state.sigma


def fit_initial(model: EnergyModel, residual_pool: np.ndarray, steps: int,
                batch_size: int = 512, seed=0, lr: float = 1e-3,
                ema_beta: float = 0.05) -> tuple[EnergyModel, RunningStd]:
    """Fit the energy model on residuals from a frozen predictor.

    The running std starts at the sample std of the full pool; each step
    draws a minibatch, EMA-updates the std, normalizes, and takes one Adam
    step on the NLL. Deterministic given the seed.
    """
    pool = np.asarray(residual_pool, dtype=float).ravel()
    if pool.size < 2:
        raise ValueError("residual pool too small")
    running = RunningStd(float(np.std(pool, ddof=1)), ema_beta)
    rng = np.random.default_rng(seed)
    state = AdamState.zeros(model.net.shape.n_params)
    for _ in range(steps):
        batch = pool[rng.choice(pool.size, size=min(batch_size, pool.size),
                                replace=False)]
        normed = update_running_std(running, batch)
        _, grad = nll_and_grad(model, normed)
        model.net.flat = adam_step(model.net.flat, grad, state, lr=lr)
    return model, running
