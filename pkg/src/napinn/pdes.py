"""Benchmark PDE problems: residual operators, reference solvers, grids.

Three time-dependent 2D benchmarks, each exposing a residual operator over
network jets (with one trainable physical parameter) and a clean reference
field: Allen-Cahn (analytic manufactured solution, forced), Burgers
(finite-difference solve from random smooth initial velocity) and a
lambda-omega reaction-diffusion system (finite-difference solve from a
spiral-wave initial condition).

Jet convention everywhere: network inputs are (x, y, t) and jets are recorded
along directions (0, 1, 2) in that order, so d1[..., 2] is a time derivative
and d2[..., 0] / d2[..., 1] are the pure second space derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .nets import Jet2Batch

X_DIR, Y_DIR, T_DIR = 0, 1, 2
JET_DIRECTIONS = (X_DIR, Y_DIR, T_DIR)

FIELD_FORMAT_VERSION = 1


class CflError(ValueError):
    """Requested time step violates the explicit stability bound."""


class BlowUpError(RuntimeError):
    """Solver state became non-finite."""

    def __init__(self, step: int):
        super().__init__(f"non-finite state at step {step}")
        self.step = step


@dataclass(frozen=True)
class ProblemSpec:
    kind: str
    x_bounds: tuple[float, float]
    y_bounds: tuple[float, float]
    t_bounds: tuple[float, float]
    state_channels: int
    true_params: dict
    param_init: dict
    burn_in: float = 0.0
    periodic: bool = False


def allen_cahn_problem(omega: float = math.pi) -> ProblemSpec:
    return ProblemSpec(
        kind="allen_cahn",
        x_bounds=(0.0, 1.0),
        y_bounds=(0.0, 1.0),
        t_bounds=(0.0, 1.0),
        state_channels=1,
        true_params={"eps": 0.3, "omega": omega},
        param_init={"eps": 1.0},
    )


def burgers_problem() -> ProblemSpec:
    return ProblemSpec(
        kind="burgers",
        x_bounds=(0.0, 4.0),
        y_bounds=(0.0, 4.0),
        t_bounds=(0.0, 3.0),
        state_channels=2,
        true_params={"nu": 0.01, "grf_alpha": 5.0},
        param_init={"nu": 0.0},
        burn_in=0.1,
        periodic=True,
    )


def lambda_omega_problem() -> ProblemSpec:
    return ProblemSpec(
        kind="lambda_omega",
        x_bounds=(-10.0, 10.0),
        y_bounds=(-10.0, 10.0),
        t_bounds=(0.0, 10.0),
        state_channels=2,
        true_params={"beta": 1.0, "d_u": 1.0, "d_v": 1.0},
        param_init={"beta": 0.0},
        periodic=True,
    )


PROBLEMS = {
    "allen_cahn": allen_cahn_problem,
    "burgers": burgers_problem,
    "lambda_omega": lambda_omega_problem,
}


def problem_by_name(kind: str, **kwargs) -> ProblemSpec:
    if kind not in PROBLEMS:
        raise ValueError(f"unknown benchmark {kind!r}; choose from {sorted(PROBLEMS)}")
    return PROBLEMS[kind](**kwargs)


# ---------------------------------------------------------------------------
# Manufactured Allen-Cahn solution
# ---------------------------------------------------------------------------

def manufactured_solution_ac(x, y, t, omega: float = math.pi, eps: float = 0.3):
    """Exact solution u = sin(pi x) sin(pi y) cos(omega t) and the forcing f
    that makes it satisfy u_t - eps^2 lap(u) + (u^3 - u) = f exactly."""
    sp = np.sin(np.pi * np.asarray(x)) * np.sin(np.pi * np.asarray(y))
    u = sp * np.cos(omega * np.asarray(t))
    u_t = -omega * sp * np.sin(omega * np.asarray(t))
    lap = -2.0 * np.pi**2 * u
    f = u_t - eps**2 * lap + (u**3 - u)
    return u, f


def manufactured_derivatives_ac(x, y, t, omega: float = math.pi) -> dict:
    """Analytic derivative set of the manufactured solution (for oracles)."""
    x, y, t = np.asarray(x), np.asarray(y), np.asarray(t)
    sx, cx = np.sin(np.pi * x), np.cos(np.pi * x)
    sy, cy = np.sin(np.pi * y), np.cos(np.pi * y)
    ct, st = np.cos(omega * t), np.sin(omega * t)
    return {
        "u": sx * sy * ct,
        "u_t": -omega * sx * sy * st,
        "u_x": np.pi * cx * sy * ct,
        "u_y": np.pi * sx * cy * ct,
        "u_xx": -np.pi**2 * sx * sy * ct,
        "u_yy": -np.pi**2 * sx * sy * ct,
    }


# ---------------------------------------------------------------------------
# Residual operators
# ---------------------------------------------------------------------------
# Each operator evaluates the PDE residual from jets and provides the exact
# reverse step: cotangents on (values, d1, d2) plus the gradient with respect
# to its trainable physical parameters.


class AllenCahnResidual:
    param_names = ("eps",)
    channels = 1

    def residual(self, jets: Jet2Batch, params: dict, forcing=None) -> np.ndarray:
        self._need_dirs(jets)
        u = jets.values[:, 0]
        u_t = jets.d1[:, 0, T_DIR]
        lap = jets.d2[:, 0, X_DIR] + jets.d2[:, 0, Y_DIR]
        r = u_t - params["eps"] ** 2 * lap + (u**3 - u)
        if forcing is not None:
            r = r - forcing
        return r[:, None]

    def backward(self, jets, params, bar_res, forcing=None):
        br = bar_res[:, 0]
        u = jets.values[:, 0]
        lap = jets.d2[:, 0, X_DIR] + jets.d2[:, 0, Y_DIR]
        bar_values = np.zeros_like(jets.values)
        bar_values[:, 0] = br * (3.0 * u**2 - 1.0)
        bar_d1 = np.zeros_like(jets.d1)
        bar_d1[:, 0, T_DIR] = br
        bar_d2 = np.zeros_like(jets.d2)
        bar_d2[:, 0, X_DIR] = -params["eps"] ** 2 * br
        bar_d2[:, 0, Y_DIR] = -params["eps"] ** 2 * br
        dparams = {"eps": float(np.sum(br * (-2.0 * params["eps"] * lap)))}
        return bar_values, bar_d1, bar_d2, dparams

    @staticmethod
    def _need_dirs(jets):
        if jets.d1 is None or jets.d2 is None or jets.directions != JET_DIRECTIONS:
            raise ValueError("jets must carry (x, y, t) first and second derivatives")


class BurgersResidual:
    param_names = ("nu",)
    channels = 2

    def residual(self, jets: Jet2Batch, params: dict, forcing=None) -> np.ndarray:
        AllenCahnResidual._need_dirs(jets)
        nu = params["nu"]
        u, v = jets.values[:, 0], jets.values[:, 1]
        res = np.empty((u.shape[0], 2))
        for c in range(2):
            lap = jets.d2[:, c, X_DIR] + jets.d2[:, c, Y_DIR]
            res[:, c] = (jets.d1[:, c, T_DIR] + u * jets.d1[:, c, X_DIR]
                         + v * jets.d1[:, c, Y_DIR] - nu * lap)
        return res

    def backward(self, jets, params, bar_res, forcing=None):
        nu = params["nu"]
        u, v = jets.values[:, 0], jets.values[:, 1]
        bar_values = np.zeros_like(jets.values)
        bar_d1 = np.zeros_like(jets.d1)
        bar_d2 = np.zeros_like(jets.d2)
        d_nu = 0.0
        for c in range(2):
            br = bar_res[:, c]
            bar_values[:, 0] += br * jets.d1[:, c, X_DIR]
            bar_values[:, 1] += br * jets.d1[:, c, Y_DIR]
            bar_d1[:, c, T_DIR] = br
            bar_d1[:, c, X_DIR] += br * u
            bar_d1[:, c, Y_DIR] += br * v
            bar_d2[:, c, X_DIR] = -nu * br
            bar_d2[:, c, Y_DIR] = -nu * br
            d_nu -= np.sum(br * (jets.d2[:, c, X_DIR] + jets.d2[:, c, Y_DIR]))
        return bar_values, bar_d1, bar_d2, {"nu": float(d_nu)}


class LambdaOmegaResidual:
    param_names = ("beta",)
    channels = 2

    def __init__(self, d_u: float = 1.0, d_v: float = 1.0):
        self.d_u = d_u
        self.d_v = d_v

    def residual(self, jets: Jet2Batch, params: dict, forcing=None) -> np.ndarray:
        AllenCahnResidual._need_dirs(jets)
        beta = params["beta"]
        u, v = jets.values[:, 0], jets.values[:, 1]
        r2 = u * u + v * v
        lam, om = 1.0 - r2, -beta * r2
        lap_u = jets.d2[:, 0, X_DIR] + jets.d2[:, 0, Y_DIR]
        lap_v = jets.d2[:, 1, X_DIR] + jets.d2[:, 1, Y_DIR]
        res = np.empty((u.shape[0], 2))
        res[:, 0] = jets.d1[:, 0, T_DIR] - self.d_u * lap_u - lam * u + om * v
        res[:, 1] = jets.d1[:, 1, T_DIR] - self.d_v * lap_v - om * u - lam * v
        return res

    def backward(self, jets, params, bar_res, forcing=None):
        beta = params["beta"]
        u, v = jets.values[:, 0], jets.values[:, 1]
        r2 = u * u + v * v
        bu, bv = bar_res[:, 0], bar_res[:, 1]
        bar_values = np.zeros_like(jets.values)
        # d(res_u)/du = -(1-r2) + 2u^2 - 2*beta*u*v ; d(res_u)/dv = 2uv - beta*r2 - 2*beta*v^2
        bar_values[:, 0] = (bu * (-(1.0 - r2) + 2.0 * u * u - 2.0 * beta * u * v)
                            + bv * (beta * r2 + 2.0 * beta * u * u + 2.0 * u * v))
        bar_values[:, 1] = (bu * (2.0 * u * v - beta * r2 - 2.0 * beta * v * v)
                            + bv * (2.0 * beta * u * v - (1.0 - r2) + 2.0 * v * v))
        bar_d1 = np.zeros_like(jets.d1)
        bar_d1[:, 0, T_DIR] = bu
        bar_d1[:, 1, T_DIR] = bv
        bar_d2 = np.zeros_like(jets.d2)
        bar_d2[:, 0, X_DIR] = -self.d_u * bu
        bar_d2[:, 0, Y_DIR] = -self.d_u * bu
        bar_d2[:, 1, X_DIR] = -self.d_v * bv
        bar_d2[:, 1, Y_DIR] = -self.d_v * bv
        d_beta = float(np.sum(bu * (-r2 * v) + bv * (r2 * u)))
        return bar_values, bar_d1, bar_d2, {"beta": d_beta}


def residual_operator(spec: ProblemSpec):
    if spec.kind == "allen_cahn":
        return AllenCahnResidual()
    if spec.kind == "burgers":
        return BurgersResidual()
    if spec.kind == "lambda_omega":
        return LambdaOmegaResidual(spec.true_params["d_u"], spec.true_params["d_v"])
    raise ValueError(spec.kind)


def forcing_function(spec: ProblemSpec):
    """Forcing evaluated at coordinate batches [n x 3]; None when zero."""
    if spec.kind != "allen_cahn":
        return None
    omega = spec.true_params["omega"]
    eps = spec.true_params["eps"]

    def f(coords: np.ndarray) -> np.ndarray:
        _, forcing = manufactured_solution_ac(
            coords[:, 0], coords[:, 1], coords[:, 2], omega=omega, eps=eps
        )
        return forcing[:, None]

    return f


# ---------------------------------------------------------------------------
# Reference fields
# ---------------------------------------------------------------------------

@dataclass
class ReferenceField:
    kind: str
    x_bounds: tuple[float, float]
    y_bounds: tuple[float, float]
    times: np.ndarray                # [n_t], sorted
    xs: np.ndarray                   # [n_x]
    ys: np.ndarray                   # [n_y]
    values: np.ndarray               # [n_t, n_x, n_y, channels]
    channel_names: tuple[str, ...]
    periodic: bool = False

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("reference field contains non-finite values")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    def mean_abs(self, channel: int) -> float:
        return float(np.mean(np.abs(self.values[..., channel])))

    def save(self, path) -> None:
        """Self-describing snapshot file (versioned npz)."""
        np.savez(
            path,
            format_version=FIELD_FORMAT_VERSION,
            kind=self.kind,
            x_bounds=np.asarray(self.x_bounds),
            y_bounds=np.asarray(self.y_bounds),
            times=self.times,
            xs=self.xs,
            ys=self.ys,
            values=self.values,
            channel_names=np.asarray(self.channel_names),
            periodic=self.periodic,
        )

    @classmethod
    def load(cls, path) -> "ReferenceField":
        with np.load(path, allow_pickle=False) as d:
            version = int(d["format_version"])
            if version != FIELD_FORMAT_VERSION:
                raise ValueError(f"unsupported field file version {version}")
            return cls(
                kind=str(d["kind"]),
                x_bounds=tuple(d["x_bounds"]),
                y_bounds=tuple(d["y_bounds"]),
                times=d["times"].copy(),
                xs=d["xs"].copy(),
                ys=d["ys"].copy(),
                values=d["values"].copy(),
                channel_names=tuple(str(c) for c in d["channel_names"]),
                periodic=bool(d["periodic"]),
            )


def sample_grf(grid_n: int, alpha: float = 5.0, seed=None) -> np.ndarray:
    """Smooth periodic Gaussian random field via spectral synthesis.

    Complex Gaussian Fourier coefficients are shaped by the isotropic
    amplitude (1 + |k|^2)^(-alpha/4) (power spectrum (1+|k|^2)^(-alpha/2),
    k in integer mode units), inverse-transformed, and normalized to zero
    mean / unit standard deviation.
    """
    if grid_n < 8:
        raise ValueError("grid_n must be >= 8")
    rng = np.random.default_rng(seed)
    k = np.fft.fftfreq(grid_n, d=1.0 / grid_n)
    k2 = k[:, None] ** 2 + k[None, :] ** 2
    amp = (1.0 + k2) ** (-alpha / 4.0)
    coeff = rng.normal(size=(grid_n, grid_n)) + 1j * rng.normal(size=(grid_n, grid_n))
    f = np.fft.ifft2(coeff * amp).real
    f -= f.mean()
    f /= f.std()
    return f


def _periodic_laplacian(z: np.ndarray, h: float) -> np.ndarray:
    return (np.roll(z, 1, 0) + np.roll(z, -1, 0) + np.roll(z, 1, 1)
            + np.roll(z, -1, 1) - 4.0 * z) / h**2


def _central_diff(z: np.ndarray, h: float, axis: int) -> np.ndarray:
    return (np.roll(z, -1, axis) - np.roll(z, 1, axis)) / (2.0 * h)


def _snapshot_schedule(duration: float, n_snapshots: int, dt_max: float,
                       burn_in: float):
    """Fixed step size dividing the snapshot interval exactly."""
    interval = duration / (n_snapshots - 1)
    steps_per_snap = max(1, math.ceil(interval / dt_max))
    dt = interval / steps_per_snap
    burn_steps = math.ceil(round(burn_in / dt, 9)) if burn_in > 0 else 0
    return dt, steps_per_snap, burn_steps


def _check_viscous_cfl(nu: float, dt: float, h: float):
    if nu * dt / h**2 > 0.25 + 1e-12:
        raise CflError(
            f"viscous CFL violated: nu*dt/h^2 = {nu * dt / h**2:.4g} > 0.25"
        )


def solve_burgers_fd(grid_n: int = 512, n_snapshots: int = 30, seed=0,
                     dt: float | None = None, nu: float = 0.01,
                     alpha: float = 5.0, advection: bool = True,
                     init_fields=None) -> ReferenceField:
    """Explicit Euler / second-order central differences, periodic box.

    Velocity components start from independent unit-variance random smooth
    fields; a burn-in interval is integrated and discarded before snapshots
    are recorded at fixed intervals. ``advection=False`` and ``init_fields``
    are test hooks (heat-equation decay checks).
    """
    spec = burgers_problem()
    lo, hi = spec.x_bounds
    h = (hi - lo) / grid_n
    xs = lo + h * np.arange(grid_n)
    duration = spec.t_bounds[1]

    if init_fields is None:
        ss = np.random.SeedSequence(seed)
        s_u, s_v = ss.spawn(2)
        u = sample_grf(grid_n, alpha=alpha, seed=s_u)
        v = sample_grf(grid_n, alpha=alpha, seed=s_v)
    else:
        u = np.array(init_fields[0], dtype=float)
        v = np.array(init_fields[1], dtype=float)

    if advection:
        # central differencing of the advection term needs the cell Reynolds
        # number below ~1.5 or grid-scale oscillations grow without bound
        speed = math.sqrt(float(np.max(u * u + v * v)))
        re_cell = speed * h / (2.0 * nu)
        if re_cell > 1.55:
            raise CflError(
                f"cell Reynolds number {re_cell:.2f} > 1.55 at grid_n={grid_n}; "
                f"use grid_n >= {math.ceil(speed * (hi - lo) / (2 * nu * 1.5))}"
            )

    if dt is None:
        speed2 = max(float(np.max(u * u + v * v)), 1e-12) * 1.5
        dt_adv = nu / speed2 if advection else np.inf
        dt = min(h**2 / (8.0 * nu), dt_adv, 0.25 * h / math.sqrt(speed2))
    _check_viscous_cfl(nu, dt, h)

    dt, steps_per_snap, burn_steps = _snapshot_schedule(
        duration, n_snapshots, dt, spec.burn_in
    )

    frames = np.empty((n_snapshots, grid_n, grid_n, 2))
    step = 0
    snap = 0
    total_steps = burn_steps + steps_per_snap * (n_snapshots - 1)
    while True:
        if step >= burn_steps and (step - burn_steps) % steps_per_snap == 0:
            frames[snap, ..., 0] = u
            frames[snap, ..., 1] = v
            snap += 1
            if snap == n_snapshots:
                break
        if advection:
            du = -(u * _central_diff(u, h, 0) + v * _central_diff(u, h, 1))
            dv = -(u * _central_diff(v, h, 0) + v * _central_diff(v, h, 1))
        else:
            du = np.zeros_like(u)
            dv = np.zeros_like(v)
        du += nu * _periodic_laplacian(u, h)
        dv += nu * _periodic_laplacian(v, h)
        u = u + dt * du
        v = v + dt * dv
        step += 1
        if step % 200 == 0 or step == total_steps:
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise BlowUpError(step)

    times = np.linspace(0.0, duration, n_snapshots)
    return ReferenceField(
        kind="burgers", x_bounds=spec.x_bounds, y_bounds=spec.y_bounds,
        times=times, xs=xs, ys=xs.copy(), values=frames,
        channel_names=("u", "v"), periodic=True,
    )


def spiral_initial_condition(grid_n: int, lo: float = -10.0, hi: float = 10.0):
    h = (hi - lo) / grid_n
    xs = lo + h * np.arange(grid_n)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    rho = np.tanh(np.sqrt(gx**2 + gy**2))
    theta = np.arctan2(gy, gx)
    return rho * np.cos(theta - rho), rho * np.sin(theta - rho), xs


def solve_lambda_omega_fd(grid_n: int = 256, n_snapshots: int = 30,
                          dt: float | None = None, beta: float = 1.0,
                          d_u: float = 1.0, d_v: float = 1.0) -> ReferenceField:
    """Spiral-wave reaction-diffusion solve: explicit Euler, periodic wrap."""
    spec = lambda_omega_problem()
    lo, hi = spec.x_bounds
    h = (hi - lo) / grid_n
    duration = spec.t_bounds[1]
    u, v, xs = spiral_initial_condition(grid_n, lo, hi)

    if dt is None:
        dt = 0.8 * h**2 / (8.0 * max(d_u, d_v))
    _check_viscous_cfl(max(d_u, d_v), dt, h)

    dt, steps_per_snap, _ = _snapshot_schedule(duration, n_snapshots, dt, 0.0)

    frames = np.empty((n_snapshots, grid_n, grid_n, 2))
    step = 0
    snap = 0
    while True:
        if step % steps_per_snap == 0:
            frames[snap, ..., 0] = u
            frames[snap, ..., 1] = v
            snap += 1
            if snap == n_snapshots:
                break
        r2 = u * u + v * v
        lam, om = 1.0 - r2, -beta * r2
        du = d_u * _periodic_laplacian(u, h) + lam * u - om * v
        dv = d_v * _periodic_laplacian(v, h) + om * u + lam * v
        u = u + dt * du
        v = v + dt * dv
        step += 1
        if step % 200 == 0:
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise BlowUpError(step)

    times = np.linspace(0.0, duration, n_snapshots)
    return ReferenceField(
        kind="lambda_omega", x_bounds=spec.x_bounds, y_bounds=spec.y_bounds,
        times=times, xs=xs, ys=xs.copy(), values=frames,
        channel_names=("u", "v"), periodic=True,
    )


def allen_cahn_reference(grid_n: int = 256, n_snapshots: int = 30,
                         omega: float = math.pi) -> ReferenceField:
    """Analytic solution sampled on a closed regular grid."""
    spec = allen_cahn_problem(omega)
    xs = np.linspace(*spec.x_bounds, grid_n)
    times = np.linspace(*spec.t_bounds, n_snapshots)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    frames = np.empty((n_snapshots, grid_n, grid_n, 1))
    for i, t in enumerate(times):
        u, _ = manufactured_solution_ac(gx, gy, t, omega=omega,
                                        eps=spec.true_params["eps"])
        frames[i, ..., 0] = u
    return ReferenceField(
        kind="allen_cahn", x_bounds=spec.x_bounds, y_bounds=spec.y_bounds,
        times=times, xs=xs, ys=xs.copy(), values=frames,
        channel_names=("u",), periodic=False,
    )


def generate_reference(spec: ProblemSpec, grid_n: int, n_snapshots: int,
                       seed=0) -> ReferenceField:
    if spec.kind == "allen_cahn":
        return allen_cahn_reference(grid_n, n_snapshots, spec.true_params["omega"])
    if spec.kind == "burgers":
        return solve_burgers_fd(grid_n, n_snapshots, seed=seed,
                                nu=spec.true_params["nu"],
                                alpha=spec.true_params["grf_alpha"])
    if spec.kind == "lambda_omega":
        return solve_lambda_omega_fd(grid_n, n_snapshots,
                                     beta=spec.true_params["beta"],
                                     d_u=spec.true_params["d_u"],
                                     d_v=spec.true_params["d_v"])
    raise ValueError(spec.kind)


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------

def aligned_indices(field: ReferenceField, n: int) -> np.ndarray:
    """Indices of the n-point subgrid closest to an even spread across the
    spatial domain (duplicates possible when n exceeds the stored grid)."""
    if n < 2:
        raise ValueError("n must be >= 2")
    lo, hi = field.x_bounds
    targets = np.linspace(lo, hi, n)
    idx = np.clip(np.round((targets - field.xs[0]) /
                           (field.xs[1] - field.xs[0])).astype(int),
                  0, len(field.xs) - 1)
    return idx


@dataclass
class GridSample:
    """A spatial subgrid crossed with all snapshot times of a field."""

    coords: np.ndarray        # [n_points x 3] as (x, y, t)
    clean: np.ndarray         # [n_points x channels]
    channels: int

    @property
    def n_points(self) -> int:
        return self.coords.shape[0]


def grid_sample(field: ReferenceField, n: int) -> GridSample:
    """Coordinates and clean values on the aligned n x n grid at every
    recorded snapshot time, ordered (t, x, y)."""
    ix = aligned_indices(field, n)
    xs = field.xs[ix]
    ys = field.ys[ix]
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    per_time = n * n
    n_t = len(field.times)
    coords = np.empty((n_t * per_time, 3))
    clean = np.empty((n_t * per_time, field.channels))
    sub = field.values[np.ix_(np.arange(n_t), ix, ix)]
    for it, t in enumerate(field.times):
        s = slice(it * per_time, (it + 1) * per_time)
        coords[s, 0] = gx.ravel()
        coords[s, 1] = gy.ravel()
        coords[s, 2] = t
        clean[s] = sub[it].reshape(per_time, field.channels)
    return GridSample(coords=coords, clean=clean, channels=field.channels)


def eval_grid(field: ReferenceField, n: int = 120) -> GridSample:
    """Dense evaluation grid (defaults to 120 x 120 spatial points)."""
    return grid_sample(field, n)


def sensor_grid(field: ReferenceField, n: int = 15) -> GridSample:
    """Fixed sensor grid (defaults to 15 x 15 = 225 sensors)."""
    return grid_sample(field, n)


def collocation_coords(spec: ProblemSpec, times: np.ndarray, n: int = 100) -> np.ndarray:
    """Regular n x n spatial grid crossed with snapshot times; the PDE
    residual needs no reference values so no solver-grid alignment applies."""
    xs = np.linspace(*spec.x_bounds, n)
    ys = np.linspace(*spec.y_bounds, n)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    n_t = len(times)
    coords = np.empty((n_t * n * n, 3))
    for it, t in enumerate(times):
        s = slice(it * n * n, (it + 1) * n * n)
        coords[s, :2] = pts
        coords[s, 2] = t
    return coords
