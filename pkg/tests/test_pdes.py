"""PDE suite: residual operators against hand computations, solver oracles."""

import numpy as np
import pytest

from napinn.nets import Jet2Batch
from napinn.pdes import (
    JET_DIRECTIONS,
    AllenCahnResidual,
    BurgersResidual,
    CflError,
    LambdaOmegaResidual,
    ReferenceField,
    aligned_indices,
    allen_cahn_problem,
    allen_cahn_reference,
    burgers_problem,
    collocation_coords,
    eval_grid,
    forcing_function,
    grid_sample,
    lambda_omega_problem,
    manufactured_derivatives_ac,
    manufactured_solution_ac,
    sample_grf,
    sensor_grid,
    solve_burgers_fd,
    solve_lambda_omega_fd,
    spiral_initial_condition,
)


def make_jets(values, d1=None, d2=None):
    """Hand-built jet batch, zero derivatives unless given."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    b, c = values.shape
    out_d1 = np.zeros((b, c, 3)) if d1 is None else np.asarray(d1, dtype=float)
    out_d2 = np.zeros((b, c, 3)) if d2 is None else np.asarray(d2, dtype=float)
    return Jet2Batch(values, out_d1, out_d2, JET_DIRECTIONS)


def _mild_init(n, seed, amplitude=0.5):
    """Reduced-amplitude smooth initial fields: keeps coarse grids within the
    cell-Reynolds guard so the solver-order tests stay fast."""
    ss = np.random.SeedSequence(seed).spawn(2)
    return (amplitude * sample_grf(n, 5.0, seed=ss[0]),
            amplitude * sample_grf(n, 5.0, seed=ss[1]))


class TestManufacturedSolution:
    def test_zero_on_boundary(self):
        u, _ = manufactured_solution_ac(0.0, 0.7, 0.3)
        assert u == 0.0

    def test_center_at_t0(self):
        u, _ = manufactured_solution_ac(0.5, 0.5, 0.0)
        assert np.isclose(u, 1.0, rtol=1e-15)

    def test_forcing_value_at_center(self):
        # u*=1, u*_t=0, lap u* = -2 pi^2 => f = 2 pi^2 eps^2 = 0.18 pi^2
        _, f = manufactured_solution_ac(0.5, 0.5, 0.0, eps=0.3)
        assert np.isclose(f, 0.18 * np.pi**2, rtol=1e-14)

    def test_pde_satisfied_exactly(self):
        # analytic derivatives plugged into the residual: |r| <= 1e-12
        rng = np.random.default_rng(0)
        x, y, t = rng.uniform(size=(3, 1000))
        d = manufactured_derivatives_ac(x, y, t)
        _, f = manufactured_solution_ac(x, y, t, eps=0.3)
        r = d["u_t"] - 0.09 * (d["u_xx"] + d["u_yy"]) + d["u"] ** 3 - d["u"] - f
        assert np.max(np.abs(r)) <= 1e-12

    def test_residual_operator_on_analytic_jets(self):
        rng = np.random.default_rng(1)
        x, y, t = rng.uniform(size=(3, 200))
        d = manufactured_derivatives_ac(x, y, t)
        _, f = manufactured_solution_ac(x, y, t, eps=0.3)
        d1 = np.zeros((200, 1, 3))
        d1[:, 0, 0], d1[:, 0, 1], d1[:, 0, 2] = d["u_x"], d["u_y"], d["u_t"]
        d2 = np.zeros((200, 1, 3))
        d2[:, 0, 0], d2[:, 0, 1] = d["u_xx"], d["u_yy"]
        jets = make_jets(d["u"][:, None], d1, d2)
        r = AllenCahnResidual().residual(jets, {"eps": 0.3}, forcing=f)
        assert np.max(np.abs(r)) <= 1e-12


class TestAllenCahnResidual:
    def test_zero_field_zero_forcing(self):
        jets = make_jets(np.zeros((5, 1)))
        r = AllenCahnResidual().residual(jets, {"eps": 0.3})
        assert np.all(r == 0.0)

    def test_constant_field(self):
        # derivatives vanish: r = c^3 - c
        c = 0.7
        jets = make_jets(np.full((4, 1), c))
        r = AllenCahnResidual().residual(jets, {"eps": 1.3})
        assert np.allclose(r, c**3 - c, rtol=1e-15)

    def test_linear_in_forcing(self):
        rng = np.random.default_rng(2)
        jets = make_jets(rng.normal(size=(6, 1)), rng.normal(size=(6, 1, 3)),
                         rng.normal(size=(6, 1, 3)))
        op = AllenCahnResidual()
        f1, f2 = rng.normal(size=6), rng.normal(size=6)
        r0 = op.residual(jets, {"eps": 0.5})
        ra = op.residual(jets, {"eps": 0.5}, forcing=f1)
        rb = op.residual(jets, {"eps": 0.5}, forcing=f2)
        rab = op.residual(jets, {"eps": 0.5}, forcing=f1 + f2)
        assert np.allclose(rab, ra + rb - r0, atol=1e-14)

    def test_missing_directions_error(self):
        jets = Jet2Batch(np.zeros((3, 1)), None, None, ())
        with pytest.raises(ValueError):
            AllenCahnResidual().residual(jets, {"eps": 0.3})


class TestBurgersResidual:
    def test_zero_fields(self):
        jets = make_jets(np.zeros((5, 2)))
        r = BurgersResidual().residual(jets, {"nu": 0.37})
        assert np.all(r == 0.0)

    def test_constant_fields(self):
        jets = make_jets(np.tile([1.2, -0.4], (5, 1)))
        r = BurgersResidual().residual(jets, {"nu": 0.37})
        assert np.all(r == 0.0)

    def test_u_equals_x(self):
        # u = x, v = 0: u_t = 0, u u_x = x, diffusion 0 -> r_u = x
        x = np.array([0.3, 1.5, -2.0])
        vals = np.column_stack([x, np.zeros(3)])
        d1 = np.zeros((3, 2, 3))
        d1[:, 0, 0] = 1.0  # u_x = 1
        jets = make_jets(vals, d1)
        r = BurgersResidual().residual(jets, {"nu": 0.9})
        assert np.allclose(r[:, 0], x, rtol=1e-15)
        assert np.all(r[:, 1] == 0.0)


class TestLambdaOmegaResidual:
    def test_zero_fields(self):
        jets = make_jets(np.zeros((4, 2)))
        r = LambdaOmegaResidual().residual(jets, {"beta": 1.0})
        assert np.all(r == 0.0)

    def test_constant_unit_u(self):
        # (u, v) = (1, 0): r^2 = 1, lambda = 0, omega = -beta -> (0, beta)
        beta = 0.8
        jets = make_jets(np.tile([1.0, 0.0], (3, 1)))
        r = LambdaOmegaResidual().residual(jets, {"beta": beta})
        assert np.allclose(r[:, 0], 0.0, atol=1e-15)
        assert np.allclose(r[:, 1], beta, rtol=1e-15)

    def test_unit_circle_beta_zero(self):
        theta = np.linspace(0, 2 * np.pi, 7)
        jets = make_jets(np.column_stack([np.cos(theta), np.sin(theta)]))
        r = LambdaOmegaResidual().residual(jets, {"beta": 0.0})
        assert np.allclose(r, 0.0, atol=1e-14)


class TestGrf:
    def test_normalized(self):
        f = sample_grf(64, 5.0, seed=0)
        assert abs(f.mean()) <= 1e-12
        assert abs(f.std() - 1.0) <= 1e-12

    def test_alpha_5_smoother_than_alpha_1(self):
        def grad_energy(g):
            return np.sum(np.diff(g, axis=0) ** 2) + np.sum(np.diff(g, axis=1) ** 2)

        for seed in range(3):
            g5 = sample_grf(64, 5.0, seed=seed)
            g1 = sample_grf(64, 1.0, seed=seed)
            assert grad_energy(g5) < grad_energy(g1)

    def test_deterministic(self):
        assert np.array_equal(sample_grf(32, 5.0, seed=9), sample_grf(32, 5.0, seed=9))

    def test_min_grid(self):
        with pytest.raises(ValueError):
            sample_grf(4, 5.0, seed=0)


class TestBurgersSolver:
    def test_zero_initial_field_stays_zero(self):
        zeros = np.zeros((64, 64))
        f = solve_burgers_fd(grid_n=64, n_snapshots=5, nu=1.0,
                             init_fields=(zeros, zeros))
        assert np.all(f.values == 0.0)

    def test_heat_mode_decay(self):
        # advection off, u = sin(2 pi x / L): exact decay exp(-nu k^2 t)
        n, nu = 64, 0.05
        spec = burgers_problem()
        length = spec.x_bounds[1] - spec.x_bounds[0]
        h = length / n
        xs = h * np.arange(n)
        u0 = np.sin(2 * np.pi * xs / length)[:, None] * np.ones((1, n))
        f = solve_burgers_fd(grid_n=n, n_snapshots=10, nu=nu, advection=False,
                             init_fields=(u0, np.zeros((n, n))))
        k = 2 * np.pi / length
        for it, t in enumerate(f.times):
            # burn-in offset: recorded t=0 already integrated over the burn-in
            amp = np.max(np.abs(f.values[it, ..., 0]))
            expected = np.exp(-nu * k**2 * (t + spec.burn_in))
            assert abs(amp - expected) <= 0.02 * expected

    def test_bounded_after_burn_in(self):
        u0, v0 = _mild_init(256, seed=0)
        f = solve_burgers_fd(grid_n=256, n_snapshots=6, init_fields=(u0, v0))
        peaks = np.abs(f.values).max(axis=(1, 2, 3))
        assert np.all(peaks[1:] <= peaks[:-1] * 1.05)

    def test_cfl_violation_raises(self):
        with pytest.raises(CflError):
            solve_burgers_fd(grid_n=64, n_snapshots=5, nu=1.0, dt=1.0,
                             init_fields=(np.zeros((64, 64)), np.zeros((64, 64))))

    def test_cell_reynolds_guard(self):
        with pytest.raises(CflError):
            solve_burgers_fd(grid_n=64, n_snapshots=5, seed=0)

    def test_deterministic(self):
        u0, v0 = _mild_init(128, seed=3, amplitude=0.15)
        a = solve_burgers_fd(grid_n=128, n_snapshots=4, init_fields=(u0, v0))
        b = solve_burgers_fd(grid_n=128, n_snapshots=4, init_fields=(u0, v0))
        assert np.array_equal(a.values, b.values)


class TestLambdaOmegaSolver:
    def test_spiral_center_zero(self):
        u0, v0, xs = spiral_initial_condition(64)
        i = np.argmin(np.abs(xs))  # rho(0) = tanh(0) = 0
        assert abs(u0[i, i]) < 0.05 and abs(v0[i, i]) < 0.05

    def test_amplitude_bound(self):
        f = solve_lambda_omega_fd(grid_n=64, n_snapshots=10)
        r2 = f.values[..., 0] ** 2 + f.values[..., 1] ** 2
        assert r2.max() <= 1.2

    def test_self_convergence_order(self):
        # order of explicit Euler in dt: error(dt)/error(dt/2) ~ 2^p, p >= 0.9
        n = 48
        base = 0.008
        runs = [solve_lambda_omega_fd(grid_n=n, n_snapshots=4, dt=base / s)
                for s in (1, 2, 4)]
        e1 = np.max(np.abs(runs[0].values[-1] - runs[1].values[-1]))
        e2 = np.max(np.abs(runs[1].values[-1] - runs[2].values[-1]))
        order = np.log2(e1 / e2)
        assert order >= 0.9

    def test_halving_dt_small_change(self):
        a = solve_lambda_omega_fd(grid_n=48, n_snapshots=4, dt=0.004)
        b = solve_lambda_omega_fd(grid_n=48, n_snapshots=4, dt=0.002)
        rel = np.max(np.abs(a.values[-1] - b.values[-1])) / np.max(np.abs(b.values[-1]))
        assert rel < 1e-2


class TestBurgersSelfConvergence:
    def test_order_at_least_09(self):
        n = 128
        u0, v0 = _mild_init(n, seed=0, amplitude=0.15)
        base = 2e-3
        runs = [solve_burgers_fd(grid_n=n, n_snapshots=3, dt=base / s,
                                 init_fields=(u0, v0))
                for s in (1, 2, 4)]
        e1 = np.max(np.abs(runs[0].values[-1] - runs[1].values[-1]))
        e2 = np.max(np.abs(runs[1].values[-1] - runs[2].values[-1]))
        assert np.log2(e1 / e2) >= 0.9


class TestGrids:
    def test_reference_field_round_trip(self, tmp_path):
        f = allen_cahn_reference(grid_n=32, n_snapshots=5)
        path = tmp_path / "field.npz"
        f.save(path)
        g = ReferenceField.load(path)
        assert g.kind == f.kind
        assert np.array_equal(g.values, f.values)
        assert np.array_equal(g.times, f.times)

    def test_eval_grid_counts(self):
        f = allen_cahn_reference(grid_n=128, n_snapshots=3)
        g = eval_grid(f, 120)
        assert g.n_points == 120 * 120 * 3

    def test_two_point_grid_hits_corners(self):
        f = allen_cahn_reference(grid_n=16, n_snapshots=2)
        g = grid_sample(f, 2)
        spatial = {(x, y) for x, y in g.coords[:, :2][:4]}
        assert spatial == {(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)}

    def test_points_inside_closed_domain(self):
        f = allen_cahn_reference(grid_n=64, n_snapshots=4)
        g = eval_grid(f, 17)
        assert np.all(g.coords[:, 0] >= 0.0) and np.all(g.coords[:, 0] <= 1.0)
        assert np.all(g.coords[:, 2] >= 0.0) and np.all(g.coords[:, 2] <= 1.0)

    def test_sensor_grid_clean_values_match_field(self):
        f = allen_cahn_reference(grid_n=64, n_snapshots=4)
        g = sensor_grid(f, 15)
        u, _ = manufactured_solution_ac(g.coords[:, 0], g.coords[:, 1],
                                        g.coords[:, 2])
        assert np.allclose(g.clean[:, 0], u, atol=1e-12)

    def test_aligned_indices_monotone(self):
        f = solve_lambda_omega_fd(grid_n=48, n_snapshots=2, dt=0.01)
        idx = aligned_indices(f, 15)
        assert len(idx) == 15
        assert np.all(np.diff(idx) >= 1)

    def test_collocation_grid(self):
        spec = lambda_omega_problem()
        coords = collocation_coords(spec, np.array([0.0, 5.0]), n=10)
        assert coords.shape == (200, 3)
        assert coords[:, 0].min() == -10.0 and coords[:, 0].max() == 10.0

    def test_forcing_only_for_allen_cahn(self):
        assert forcing_function(allen_cahn_problem()) is not None
        assert forcing_function(burgers_problem()) is None
        assert forcing_function(lambda_omega_problem()) is None
