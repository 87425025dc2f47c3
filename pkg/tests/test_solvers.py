import numpy as np
import pytest

from derivlearn.errors import (BoundaryError, DomainError, ShapeError,
                               StabilityError)
from derivlearn.problems import make_problem
from derivlearn.solvers import (GridField, continuity_fv_solve,
                                cubic_interpolate, empirical_derivative,
                                kdv_spectral_solve, kdv_total_mass, rk4_step,
                                rk4_trajectory)


def gaussian_ic(nx=121, center=(0.6, 0.0), sigma=0.2, half_width=1.5):
    xs = np.linspace(-half_width, half_width, nx)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    rho = np.exp(-((X - center[0]) ** 2 + (Y - center[1]) ** 2)
                 / (2 * sigma ** 2))
    return GridField([xs, xs], rho)


class TestRK4:
    def test_zero_rhs_constant(self):
        traj = rk4_trajectory(lambda s, t: 0.0 * s, np.array([2.0, -1.0]),
                              0.1, 1.0)
        assert np.all(traj.data == traj.data[0])

    def test_exponential_decay(self):
        traj = rk4_trajectory(lambda s, t: -s, np.array([1.0]), 0.01, 1.0)
        assert abs(traj.data[-1, 0] - np.exp(-1.0)) <= 1e-8

    def test_growth_factor_taylor_series(self):
        # one RK4 step on u' = lam u reproduces the degree-4 Taylor
        # polynomial of exp at z = lam*dt exactly
        z = 0.1
        got = rk4_step(lambda s, t: z * s, np.array([1.0]), 0.0, 1.0)[0]
        poly = 1 + z + z ** 2 / 2 + z ** 3 / 6 + z ** 4 / 24
        assert got == pytest.approx(poly, abs=1e-15)

    def test_conservative_pendulum_energy_drift(self):
        pend = make_problem("pendulum", b_over_m=0.0)
        traj = rk4_trajectory(lambda s, t: pend.rhs(s), np.array([1.0, 0.5]),
                              0.01, 10.0)
        energy = pend.energy(traj.data)
        assert np.max(np.abs(energy - energy[0])) / energy[0] <= 1e-6

    def test_divergence_reports_step(self):
        from derivlearn.errors import DivergenceError
        with pytest.raises(DivergenceError) as err:
            rk4_trajectory(lambda s, t: s ** 3, np.array([5.0]), 0.5, 50.0)
        assert err.value.step is not None


class TestContinuityFV:
    def test_zero_ic_stays_zero(self):
        ic = gaussian_ic()
        ic = GridField(ic.axes, np.zeros_like(ic.data))
        sol = continuity_fv_solve(ic, dt=0.004, t_final=0.1)
        assert np.all(sol.data == 0.0)

    def test_mass_conserved_over_long_run(self):
        ic = gaussian_ic(nx=101)
        dx = ic.spacing(0)
        sol = continuity_fv_solve(ic, dt=0.2 * dx / 3.0, t_final=10.0,
                                  store_every=500)
        m0 = sol.data[0].sum() * dx * dx
        for frame in range(sol.data.shape[0]):
            m = sol.data[frame].sum() * dx * dx
            assert abs(m - m0) / m0 <= 1e-10

    def test_quarter_rotation_moves_center_one_cell(self):
        ic = gaussian_ic(nx=151)
        dx = ic.spacing(0)
        sol = continuity_fv_solve(ic, dt=0.5 * dx / 3.0,
                                  t_final=np.pi / 2, store_every=10 ** 9)
        xs = sol.axes[1]
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        rho = sol.data[-1]
        cx = (rho * X).sum() / rho.sum()
        cy = (rho * Y).sum() / rho.sum()
        # exact advection rotates (0.6, 0) onto (0, 0.6)
        assert abs(cx - 0.0) <= dx
        assert abs(cy - 0.6) <= dx

    def test_positivity_preserved(self):
        ic = gaussian_ic(nx=81)
        dx = ic.spacing(0)
        sol = continuity_fv_solve(ic, dt=0.5 * dx / 3.0, t_final=1.0,
                                  store_every=50)
        assert sol.data.min() >= -1e-12

    def test_cfl_violation_reports_required_dt(self):
        ic = gaussian_ic(nx=81)
        with pytest.raises(StabilityError, match="dt"):
            continuity_fv_solve(ic, dt=1.0, t_final=2.0)


class TestKdVSpectral:
    def test_constant_ic_is_fixed_point(self):
        sol = kdv_spectral_solve(lambda x: 0 * x + 0.7, nu=0.1, nx=64,
                                 dt=1e-3, t_final=0.05)
        assert np.max(np.abs(sol.data - 0.7)) == 0.0

    def test_mass_conserved(self):
        sol = kdv_spectral_solve(lambda x: np.cos(np.pi * x), nu=0.0025,
                                 nx=256, dt=1e-3, t_final=1.0,
                                 store_every=100)
        masses = [kdv_total_mass(sol, k) for k in range(sol.data.shape[0])]
        assert max(abs(m - masses[0]) for m in masses) <= 1e-8

    def test_self_convergence_order_at_least_three(self):
        runs = [kdv_spectral_solve(lambda x: np.cos(np.pi * x), nu=0.0025,
                                   nx=256, dt=dt, t_final=0.5,
                                   store_every=10 ** 9)
                for dt in (1e-3, 5e-4, 2.5e-4)]
        e1 = np.sqrt(np.mean((runs[0].data[-1] - runs[2].data[-1]) ** 2))
        e2 = np.sqrt(np.mean((runs[1].data[-1] - runs[2].data[-1]) ** 2))
        assert np.log2(e1 / e2) >= 3.0
        assert e2 <= 1e-6

    def test_small_amplitude_matches_linear_dispersion(self):
        # for amplitude eps the nonlinear term is O(eps^2); the linear
        # equation moves cos(pi x) to cos(pi x + nu pi^3 t)
        eps, nu = 1e-5, 0.0025
        sol = kdv_spectral_solve(lambda x: eps * np.cos(np.pi * x), nu=nu,
                                 nx=128, dt=1e-3, t_final=1.0,
                                 store_every=10 ** 9)
        xs = sol.axes[1]
        exact = eps * np.cos(np.pi * xs + nu * np.pi ** 3)
        assert np.max(np.abs(sol.data[-1] - exact)) <= 1e-9

    def test_power_of_two_required(self):
        with pytest.raises(ShapeError):
            kdv_spectral_solve(lambda x: np.cos(np.pi * x), nu=0.0025, nx=100,
                               dt=1e-3, t_final=0.1)


class TestEmpiricalDerivative:
    def test_linear_slope_exact_any_h(self):
        fn = lambda p: 3.0 * p[0] + 1.0
        for h in (0.1, 0.01):
            for scheme in ("forward", "central"):
                got = empirical_derivative(fn, [0.4], 0, h, scheme)
                assert got == pytest.approx(3.0, abs=1e-12)

    def test_convergence_orders_on_sine(self):
        # oracle: d/dx sin = cos; forward error ~ h, central ~ h^2
        errs = {"forward": [], "central": []}
        for scheme in errs:
            for h in (1e-1, 1e-2, 1e-3):
                got = empirical_derivative(lambda p: np.sin(p[0]), [0.7], 0,
                                           h, scheme)
                errs[scheme].append(abs(got - np.cos(0.7)))
        fwd = np.log10(errs["forward"][0] / errs["forward"][2]) / 2
        cen = np.log10(errs["central"][0] / errs["central"][2]) / 2
        assert fwd >= 0.95
        assert cen >= 1.9

    def test_quotient_norm_bounded_by_derivative_norm(self, rng):
        # numerical version of the L2 bound for difference quotients of
        # compactly supported bumps
        for _ in range(10):
            c = rng.uniform(-0.3, 0.3)
            w = rng.uniform(0.3, 0.8)
            amp = rng.uniform(0.5, 2.0)

            def bump(x):
                s = (x - c) / w
                out = np.zeros_like(x)
                inside = np.abs(s) < 1
                out[inside] = amp * np.exp(-1.0 / (1.0 - s[inside] ** 2))
                return out

            def dbump(x):
                s = (x - c) / w
                out = np.zeros_like(x)
                inside = np.abs(s) < 1
                si = s[inside]
                out[inside] = amp * np.exp(-1.0 / (1.0 - si ** 2)) \
                    * (-2.0 * si / (1.0 - si ** 2) ** 2) / w
                return out

            xs = np.linspace(-2, 2, 8001)
            dx = xs[1] - xs[0]
            for h in (0.05, 0.01, 0.001):
                quot = (bump(xs + h) - bump(xs)) / h
                norm_q = np.sqrt(np.sum(quot ** 2) * dx)
                norm_d = np.sqrt(np.sum(dbump(xs) ** 2) * dx)
                assert norm_q <= norm_d + 1e-9

    def test_boundary_stencil_rejected(self):
        grid = GridField([np.linspace(0, 1, 11)], np.linspace(0, 1, 11) ** 2)
        with pytest.raises(BoundaryError):
            empirical_derivative(grid, [0.999], 0, 0.01, "forward")


class TestCubicInterpolate:
    def test_exact_on_cubic_polynomial(self):
        xs = np.linspace(0, 2, 21)
        grid = GridField([xs], xs ** 3)
        q = np.array([[0.137], [1.777], [0.05], [1.03]])
        got = cubic_interpolate(grid, q)
        assert np.max(np.abs(got - q.ravel() ** 3)) <= 1e-10

    def test_exact_on_2d_cubic(self, rng):
        xs = np.linspace(-1, 1, 15)
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        f = X ** 3 - 2 * X ** 2 * Y + 0.5 * Y ** 3 + X * Y
        grid = GridField([xs, xs], f)
        q = rng.uniform(-1, 1, (50, 2))
        want = (q[:, 0] ** 3 - 2 * q[:, 0] ** 2 * q[:, 1]
                + 0.5 * q[:, 1] ** 3 + q[:, 0] * q[:, 1])
        assert np.max(np.abs(cubic_interpolate(grid, q) - want)) <= 1e-10

    def test_grid_node_returns_stored_value(self):
        xs = np.linspace(0, 1, 9)
        grid = GridField([xs], np.sin(xs))
        assert cubic_interpolate(grid, np.array([xs[4]])) == np.sin(xs[4])

    def test_sine_product_accuracy(self, rng):
        xs = np.arange(-1, 1.0001, 0.01)
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        grid = GridField([xs, xs], np.sin(np.pi * X) * np.sin(np.pi * Y))
        q = rng.uniform(-0.99, 0.99, (200, 2))
        want = np.sin(np.pi * q[:, 0]) * np.sin(np.pi * q[:, 1])
        assert np.max(np.abs(cubic_interpolate(grid, q) - want)) <= 1e-6

    def test_outside_hull_rejected(self):
        xs = np.linspace(0, 1, 9)
        grid = GridField([xs], xs ** 2)
        with pytest.raises(DomainError):
            cubic_interpolate(grid, np.array([1.2]))


class TestGridFieldIO:
    def test_binary_round_trip_bit_exact(self, tmp_path, rng):
        field = GridField([np.linspace(0, 1, 6), np.linspace(-1, 1, 4)],
                          rng.normal(size=(6, 4, 2)), {"dt": 0.1})
        path = tmp_path / "field.bin"
        field.save(path)
        back = GridField.load(path)
        assert np.array_equal(back.data, field.data)
        assert all(np.array_equal(a, b)
                   for a, b in zip(back.axes, field.axes))
        assert back.meta["dt"] == 0.1

    def test_csv_export(self, tmp_path):
        field = GridField([np.linspace(0, 1, 3)], np.array([1.0, 2.0, 3.0]))
        out = tmp_path / "small.csv"
        field.export_csv(out)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "x0,u0"
        assert len(lines) == 4

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            GridField([np.linspace(0, 1, 5)], np.zeros(4))
