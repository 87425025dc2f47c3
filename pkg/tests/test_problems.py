import numpy as np
import pytest

from derivlearn.errors import CapabilityError, ShapeError
from derivlearn.network import init_network
from derivlearn.problems import (make_problem, pde_residual, pendulum_g_residual,
                                 pendulum_rhs, vorticity_error)
from derivlearn.solvers import rk4_trajectory

ANALYTIC = ["allen_cahn", "allen_cahn_1p", "allen_cahn_2p", "kovasznay"]


def interior_sample(problem, rng, n):
    lo = np.array([b[0] for b in problem.spec.domain])
    hi = np.array([b[1] for b in problem.spec.domain])
    return rng.uniform(lo, hi, size=(n, len(lo)))


class TestAnalyticSolutions:
    def test_allen_cahn_center_value(self):
        ac = make_problem("allen_cahn")
        val = ac.analytic_solution(np.array([[0.5, 0.5]]))[0, 0]
        assert val == pytest.approx(1.0, abs=1e-15)

    def test_one_param_vanishes_at_x_zero(self, rng):
        ac = make_problem("allen_cahn_1p")
        y = rng.uniform(-1, 1, 10)
        xi = rng.uniform(0, np.pi, 10)
        pts = np.stack([np.zeros(10), y, xi], axis=1)
        assert np.all(ac.analytic_solution(pts) == 0.0)

    def test_two_param_center_selects_first_mode(self, rng):
        ac = make_problem("allen_cahn_2p")
        xi = rng.uniform(0, 1, (10, 2))
        pts = np.column_stack([np.full(10, 0.5), np.full(10, 0.5), xi])
        vals = ac.analytic_solution(pts)[:, 0]
        assert np.max(np.abs(vals - xi[:, 0])) <= 1e-15

    def test_kovasznay_lambda_frozen_value(self):
        # frozen from a 40-digit evaluation of 1/(2 nu) - sqrt(1/(4 nu^2) + 4 pi^2)
        kov = make_problem("kovasznay")
        assert kov.lam == pytest.approx(-0.77747888379229057, abs=1e-14)

    @pytest.mark.parametrize("name", ANALYTIC)
    def test_analytic_jacobian_hessian_match_fd(self, rng, name):
        problem = make_problem(name)
        pts = interior_sample(problem, rng, 40)
        # stay away from bounds so the FD stencil remains meaningful
        pts = 0.9 * pts
        f = problem.analytic_field()
        outs = f.evaluate(pts, order=2)
        d = pts.shape[1]
        h = 1e-5
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            fd = (f.evaluate(pts + e).values - f.evaluate(pts - e).values) / (2 * h)
            assert np.max(np.abs(outs.jacobian[:, :, i] - fd)) <= 1e-7 * max(
                1.0, np.max(np.abs(fd)))
        for i in range(d):
            for j in range(d):
                ei, ej = np.zeros(d), np.zeros(d)
                ei[i], ej[j] = h, h
                fd = (f.evaluate(pts + ei + ej).values
                      - f.evaluate(pts + ei - ej).values
                      - f.evaluate(pts - ei + ej).values
                      + f.evaluate(pts - ei - ej).values) / (4 * h * h)
                assert np.max(np.abs(outs.hessian[:, :, i, j] - fd)) <= 2e-5 \
                    * max(1.0, np.max(np.abs(fd)))


class TestResidualAnchor:
    @pytest.mark.parametrize("name", ANALYTIC)
    def test_analytic_solution_has_zero_residual(self, rng, name):
        # central consistency anchor: the closed-form solution satisfies its
        # own operator at 1000 random interior points
        problem = make_problem(name)
        pts = interior_sample(problem, rng, 1000)
        res = pde_residual(problem, problem.analytic_field(), pts)
        assert np.mean(np.sum(res ** 2, axis=1)) <= 1e-16

    def test_allen_cahn_forcing_by_construction(self, rng):
        ac = make_problem("allen_cahn")
        pts = interior_sample(ac, rng, 100)
        res = pde_residual(ac, ac.analytic_field(), pts)
        assert np.max(np.abs(res)) <= 1e-9

    def test_forcing_at_origin_is_zero(self):
        ac = make_problem("allen_cahn")
        assert ac.forcing(np.array([[0.0, 0.0]]))[0] == 0.0

    def test_forcing_frozen_value(self):
        # frozen from symbolic evaluation: f(1/4, 1/4) = -3/8 - pi^2/100
        ac = make_problem("allen_cahn")
        got = ac.forcing(np.array([[0.25, 0.25]]))[0]
        assert got == pytest.approx(-0.375 - np.pi ** 2 / 100, abs=1e-14)

    def test_zero_network_on_continuity(self, rng):
        cont = make_problem("continuity")
        net = init_network([3, 8, 1], seed=0)
        for w in net.weights:
            w[:] = 0.0
        pts = interior_sample(cont, rng, 50)
        assert np.max(np.abs(pde_residual(cont, net, pts))) == 0.0

    def test_boundary_targets_exact_zeros(self, rng):
        ac = make_problem("allen_cahn")
        edge = np.stack([np.full(50, -1.0), rng.uniform(-1, 1, 50)], axis=1)
        assert np.all(ac.boundary_values(edge) == 0.0)


class TestKovasznay:
    def test_vorticity_of_analytic_solution(self, rng):
        kov = make_problem("kovasznay")
        pts = interior_sample(kov, rng, 200)
        assert vorticity_error(kov.analytic_field(), kov, pts) <= 1e-16

    def test_zero_network_vorticity_equals_field_norm(self, rng):
        kov = make_problem("kovasznay")
        net = init_network([2, 5, 3], seed=0)
        for w in net.weights:
            w[:] = 0.0
        pts = interior_sample(kov, rng, 300)
        expect = float(np.mean(kov.vorticity(pts) ** 2))
        assert vorticity_error(net, kov, pts) == pytest.approx(expect, rel=1e-12)

    def test_single_point_on_axis(self):
        kov = make_problem("kovasznay")
        net = init_network([2, 5, 3], seed=1)
        pt = np.array([[0.3, 0.0]])  # sin(0) = 0 so closed-form vorticity = 0
        from derivlearn.fields import evaluate_field
        outs = evaluate_field(net, pt, order=1)
        curl = outs.jacobian[0, 1, 0] - outs.jacobian[0, 0, 1]
        assert vorticity_error(net, kov, pt) == pytest.approx(curl ** 2,
                                                              rel=1e-12)

    def test_wrong_arity_rejected(self, rng):
        kov = make_problem("kovasznay")
        net = init_network([2, 5, 1], seed=0)
        with pytest.raises(ShapeError):
            vorticity_error(net, kov, rng.uniform(0, 1, (5, 2)))


class TestPendulum:
    def test_rhs_equilibrium(self):
        assert np.array_equal(pendulum_rhs([0.0, 0.0]), [0.0, 0.0])

    def test_rhs_quarter_turn_no_damping(self):
        out = pendulum_rhs([np.pi / 2, 0.0], params=(9.81, 0.0))
        assert out[1] == pytest.approx(-9.81, abs=1e-14)

    def test_rhs_hand_evaluated(self):
        out = pendulum_rhs([0.3, 1.2], params=(9.81, 0.3))
        assert out[0] == 1.2
        assert out[1] == pytest.approx(-9.81 * np.sin(0.3) - 0.3 * 1.2,
                                       abs=1e-14)

    def test_energy_dissipates_under_damping(self, rng):
        # dE/dt = -(b/m) w^2 <= 0 along the dynamics
        pend = make_problem("pendulum")
        states = rng.uniform([-2, -3], [2, 3], (100, 2))
        du = pend.rhs(states)
        u, w = states[:, 0], states[:, 1]
        de = w * du[:, 1] + pend.g_over_l * np.sin(u) * du[:, 0]
        assert np.all(de <= 1e-12)
        assert np.allclose(de, -pend.b_over_m * w ** 2, atol=1e-12)

    def test_g_residual_zero_for_ic_independent_network(self, rng):
        pend = make_problem("pendulum")
        net = init_network([3, 10, 1], seed=0)
        net.weights[0][:, 1:] = 0.0  # inputs (u0, v0) are ignored
        pts = rng.uniform([0, -1, -1], [5, 1, 1], (30, 3))
        assert np.max(np.abs(pendulum_g_residual(pend, net, pts))) <= 1e-14

    def test_g_residual_zero_network(self, rng):
        pend = make_problem("pendulum")
        net = init_network([3, 10, 1], seed=0)
        for w in net.weights:
            w[:] = 0.0
        pts = rng.uniform([0, -1, -1], [5, 1, 1], (10, 3))
        assert np.max(np.abs(pendulum_g_residual(pend, net, pts))) == 0.0

    def test_g_residual_small_for_exact_flow_map(self):
        # oracle: integrate the flow and its variational equations with RK4
        # on a time grid; the residual of the true flow map is dominated by
        # the grid difference quotient, so it shrinks at second order
        from derivlearn.datagen import PendulumFlowField
        pend = make_problem("pendulum")
        pts = np.array([[0.9, 0.4, -0.6], [2.1, -0.8, 1.0], [1.4, 0.2, 0.3]])
        errs = {}
        for dt, tol in [(0.02, 6e-3), (0.005, 4e-4)]:
            stub = PendulumFlowField(pend, dt=dt, t_final=3.0)
            res = pendulum_g_residual(pend, stub, pts)
            errs[dt] = np.max(np.abs(res))
            assert errs[dt] <= tol
        assert errs[0.02] / errs[0.005] >= 10.0


class TestRegistryAndErrors:
    def test_alias_lookup(self):
        assert make_problem("AllenCahn").spec.name == "allen_cahn"
        assert make_problem("KdV").spec.name == "kdv"

    def test_unknown_problem(self):
        from derivlearn.errors import ConfigurationError
        with pytest.raises(ConfigurationError):
            make_problem("heat")

    def test_solver_backed_has_no_analytic(self):
        with pytest.raises(CapabilityError):
            make_problem("continuity").analytic_solution(np.zeros((1, 3)))

    def test_continuity_ic_nearly_zero_at_boundary(self):
        cont = make_problem("continuity")
        edge = np.stack([np.zeros(50), np.full(50, 1.5),
                         np.linspace(-1.5, 1.5, 50)], axis=1)
        assert np.max(cont.initial_values(edge)) <= 1e-4
