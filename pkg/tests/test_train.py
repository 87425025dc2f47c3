import numpy as np
import pytest

from derivlearn.collocation import CollocationSet
from derivlearn.errors import ConfigurationError, NumericalError
from derivlearn.losses import LossSpec
from derivlearn.network import init_network
from derivlearn.problems import make_problem
from derivlearn.train import (AdamState, TrainConfig, add_noise, adam_step,
                              lbfgs_minimize, train, write_history_csv)


class _VectorShell:
    """Minimal parameter container for optimizing plain functions."""

    def __init__(self, x):
        self._x = np.asarray(x, dtype=np.float64)

    def params_vector(self):
        return self._x.copy()

    def with_params(self, p):
        return _VectorShell(p)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        st = AdamState(np.array([1.0, -2.0]))
        st2 = adam_step(st, np.zeros(2), 0.1)
        assert np.array_equal(st2.params, st.params)
        assert st2.t == 1

    def test_constant_gradient_reaches_lr_magnitude(self):
        # with a constant gradient the bias-corrected update tends to
        # lr * sign(g); check |delta| is within 1% of lr
        st = AdamState(np.array([0.0]))
        lr = 0.01
        for _ in range(2000):
            prev = st.params[0]
            st = adam_step(st, np.array([3.7]), lr)
        assert abs(abs(st.params[0] - prev) - lr) <= 0.01 * lr

    def test_deterministic_stream(self):
        g = np.array([0.3, -0.7, 1.1])
        s1 = AdamState(np.zeros(3))
        s2 = AdamState(np.zeros(3))
        for _ in range(50):
            s1 = adam_step(s1, g, 1e-3)
            s2 = adam_step(s2, g, 1e-3)
        assert np.array_equal(s1.params, s2.params)

    def test_nonfinite_gradient_rejected(self):
        with pytest.raises(NumericalError):
            adam_step(AdamState(np.zeros(2)), np.array([1.0, np.nan]), 1e-3)


class TestLBFGS:
    def test_quadratic_converges(self, rng):
        a = rng.normal(size=(10, 10))
        a = a @ a.T + np.eye(10)
        x_star = rng.normal(size=10)

        def quad(x):
            d = x - x_star
            return 0.5 * d @ a @ d, a @ d

        res, recs = lbfgs_minimize(quad, _VectorShell(np.zeros(10)), 50)
        assert recs[-1].grad_norm <= 1e-8
        assert len(recs) <= 51
        assert np.max(np.abs(res.params_vector() - x_star)) <= 1e-7

    def test_rosenbrock_from_standard_start(self):
        def rosen(x):
            f = (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
            g = np.array([-2 * (1 - x[0])
                          - 400 * x[0] * (x[1] - x[0] ** 2),
                          200 * (x[1] - x[0] ** 2)])
            return f, g

        res, recs = lbfgs_minimize(rosen, _VectorShell([-1.2, 1.0]), 200)
        f, _ = rosen(res.params_vector())
        assert f <= 1e-10

    def test_accepted_losses_monotone(self, rng):
        a = rng.normal(size=(6, 6))
        a = a @ a.T + 0.1 * np.eye(6)

        def quad(x):
            return 0.5 * x @ a @ x, a @ x

        _, recs = lbfgs_minimize(quad, _VectorShell(rng.normal(size=6)), 40)
        losses = [r.loss for r in recs if r.flag in ("", "start")]
        assert all(l2 <= l1 for l1, l2 in zip(losses, losses[1:]))

    def test_optimal_start_returns_immediately(self, rng):
        a = np.eye(4)

        def quad(x):
            return 0.5 * x @ a @ x, a @ x

        res, recs = lbfgs_minimize(quad, _VectorShell(np.zeros(4)), 50)
        accepted = [r for r in recs if r.flag == ""]
        assert not accepted
        assert recs[-1].flag == "converged"
        assert np.array_equal(res.params_vector(), np.zeros(4))


@pytest.fixture
def ac_setup(rng):
    ac = make_problem("allen_cahn")
    pts = rng.uniform(-1, 1, (150, 2))
    outs = ac.analytic_field().evaluate(pts, order=1)
    interior = CollocationSet(pts, "interior", outs.values, outs.jacobian)
    t = np.linspace(-1, 1, 20)
    edge = np.concatenate([
        np.stack([np.full(20, -1.0), t], 1),
        np.stack([np.full(20, 1.0), t], 1),
        np.stack([t, np.full(20, -1.0)], 1),
        np.stack([t, np.full(20, 1.0)], 1)])
    boundary = CollocationSet(edge, "boundary", ac.boundary_values(edge))
    return ac, {"interior": interior, "boundary": boundary}


class TestTrain:
    def test_zero_epochs_returns_input_unchanged(self, ac_setup):
        ac, data = ac_setup
        net = init_network([2, 10, 1], seed=0)
        cfg = TrainConfig(optimizer="adam", epochs=0)
        out, hist = train(net, LossSpec(method="DERL"), data, cfg, ac)
        assert np.array_equal(out.params_vector(), net.params_vector())
        assert hist == []

    def test_lbfgs_descends(self, ac_setup):
        ac, data = ac_setup
        net = init_network([2, 20, 20, 1], seed=0)
        cfg = TrainConfig(optimizer="lbfgs", lbfgs_iters=30)
        out, hist = train(net, LossSpec(method="DERL"), data, cfg, ac)
        assert hist[-1]["total_loss"] < hist[0]["total_loss"]

    def test_full_determinism(self, ac_setup):
        ac, data = ac_setup
        net = init_network([2, 12, 1], seed=0)
        cfg = TrainConfig(optimizer="adam+lbfgs", epochs=3, lbfgs_iters=5,
                          batch_size=32, seed=11)
        a, _ = train(net, LossSpec(method="SOB"), data, cfg, ac)
        b, _ = train(net, LossSpec(method="SOB"), data, cfg, ac)
        assert np.array_equal(a.params_vector(), b.params_vector())

    def test_self_targets_never_increase_loss(self, ac_setup, rng):
        # targets generated from the network's own initialization give a
        # zero-loss interior, so training cannot end above the start
        ac, data = ac_setup
        net = init_network([2, 10, 1], seed=4)
        outs = ac.residual_outputs(net, data["interior"].points)
        from derivlearn.fields import evaluate_field
        interior = CollocationSet(data["interior"].points, "interior",
                                  outs.values, outs.jacobian)
        bvals = evaluate_field(net, data["boundary"].points).values
        data2 = {"interior": interior,
                 "boundary": CollocationSet(data["boundary"].points,
                                            "boundary", bvals)}
        cfg = TrainConfig(optimizer="lbfgs", lbfgs_iters=5)
        spec = LossSpec(method="SOB")
        from derivlearn.losses import composite_loss
        before = composite_loss(spec, ac, data2["interior"],
                                data2["boundary"], None, net)
        out, _ = train(net, spec, data2, cfg, ac)
        after = composite_loss(spec, ac, data2["interior"], data2["boundary"],
                               None, out)
        assert after <= before + 1e-15

    def test_linear_target_recovered(self):
        # least-squares oracle: a 1-layer net on y = 2x - 0.5 must recover
        # slope and intercept to high precision
        from derivlearn.network import Network
        xs = np.linspace(-1, 1, 40)[:, None]
        ys = 2.0 * xs - 0.5
        net = Network([1, 1], [np.array([[0.1]])], [np.array([0.0])])
        from derivlearn.losses import domain_loss

        def loss(p):
            sup, _, g = domain_loss(net.with_params(p), xs, value_target=ys,
                                    value_weight=1.0, with_grad=True)
            return sup, g

        fitted, _ = lbfgs_minimize(loss, net, 60)
        assert fitted.weights[0][0, 0] == pytest.approx(2.0, abs=1e-6)
        assert fitted.biases[0][0] == pytest.approx(-0.5, abs=1e-6)

    def test_batch_size_validated(self, ac_setup):
        ac, data = ac_setup
        net = init_network([2, 10, 1], seed=0)
        cfg = TrainConfig(optimizer="adam", epochs=1, batch_size=10 ** 6)
        with pytest.raises(ConfigurationError):
            train(net, LossSpec(method="DERL"), data, cfg, ac)

    def test_history_csv_columns(self, ac_setup, tmp_path):
        ac, data = ac_setup
        net = init_network([2, 10, 1], seed=0)
        cfg = TrainConfig(optimizer="lbfgs", lbfgs_iters=3)
        _, hist = train(net, LossSpec(method="DERL"), data, cfg, ac)
        path = tmp_path / "history.csv"
        write_history_csv(hist, path)
        header = path.read_text().splitlines()[0]
        assert header == ("epoch,total_loss,domain_term,pde_term,bc_term,"
                          "ic_term,grad_norm,wall_ms")


class TestAddNoise:
    def test_sigma_zero_bitwise_identical(self, ac_setup):
        _, data = ac_setup
        out = add_noise(data["interior"], 0.0, seed=5)
        assert np.array_equal(out.values, data["interior"].values)
        assert np.array_equal(out.jacobians, data["interior"].jacobians)

    def test_empirical_std_matches_sigma(self):
        big = CollocationSet(np.zeros((60000, 2)), "interior",
                             np.zeros((60000, 2)))
        out = add_noise(big, 0.01, seed=1)
        assert abs(np.std(out.values) - 0.01) / 0.01 <= 0.02

    def test_seeds_differ_points_untouched(self, ac_setup):
        _, data = ac_setup
        a = add_noise(data["interior"], 0.1, seed=1)
        b = add_noise(data["interior"], 0.1, seed=2)
        assert not np.array_equal(a.values, b.values)
        assert a.values.shape == b.values.shape
        assert np.array_equal(a.points, data["interior"].points)

    def test_deterministic_for_seed(self, ac_setup):
        _, data = ac_setup
        a = add_noise(data["interior"], 0.1, seed=9)
        b = add_noise(data["interior"], 0.1, seed=9)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.jacobians, b.jacobians)
