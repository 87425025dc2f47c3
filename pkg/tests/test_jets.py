"""Forward-mode jet propagation checked against finite differences and
analytic tanh derivative identities."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from derivlearn.errors import AxisError, CapabilityError, NumericalError
from derivlearn.jets import (flatten_grads, input_derivatives, loss_gradient,
                             mixed_third, propagate)
from derivlearn.network import Network, init_network, forward


def central_jacobian(net, pts, h=1e-5):
    d = net.input_dim
    out = np.zeros((pts.shape[0], net.output_dim, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        out[:, :, i] = (forward(net, pts + e) - forward(net, pts - e)) / (2 * h)
    return out


def central_hessian(net, pts, h=1e-4):
    d = net.input_dim
    out = np.zeros((pts.shape[0], net.output_dim, d, d))
    for i in range(d):
        for j in range(d):
            ei, ej = np.zeros(d), np.zeros(d)
            ei[i], ej[j] = h, h
            out[:, :, i, j] = (
                forward(net, pts + ei + ej) - forward(net, pts + ei - ej)
                - forward(net, pts - ei + ej) + forward(net, pts - ei - ej)
            ) / (4 * h * h)
    return out


class TestInputDerivatives:
    def test_linear_network_jacobian_is_weight_matrix(self):
        w = np.array([[1.5, -2.0, 0.25], [0.0, 3.0, 1.0]])
        net = Network([3, 2], [w], [np.array([0.1, -0.3])])
        d = input_derivatives(net, np.array([0.2, -0.7, 1.1]), order=2)
        assert np.array_equal(d.jacobian, w)
        assert np.array_equal(d.hessian, np.zeros((2, 3, 3)))

    def test_jacobian_matches_finite_differences(self, rng):
        net = init_network([3, 30, 30, 2], seed=5)
        pts = rng.uniform(-1, 1, (8, 3))
        outs = propagate(net, pts, order=1)
        fd = central_jacobian(net, pts)
        assert np.max(np.abs(outs.jacobian - fd)) <= 1e-5 * max(
            1.0, np.max(np.abs(fd)))

    def test_hessian_matches_finite_differences(self, rng):
        net = init_network([3, 25, 25, 1], seed=6)
        pts = rng.uniform(-1, 1, (6, 3))
        outs = propagate(net, pts, order=2)
        fd = central_hessian(net, pts)
        rel = np.max(np.abs(outs.hessian - fd)) / max(1.0, np.max(np.abs(fd)))
        assert rel <= 1e-5

    def test_hessian_symmetric(self, rng):
        net = init_network([4, 20, 20, 3], seed=8)
        pts = rng.uniform(-2, 2, (10, 4))
        h = propagate(net, pts, order=2).hessian
        assert np.max(np.abs(h - h.transpose(0, 1, 3, 2))) <= 1e-10

    def test_third_axis_matches_fd_of_hessian(self, rng):
        net = init_network([2, 15, 15, 1], seed=2)
        pts = rng.uniform(-1, 1, (5, 2))
        d = [input_derivatives(net, p, order=2, third_axis=1) for p in pts]
        h = 1e-4
        e = np.array([0.0, h])
        hp = propagate(net, pts + e, order=2).hessian[:, :, 1, 1]
        hm = propagate(net, pts - e, order=2).hessian[:, :, 1, 1]
        fd = (hp - hm) / (2 * h)
        got = np.array([x.third_axis for x in d])
        assert np.max(np.abs(got - fd)) <= 1e-6 * max(1.0, np.max(np.abs(fd)))

    def test_mixed_third_by_polarization(self, rng):
        net = init_network([3, 12, 12, 2], seed=13)
        pts = rng.uniform(-1, 1, (6, 3))
        got = mixed_third(net, pts, axis_twice=0, axis_once=2)
        h = 1e-4
        e = np.zeros(3)
        e[2] = h
        hp = propagate(net, pts + e, order=2).hessian[:, :, 0, 0]
        hm = propagate(net, pts - e, order=2).hessian[:, :, 0, 0]
        fd = (hp - hm) / (2 * h)
        assert np.max(np.abs(got - fd)) <= 1e-6 * max(1.0, np.max(np.abs(fd)))

    def test_bad_axis_raises(self):
        net = init_network([2, 4, 1], seed=0)
        with pytest.raises(AxisError):
            input_derivatives(net, np.zeros(2), third_axis=2)

    def test_order_cap(self):
        net = init_network([2, 4, 1], seed=0)
        with pytest.raises(CapabilityError):
            propagate(net, np.zeros((1, 2)), order=3)

    def test_pure_function_bitwise(self, rng):
        net = init_network([3, 10, 10, 1], seed=1)
        pts = rng.uniform(-1, 1, (4, 3))
        a = propagate(net, pts, order=2, directions=np.eye(3)[[0]])
        b = propagate(net, pts, order=2, directions=np.eye(3)[[0]])
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.jacobian, b.jacobian)
        assert np.array_equal(a.hessian, b.hessian)
        assert np.array_equal(a.directional[0][2], b.directional[0][2])


class TestReverseMode:
    def test_forward_jacobian_equals_reverse_input_gradient(self, rng):
        net = init_network([4, 18, 18, 1], seed=3)
        pts = rng.uniform(-1, 1, (7, 4))
        outs, tape = propagate(net, pts, order=1, with_tape=True)
        _, xgrad = tape.backward(cot_values=np.ones((7, 1)))
        assert np.max(np.abs(xgrad - outs.jacobian[:, 0, :])) <= 1e-10

    def test_zero_loss_gives_zero_gradient(self, rng):
        net = init_network([2, 8, 1], seed=0)
        pts = rng.uniform(-1, 1, (5, 2))

        def loss(outs):
            return 0.0, {"values": np.zeros_like(outs.values)}

        val, g = loss_gradient(net, loss, pts, order=0)
        assert val == 0.0
        assert np.array_equal(g, np.zeros(net.n_params))

    @pytest.mark.parametrize("with_jac", [False, True])
    def test_mse_gradient_matches_finite_differences(self, rng, with_jac):
        net = init_network([3, 12, 12, 2], seed=21)
        pts = rng.uniform(-1, 1, (8, 3))
        targ_v = rng.normal(size=(8, 2))
        targ_j = rng.normal(size=(8, 2, 3))

        def loss(outs):
            n = outs.values.shape[0]
            val = float(np.sum((outs.values - targ_v) ** 2) / n)
            cots = {"values": 2 * (outs.values - targ_v) / n}
            if with_jac:
                val += float(np.sum((outs.jacobian - targ_j) ** 2) / n)
                cots["jacobian"] = 2 * (outs.jacobian - targ_j) / n
            return val, cots

        order = 1 if with_jac else 0
        _, g = loss_gradient(net, loss, pts, order=order)
        p0 = net.params_vector()
        idx = rng.choice(p0.size, size=20, replace=False)
        h = 1e-6
        for i in idx:
            vals = []
            for sgn in (1, -1):
                p = p0.copy()
                p[i] += sgn * h
                outs = propagate(net.with_params(p), pts, order=order)
                vals.append(loss(outs)[0])
            fd = (vals[0] - vals[1]) / (2 * h)
            assert abs(g[i] - fd) <= 1e-4 * max(1e-8, abs(fd))

    def test_nonfinite_loss_reports_batch_index(self, rng):
        net = init_network([2, 6, 1], seed=0)
        pts = rng.uniform(-1, 1, (4, 2))

        def loss(outs):
            return float("nan"), {"values": np.zeros_like(outs.values)}

        with pytest.raises(NumericalError):
            loss_gradient(net, loss, pts, order=0)


class TestTanhJetIdentities:
    @settings(max_examples=200, deadline=None)
    @given(st.floats(-3.0, 3.0, allow_nan=False))
    def test_first_and_second_derivative_identities(self, a):
        # jet through a single tanh neuron must reproduce
        # tanh' = 1 - tanh^2 and tanh'' = -2 tanh tanh'
        net = Network([1, 1, 1], [np.array([[1.0]]), np.array([[1.0]])],
                      [np.zeros(1), np.zeros(1)])
        outs = propagate(net, np.array([[a]]), order=2)
        t = np.tanh(a)
        d1 = 1.0 - t * t
        d2 = -2.0 * t * d1
        assert abs(outs.jacobian[0, 0, 0] - d1) <= 1e-12
        assert abs(outs.hessian[0, 0, 0, 0] - d2) <= 1e-12

    def test_identities_on_many_random_scalars(self, rng):
        xs = rng.uniform(-4, 4, 1000)
        net = Network([1, 1, 1], [np.array([[1.0]]), np.array([[1.0]])],
                      [np.zeros(1), np.zeros(1)])
        outs = propagate(net, xs[:, None], order=2,
                         directions=np.array([[1.0]]))
        t = np.tanh(xs)
        d1 = 1.0 - t * t
        d2 = -2.0 * t * d1
        d3 = -2.0 * (d1 * d1 + t * d2)
        assert np.max(np.abs(outs.jacobian[:, 0, 0] - d1)) <= 1e-12
        assert np.max(np.abs(outs.hessian[:, 0, 0, 0] - d2)) <= 1e-12
        assert np.max(np.abs(outs.directional[0][2][:, 0] - d3)) <= 1e-12


def test_flatten_grads_matches_param_layout():
    net = init_network([2, 3, 1], seed=0)
    grads = [(np.ones_like(w), np.ones_like(b))
             for w, b in zip(net.weights, net.biases)]
    assert flatten_grads(grads).shape == (net.n_params,)
