import json

import numpy as np
import pytest

from derivlearn.errors import ConfigurationError, ShapeError
from derivlearn.network import Network, forward, init_network


class TestInit:
    def test_deterministic_given_seed(self):
        a = init_network([3, 50, 50, 50, 50, 1], seed=0)
        b = init_network([3, 50, 50, 50, 50, 1], seed=0)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)
        for ba, bb in zip(a.biases, b.biases):
            assert np.array_equal(ba, bb)

    def test_output_bias_zero(self):
        net = init_network([2, 1], seed=123)
        assert net.biases[-1][0] == 0.0

    def test_glorot_bounds_per_layer(self):
        # oracle: recompute the bound for each layer from its fan-in/out
        net = init_network([3, 50, 1], seed=1)
        for w, (fi, fo) in zip(net.weights, [(3, 50), (50, 1)]):
            bound = np.sqrt(6.0 / (fi + fo))
            assert np.all(np.abs(w) <= bound)
            # and the draws actually use the range, not a smaller one
            assert np.abs(w).max() > 0.5 * bound

    def test_invalid_dims_rejected(self):
        with pytest.raises(ConfigurationError):
            init_network([3], seed=0)
        with pytest.raises(ConfigurationError):
            init_network([3, 0, 1], seed=0)
        with pytest.raises(ConfigurationError):
            init_network([], seed=0)


class TestForward:
    def test_zero_weights_give_output_bias(self, rng):
        net = init_network([4, 10, 2], seed=0)
        for w in net.weights:
            w[:] = 0.0
        net.biases[-1][:] = [0.5, -2.0]
        out = forward(net, rng.uniform(-1, 1, 4))
        assert np.allclose(out, [0.5, -2.0])

    def test_single_linear_layer_is_identity(self):
        net = Network([1, 1], [np.array([[1.0]])], [np.array([0.0])])
        assert forward(net, np.array([0.3]))[0] == pytest.approx(0.3, abs=0)

    def test_matches_independent_evaluation(self, rng):
        # oracle: hand-rolled loop over layers, scalar arithmetic
        net = init_network([3, 7, 5, 2], seed=9)
        x = rng.uniform(-1, 1, 3)
        z = x.copy()
        for k, (w, b) in enumerate(zip(net.weights, net.biases)):
            z = np.array([float(np.dot(row, z)) + bk for row, bk in zip(w, b)])
            if k < net.n_layers - 1:
                z = np.tanh(z)
        assert np.allclose(forward(net, x), z, atol=1e-14)

    def test_dimension_mismatch(self):
        net = init_network([3, 4, 1], seed=0)
        with pytest.raises(ShapeError):
            forward(net, np.zeros(2))

    def test_batched_matches_single(self, rng):
        # BLAS may block the batched matmul differently, so compare to
        # last-bit tolerance rather than bitwise.
        net = init_network([2, 9, 3], seed=4)
        pts = rng.uniform(-1, 1, (11, 2))
        batch = forward(net, pts)
        for i in range(11):
            assert np.allclose(batch[i], forward(net, pts[i]),
                               rtol=1e-14, atol=1e-14)


class TestSerialization:
    def test_json_round_trip_bit_exact(self):
        net = init_network([3, 20, 20, 2], seed=7)
        restored = Network.from_json(net.to_json())
        assert restored.layer_dims == net.layer_dims
        for wa, wb in zip(net.weights, restored.weights):
            assert np.array_equal(wa, wb)
        for ba, bb in zip(net.biases, restored.biases):
            assert np.array_equal(ba, bb)

    def test_file_round_trip(self, tmp_path):
        net = init_network([2, 5, 1], seed=3)
        path = tmp_path / "net.json"
        net.save(path)
        restored = Network.load(path)
        assert np.array_equal(net.params_vector(), restored.params_vector())

    def test_rejects_foreign_payload(self):
        with pytest.raises(ConfigurationError):
            Network.from_json(json.dumps({"format": "something-else"}))


class TestParamsVector:
    def test_round_trip(self):
        net = init_network([2, 6, 3], seed=11)
        vec = net.params_vector()
        clone = net.with_params(vec)
        for wa, wb in zip(net.weights, clone.weights):
            assert np.array_equal(wa, wb)

    def test_wrong_length_rejected(self):
        net = init_network([2, 6, 3], seed=11)
        with pytest.raises(ShapeError):
            net.with_params(np.zeros(net.n_params + 1))

    def test_param_hash_changes_with_params(self):
        net = init_network([2, 6, 3], seed=11)
        vec = net.params_vector()
        vec[0] += 1e-9
        assert net.param_hash() != net.with_params(vec).param_hash()
