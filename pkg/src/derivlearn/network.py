"""Feed-forward tanh networks: construction, evaluation, serialization.

Weights are kept as plain float64 numpy arrays so that evaluation and
derivative propagation stay bit-reproducible across runs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError

_ACTIVATIONS = ("tanh",)


@dataclass
class Network:
    """Multi-layer perceptron with tanh hidden layers and a linear output.

    Attributes
    ----------
    layer_dims : list[int]
        Sizes ``[d, h1, ..., m]``: input dim, hidden widths, output dim.
    weights : list[np.ndarray]
        One ``(n_out, n_in)`` matrix per layer.
    biases : list[np.ndarray]
        One ``(n_out,)`` vector per layer.
    activation : str
        Hidden-layer activation; only ``"tanh"`` is supported (it is
        smooth enough for third-order input derivatives).
    """

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        validate_architecture(self.layer_dims, self.activation)
        if len(self.weights) != self.n_layers or len(self.biases) != self.n_layers:
            raise ShapeError(
                f"expected {self.n_layers} weight/bias pairs, got "
                f"{len(self.weights)}/{len(self.biases)}"
            )
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_dims[k + 1], self.layer_dims[k])
            if w.shape != want:
                raise ShapeError(f"layer {k}: weight shape {w.shape} != {want}")
            if b.shape != (want[0],):
                raise ShapeError(f"layer {k}: bias shape {b.shape} != {(want[0],)}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Network":
        return Network(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )

    def params_vector(self) -> np.ndarray:
        """Flatten all weights and biases, layer by layer (W then b)."""
        chunks = []
        for w, b in zip(self.weights, self.biases):
            chunks.append(w.ravel())
            chunks.append(b)
        return np.concatenate(chunks)

    def with_params(self, vector: np.ndarray) -> "Network":
        """Return a new network with parameters taken from a flat vector."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.n_params,):
            raise ShapeError(f"parameter vector has shape {vector.shape}, "
                             f"expected ({self.n_params},)")
        weights, biases, k = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vector[k:k + w.size].reshape(w.shape).copy())
            k += w.size
            biases.append(vector[k:k + b.size].copy())
            k += b.size
        return Network(list(self.layer_dims), weights, biases, self.activation)

    def param_hash(self) -> str:
        """SHA-256 of the architecture plus raw parameter bytes."""
        h = hashlib.sha256()
        h.update(json.dumps(self.layer_dims).encode())
        h.update(self.activation.encode())
        for w, b in zip(self.weights, self.biases):
            h.update(np.ascontiguousarray(w).tobytes())
            h.update(np.ascontiguousarray(b).tobytes())
        return h.hexdigest()

    def to_json(self) -> str:
        """Serialize to JSON; floats round-trip bit-exactly via repr."""
        payload = {
            "format": "derivlearn-network",
            "version": 1,
            "layer_dims": list(self.layer_dims),
            "activation": self.activation,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        return json.dumps(payload)

    @staticmethod
    def from_json(text: str) -> "Network":
        payload = json.loads(text)
        if payload.get("format") != "derivlearn-network":
            raise ConfigurationError("not a serialized network")
        return Network(
            [int(v) for v in payload["layer_dims"]],
            [np.asarray(w, dtype=np.float64) for w in payload["weights"]],
            [np.asarray(b, dtype=np.float64) for b in payload["biases"]],
            payload["activation"],
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @staticmethod
    def load(path) -> "Network":
        with open(path) as fh:
            return Network.from_json(fh.read())


def validate_architecture(layer_dims, activation="tanh") -> None:
    if not isinstance(layer_dims, (list, tuple)) or len(layer_dims) < 2:
        raise ConfigurationError("layer_dims needs at least input and output sizes")
    for d in layer_dims:
        if not isinstance(d, (int, np.integer)) or d < 1:
            raise ConfigurationError(f"layer sizes must be positive integers, got {d}")
    if activation not in _ACTIVATIONS:
        raise ConfigurationError(f"unsupported activation {activation!r}")


def init_network(layer_dims, seed: int) -> Network:
    """Glorot-uniform weights in ``±sqrt(6/(fan_in+fan_out))``, zero biases.

    Deterministic for a given seed: two calls with equal arguments return
    bitwise-identical networks.
    """
    validate_architecture(layer_dims)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Network(list(layer_dims), weights, biases)


def forward(net: Network, x) -> np.ndarray:
    """Evaluate the network at one point or a batch of points.

    A 1-D input of length ``d`` returns a 1-D output of length ``m``;
    an ``(N, d)`` batch returns ``(N, m)``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    z = x[None, :] if single else x
    if z.ndim != 2 or z.shape[1] != net.input_dim:
        raise ShapeError(f"input shape {x.shape} incompatible with input dim "
                         f"{net.input_dim}")
    last = net.n_layers - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = z @ w.T + b
        if k != last:
            z = np.tanh(z)
    return z[0] if single else z
