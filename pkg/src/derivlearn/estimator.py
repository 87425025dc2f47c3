"""Scikit-learn style estimator over the derivative-supervision trainers.

``DerivativeRegressor`` fits a tanh network to collocation data with any
of the supervision methods (plain values, derivatives, Sobolev blocks,
PDE residual) and predicts field values at new points, so it composes
with pipelines, grid search, and the usual ``get_params`` machinery.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .collocation import CollocationSet
from .errors import ShapeError, SpecificationError
from .fields import evaluate_field
from .losses import LossSpec, Method, REQUIRED_TARGETS
from .network import init_network
from .problems import Problem, make_problem
from .train import TrainConfig, train


def _as_set(data, region, m_hint=None):
    """Coerce (X, y[, jacobians]) tuples or CollocationSets."""
    if data is None:
        return None
    if isinstance(data, CollocationSet):
        return data
    if isinstance(data, (tuple, list)) and len(data) in (1, 2, 3):
        pts = check_array(data[0])
        values = None
        if len(data) >= 2 and data[1] is not None:
            values = np.asarray(data[1], dtype=np.float64)
            if values.ndim == 1:
                values = values[:, None]
        jac = np.asarray(data[2], dtype=np.float64) if len(data) == 3 else None
        return CollocationSet(pts, region, values, jac)
    raise ShapeError(f"{region} data must be a CollocationSet or an "
                     f"(X, y) tuple")


class DerivativeRegressor(BaseEstimator, RegressorMixin):
    """Fit a feed-forward tanh network to collocation targets.

    Parameters
    ----------
    method : str
        One of DERL, OUTL, OUTL_PINN, SOB, HESL, DER_HESL, SOB_HES, PINN.
        Methods that touch the PDE residual need ``problem``.
    hidden_layers : tuple of int
        Widths of the hidden layers.
    problem : str or Problem, optional
        Benchmark system providing the residual operator and the
        time-dependence flag (the initial-condition block is dropped for
        time-independent problems).
    optimizer : str
        "lbfgs", "adam" or "adam+lbfgs".
    max_iter : int
        L-BFGS iterations (when the optimizer includes an L-BFGS phase).
    epochs, batch_size, learning_rate, lr_decay
        Adam-phase schedule.
    noise_sigma : float
        Gaussian noise added to value/jacobian targets before fitting.
    random_state : int
        Seed for the weight init, batching, and noise.

    Attributes
    ----------
    network_ : Network
        The trained network.
    history_ : list of dict
        Per-epoch loss component rows.
    """

    def __init__(self, method="DERL", hidden_layers=(50, 50, 50, 50),
                 problem=None, lambda_domain=1.0, lambda_pde=1.0,
                 lambda_boundary=1.0, lambda_initial=1.0, optimizer="lbfgs",
                 max_iter=100, epochs=0, batch_size=None, learning_rate=1e-3,
                 lr_decay=None, noise_sigma=0.0, random_state=0):
        self.method = method
        self.hidden_layers = hidden_layers
        self.problem = problem
        self.lambda_domain = lambda_domain
        self.lambda_pde = lambda_pde
        self.lambda_boundary = lambda_boundary
        self.lambda_initial = lambda_initial
        self.optimizer = optimizer
        self.max_iter = max_iter
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.noise_sigma = noise_sigma
        self.random_state = random_state

    def _resolve_problem(self) -> Problem:
        if isinstance(self.problem, Problem):
            return self.problem
        if isinstance(self.problem, str):
            return make_problem(self.problem)
        if self.problem is None:
            method = Method.parse(self.method)
            if method in (Method.PINN, Method.OUTL_PINN):
                raise SpecificationError(
                    f"method {method.value} evaluates the PDE residual and "
                    f"needs a problem")
            return None
        raise SpecificationError(f"cannot interpret problem "
                                 f"{self.problem!r}")

    def fit(self, X, y=None, *, jacobians=None, hessians=None, boundary=None,
            initial=None):
        """Fit on interior points X with the targets the method needs.

        ``y`` holds value targets (``(n, m)`` or ``(n,)``); derivative
        targets ride along as keyword arrays.  ``boundary`` and
        ``initial`` are ``(X, y)`` tuples or CollocationSets.
        """
        X = check_array(X, dtype=np.float64)
        method = Method.parse(self.method)
        values = None
        if y is not None:
            values = np.asarray(y, dtype=np.float64)
            if values.ndim == 1:
                values = values[:, None]
        jac = None if jacobians is None else np.asarray(jacobians,
                                                        dtype=np.float64)
        hess = None if hessians is None else np.asarray(hessians,
                                                        dtype=np.float64)
        interior = CollocationSet(X, "interior", values, jac, hess)
        for name in REQUIRED_TARGETS[method]:
            if getattr(interior, name) is None:
                raise SpecificationError(
                    f"method {method.value} requires the {name!r} fit "
                    f"argument")

        problem = self._resolve_problem()
        m = values.shape[1] if values is not None else (
            problem.spec.output_dim if problem is not None else 1)
        if problem is None:
            problem = _FreeProblem(X.shape[1], m)
        if X.shape[1] != problem.spec.input_dim:
            raise ShapeError(f"X has {X.shape[1]} columns but "
                             f"{problem.spec.name} expects "
                             f"{problem.spec.input_dim}")

        spec = LossSpec(method=method, lambda_domain=self.lambda_domain,
                        lambda_pde=self.lambda_pde,
                        lambda_boundary=self.lambda_boundary,
                        lambda_initial=self.lambda_initial)
        cfg = TrainConfig(optimizer=self.optimizer,
                          learning_rate=self.learning_rate,
                          lr_decay=self.lr_decay, epochs=self.epochs,
                          lbfgs_iters=self.max_iter,
                          batch_size=self.batch_size,
                          seed=self.random_state,
                          noise_sigma=self.noise_sigma)
        layer_dims = [X.shape[1], *map(int, self.hidden_layers), m]
        net = init_network(layer_dims, seed=self.random_state)
        data = {"interior": interior,
                "boundary": _as_set(boundary, "boundary"),
                "initial": _as_set(initial, "initial")}
        self.network_, self.history_ = train(net, spec, data, cfg, problem)
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = m
        return self

    def predict(self, X):
        """Field values at new points; 1-D for single-output problems."""
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        values = evaluate_field(self.network_, X).values
        return values[:, 0] if self.n_outputs_ == 1 else values

    def predict_jacobian(self, X):
        """Exact input derivatives d(output)/d(input), shape (n, m, d)."""
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        return evaluate_field(self.network_, X, order=1).jacobian


class _FreeProblem(Problem):
    """Placeholder for purely data-driven fits with no attached PDE."""

    def __init__(self, input_dim, output_dim):
        from .problems import ProblemSpec
        self.spec = ProblemSpec(
            name="free", coords=tuple(f"x{i}" for i in range(input_dim)),
            output_dim=output_dim,
            domain=tuple((-np.inf, np.inf) for _ in range(input_dim)),
            params={}, residual_order=0, reference="analytic",
            boundary_kind="dirichlet")

    def residual(self, outs):
        raise SpecificationError("no PDE residual without a problem")

    def residual_vjp(self, outs, g):
        raise SpecificationError("no PDE residual without a problem")
