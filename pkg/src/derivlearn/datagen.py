"""Dataset generation: collocation sampling, target computation from
closed forms, reference solvers, or difference quotients, and evaluation
grids with reference values.
"""

from __future__ import annotations

import numpy as np

from .collocation import CollocationSet
from .errors import CapabilityError, ConfigurationError
from .problems import (AllenCahn1P, AllenCahn2P, Continuity, KdV, Kovasznay,
                       Pendulum, Problem)
from .solvers import (GridField, continuity_fv_solve, cubic_interpolate,
                      kdv_spectral_solve, rk4_trajectory)

DERIVATIVE_SOURCES = ("analytic", "empirical", "solver", "none")


# ---------------------------------------------------------------------------
# Point sampling
# ---------------------------------------------------------------------------

def sample_interior(problem: Problem, n: int, rng) -> np.ndarray:
    lo = np.array([b[0] for b in problem.spec.domain])
    hi = np.array([b[1] for b in problem.spec.domain])
    return rng.uniform(lo, hi, size=(n, len(lo)))


def grid_interior(problem: Problem, n_per_axis) -> np.ndarray:
    axes = [np.linspace(lo, hi, n) for (lo, hi), n in
            zip(problem.spec.domain, np.broadcast_to(n_per_axis,
                                                     (problem.spec.input_dim,)))]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def sample_boundary(problem: Problem, n: int, rng) -> np.ndarray:
    """Points on the spatial boundary; time and parameter coordinates are
    sampled uniformly over their ranges.  For periodic problems only the
    low edge is returned (pairing supplies the other side)."""
    spec = problem.spec
    if spec.boundary_kind is None:
        return np.zeros((0, spec.input_dim))
    spatial = [i for i in range(spec.input_dim)
               if i != spec.time_index and i not in spec.param_indices]
    pts = sample_interior(problem, n, rng)
    if spec.boundary_kind == "periodic":
        axis = spec.third_axis if spec.third_axis is not None else spatial[0]
        pts[:, axis] = spec.domain[axis][0]
        return pts
    # Dirichlet: pin one spatial coordinate per point to one of its faces
    which = rng.integers(0, len(spatial), size=n)
    side = rng.integers(0, 2, size=n)
    for i, (w, s) in enumerate(zip(which, side)):
        ax = spatial[w]
        pts[i, ax] = spec.domain[ax][s]
    return pts


def sample_initial(problem: Problem, n: int, rng) -> np.ndarray:
    spec = problem.spec
    if spec.time_index is None:
        return np.zeros((0, spec.input_dim))
    pts = sample_interior(problem, n, rng)
    pts[:, spec.time_index] = spec.domain[spec.time_index][0]
    return pts


def parameter_split(problem: Problem, counts: dict, seed: int) -> dict:
    """Draw parameter values and split them train/val/test, seed-fixed."""
    idx = problem.spec.param_indices
    if not idx:
        raise CapabilityError(f"{problem.spec.name} has no parameters to split")
    rng = np.random.default_rng([int(seed), 0x9A51])
    total = sum(counts.values())
    lo = np.array([problem.spec.domain[i][0] for i in idx])
    hi = np.array([problem.spec.domain[i][1] for i in idx])
    draws = rng.uniform(lo, hi, size=(total, len(idx)))
    out, k = {}, 0
    for name in ("train", "val", "test"):
        c = counts.get(name, 0)
        out[name] = draws[k:k + c]
        k += c
    return out


def attach_parameters(points: np.ndarray, problem: Problem,
                      param_values: np.ndarray) -> np.ndarray:
    """Tile spatial points across a list of parameter vectors."""
    idx = list(problem.spec.param_indices)
    reps = []
    for pv in np.atleast_2d(param_values):
        q = points.copy()
        q[:, idx] = pv
        reps.append(q)
    return np.concatenate(reps, axis=0)


# ---------------------------------------------------------------------------
# Empirical derivatives of a value function (Theorem-4 style quotients)
# ---------------------------------------------------------------------------

def empirical_jacobians(value_fn, points: np.ndarray, h: float,
                        scheme: str = "forward") -> np.ndarray:
    """Difference-quotient jacobian targets of a batched value function."""
    base = np.asarray(value_fn(points))
    n, d = points.shape
    out = np.empty((n, base.shape[1], d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        if scheme == "forward":
            out[:, :, i] = (np.asarray(value_fn(points + e)) - base) / h
        else:
            out[:, :, i] = (np.asarray(value_fn(points + e))
                            - np.asarray(value_fn(points - e))) / (2.0 * h)
    return out


# ---------------------------------------------------------------------------
# Pendulum flow-map stub (RK4 + variational sensitivities)
# ---------------------------------------------------------------------------

class PendulumFlowField:
    """The true pendulum flow map u(t; u0, v0) on an RK4 time grid.

    Integrates the pendulum together with its first-order variational
    equations, so first derivatives w.r.t. the initial state are exact up
    to integrator error.  Mixed third derivatives in (t, t, ic) come from
    a central difference of the sensitivity velocity on the grid, which
    is what makes the flow-map diagnostic an independent oracle.

    Second derivatives w.r.t. the initial coordinates are not tracked
    (the diagnostics this stub serves never read them) and are reported
    as zero.
    """

    input_dim = 3
    output_dim = 1

    def __init__(self, problem: Pendulum, dt: float = 0.01,
                 t_final: float = 10.0):
        self.problem = problem
        self.dt = dt
        self.t_final = t_final
        self._cache = {}

    def _aug_rhs(self, y, t):
        a, c = self.problem.g_over_l, self.problem.b_over_m
        u, w, s, sd, r, rd = (y[..., k] for k in range(6))
        return np.stack([
            w, -a * np.sin(u) - c * w,
            sd, -a * np.cos(u) * s - c * sd,
            rd, -a * np.cos(u) * r - c * rd,
        ], axis=-1)

    def _trajectory(self, u0, v0) -> GridField:
        key = (float(u0), float(v0))
        if key not in self._cache:
            y0 = np.array([u0, v0, 1.0, 0.0, 0.0, 1.0])
            self._cache[key] = rk4_trajectory(self._aug_rhs, y0, self.dt,
                                              self.t_final)
        return self._cache[key]

    def _interp(self, traj: GridField, t: float, col: int) -> float:
        return float(cubic_interpolate(
            GridField([traj.axes[0]], traj.data[:, col]), np.array([t])))

    def evaluate(self, points, order: int = 0, third_axis=None):
        from .jets import FieldOutputs
        pts = np.asarray(points, dtype=np.float64)
        n = pts.shape[0]
        out = FieldOutputs(points=pts, values=np.zeros((n, 1)))
        if order >= 1:
            out.jacobian = np.zeros((n, 1, 3))
        if order >= 2:
            out.hessian = np.zeros((n, 1, 3, 3))
        a, c = self.problem.g_over_l, self.problem.b_over_m
        for i, (t, u0, v0) in enumerate(pts):
            traj = self._trajectory(u0, v0)
            u = self._interp(traj, t, 0)
            out.values[i, 0] = u
            if order >= 1:
                w = self._interp(traj, t, 1)
                out.jacobian[i, 0] = (w, self._interp(traj, t, 2),
                                      self._interp(traj, t, 4))
            if order >= 2:
                out.hessian[i, 0, 0, 0] = -a * np.sin(u) - c * w
                sd = self._interp(traj, t, 3)
                rd = self._interp(traj, t, 5)
                out.hessian[i, 0, 0, 1] = out.hessian[i, 0, 1, 0] = sd
                out.hessian[i, 0, 0, 2] = out.hessian[i, 0, 2, 0] = rd
        return out

    def mixed_third(self, points, axis_twice: int, axis_once: int):
        if axis_twice != 0 or axis_once not in (1, 2):
            raise CapabilityError("flow-map stub only supplies d^3 u/dt^2 d(ic)")
        pts = np.asarray(points, dtype=np.float64)
        col = 3 if axis_once == 1 else 5
        delta = self.dt
        out = np.zeros((pts.shape[0], 1))
        for i, (t, u0, v0) in enumerate(pts):
            traj = self._trajectory(u0, v0)
            hi = self._interp(traj, min(t + delta, self.t_final), col)
            lo = self._interp(traj, max(t - delta, 0.0), col)
            span = min(t + delta, self.t_final) - max(t - delta, 0.0)
            out[i, 0] = (hi - lo) / span
        return out


# ---------------------------------------------------------------------------
# Per-problem dataset builders
# ---------------------------------------------------------------------------

def _analytic_targets(problem, points, source, h, include_hessians):
    field = problem.analytic_field()
    order = 2 if include_hessians else 1
    if source == "none":
        outs = field.evaluate(points, order=0)
        return outs.values, None, None
    if source in ("analytic", "solver"):
        outs = field.evaluate(points, order=order)
        return outs.values, outs.jacobian, outs.hessian if include_hessians \
            else None
    if source == "empirical":
        outs = field.evaluate(points, order=0)
        jac = empirical_jacobians(lambda p: field.evaluate(p).values, points, h)
        return outs.values, jac, None
    raise ConfigurationError(f"unknown derivative source {source!r}")


def _solver_reference(problem, solver_cfg) -> GridField:
    cfg = dict(solver_cfg or {})
    if isinstance(problem, Continuity):
        w = problem.spec.domain[1][1]
        nx = int(cfg.get("nx", 101))
        dt = float(cfg.get("dt", 0.004))
        store_every = int(cfg.get("store_every", 25))
        xs = np.linspace(-w, w, nx)
        mesh = np.meshgrid(xs, xs, indexing="ij")
        ic = GridField([xs, xs], problem.initial_density(mesh[0], mesh[1]))
        return continuity_fv_solve(ic, dt=dt,
                                   t_final=problem.spec.domain[0][1],
                                   store_every=store_every)
    if isinstance(problem, KdV):
        nx = int(cfg.get("nx", 512))
        dt = float(cfg.get("dt", 1e-3))
        store_every = int(cfg.get("store_every", 10))
        return kdv_spectral_solve(lambda x: np.cos(np.pi * x), nu=problem.nu,
                                  nx=nx, dt=dt,
                                  t_final=problem.spec.domain[0][1],
                                  store_every=store_every)
    raise CapabilityError(f"no grid solver for {problem.spec.name}")


def _grid_value_fn(reference: GridField):
    def fn(points):
        vals = cubic_interpolate(reference, points)
        return vals[:, None] if vals.ndim == 1 else vals
    return fn


def _clip_inside(points, problem, margin):
    lo = np.array([b[0] for b in problem.spec.domain]) + margin
    hi = np.array([b[1] for b in problem.spec.domain]) - margin
    return np.clip(points, lo, hi)


def generate_datasets(problem: Problem, n_interior: int, n_boundary: int,
                      n_initial: int = 0, seed: int = 0,
                      derivative_source: str = "analytic",
                      fd_step: float = 1e-3, include_hessians: bool = False,
                      solver_cfg: dict = None, param_values=None,
                      n_trajectories: int = 30, traj_subsample: int = 10,
                      sampling: str = "random", downsample: int = None):
    """Build the interior/boundary/initial collocation sets for a problem.

    ``sampling="grid"`` (solver-backed problems) trains on the reference
    grid thinned by ``downsample`` in each spatial coordinate; the stored
    time spacing already reflects the solver's ``store_every``.

    Returns a dict with the sets, the reference grid (for solver-backed
    problems), and a manifest describing how targets were produced.
    """
    if derivative_source not in DERIVATIVE_SOURCES:
        raise ConfigurationError(
            f"derivative_source must be one of {DERIVATIVE_SOURCES}")
    rng = np.random.default_rng([int(seed), 0xDA7A])
    spec = problem.spec
    manifest = {"problem": spec.name, "constants": _jsonable(spec.params),
                "seed": int(seed), "derivative_source": derivative_source,
                "fd_step": fd_step, "n_interior": n_interior,
                "n_boundary": n_boundary, "n_initial": n_initial}
    reference = None

    if isinstance(problem, Pendulum):
        interior, initial = _pendulum_sets(problem, rng, n_trajectories,
                                           traj_subsample, derivative_source,
                                           fd_step, solver_cfg)
        boundary = None
        manifest["n_trajectories"] = n_trajectories
        manifest["ic_description"] = "uniform initial states in the (u0, v0) box"
    elif spec.reference == "solver":
        if derivative_source == "analytic":
            raise ConfigurationError(
                f"{spec.name} has no closed-form derivatives; use "
                f"derivative_source 'solver' or 'empirical'")
        reference = _solver_reference(problem, solver_cfg)
        value_fn = _grid_value_fn(reference)
        if sampling == "grid":
            pts = _downsampled_grid_points(reference, downsample or 1)
        else:
            pts = sample_interior(problem, n_interior, rng)
        if derivative_source in ("solver", "empirical"):
            pts = _clip_inside(pts, problem, 2 * fd_step)
            values = value_fn(pts)
            jac = empirical_jacobians(value_fn, pts, fd_step,
                                      scheme="central")
            interior = CollocationSet(pts, "interior", values, jac)
        else:
            interior = CollocationSet(pts, "interior", value_fn(pts))
        boundary = _boundary_set(problem, n_boundary, rng)
        initial = _initial_set(problem, n_initial, rng)
        manifest["solver_grid"] = {k: v for k, v in reference.meta.items()}
        if isinstance(problem, Continuity):
            manifest["ic_description"] = (
                f"{len(problem.ic_centers)} Gaussian bumps, sigma="
                f"{problem.ic_sigma}, amplitude={problem.ic_amplitude}, "
                f"centers={list(problem.ic_centers)}")
        else:
            manifest["ic_description"] = "cos(pi x)"
    else:
        pts = sample_interior(problem, n_interior, rng)
        if spec.param_indices and param_values is not None:
            pts = attach_parameters(pts, problem, param_values)
            manifest["param_values"] = np.atleast_2d(param_values).tolist()
        if derivative_source == "empirical":
            pts = _clip_inside(pts, problem, 2 * fd_step)
        values, jac, hess = _analytic_targets(problem, pts, derivative_source,
                                              fd_step, include_hessians)
        interior = CollocationSet(pts, "interior", values, jac, hess)
        boundary = _boundary_set(problem, n_boundary, rng,
                                 param_values=param_values)
        initial = _initial_set(problem, n_initial, rng)

    for cs in (interior, boundary, initial):
        if cs is not None:
            cs.meta.update(region_manifest(problem, fd_step))
            cs.validate_against(problem)
    return {"interior": interior, "boundary": boundary, "initial": initial,
            "reference": reference, "manifest": manifest}


def _downsampled_grid_points(reference: GridField, k: int) -> np.ndarray:
    axes = [reference.axes[0]] + [a[::k] for a in reference.axes[1:]]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def region_manifest(problem, fd_step) -> dict:
    return {"problem": problem.spec.name,
            "domain": [list(b) for b in problem.spec.domain],
            "h": fd_step}


def _boundary_set(problem, n, rng, param_values=None):
    if n <= 0 or problem.spec.boundary_kind is None:
        return None
    pts = sample_boundary(problem, n, rng)
    if problem.spec.param_indices and param_values is not None:
        pts = attach_parameters(pts, problem, param_values)
    if problem.spec.boundary_kind == "periodic":
        return CollocationSet(pts, "boundary")
    return CollocationSet(pts, "boundary", problem.boundary_values(pts))


def _initial_set(problem, n, rng):
    if n <= 0 or problem.spec.time_index is None:
        return None
    pts = sample_initial(problem, n, rng)
    return CollocationSet(pts, "initial", problem.initial_values(pts))


def _pendulum_sets(problem, rng, n_trajectories, subsample, source, h,
                   solver_cfg):
    cfg = dict(solver_cfg or {})
    dt = float(cfg.get("dt", 0.01))
    t_final = float(cfg.get("t_final", problem.spec.domain[0][1]))
    u0s = rng.uniform(problem.spec.domain[1][0], problem.spec.domain[1][1],
                      n_trajectories)
    v0s = rng.uniform(problem.spec.domain[2][0], problem.spec.domain[2][1],
                      n_trajectories)
    pts, vals, jacs = [], [], []
    stub = PendulumFlowField(problem, dt=dt, t_final=t_final)
    for u0, v0 in zip(u0s, v0s):
        traj = stub._trajectory(u0, v0)
        times = traj.axes[0][::subsample]
        data = traj.data[::subsample]
        p = np.column_stack([times, np.full_like(times, u0),
                             np.full_like(times, v0)])
        pts.append(p)
        vals.append(data[:, [0]])
        if source == "empirical":
            # quotients across trajectories restarted from perturbed states
            jacs.append(_pendulum_fd_jacobian(problem, p, dt, t_final, h))
        else:
            jacs.append(np.stack([data[:, 1], data[:, 2], data[:, 4]],
                                 axis=1)[:, None, :])
    points = np.concatenate(pts)
    interior = CollocationSet(points, "interior", np.concatenate(vals),
                              None if source == "none"
                              else np.concatenate(jacs))
    ic_pts = np.column_stack([np.zeros(n_trajectories), u0s, v0s])
    initial = CollocationSet(ic_pts, "initial", u0s[:, None])
    return interior, initial


def _pendulum_fd_jacobian(problem, points, dt, t_final, h):
    n = points.shape[0]
    out = np.empty((n, 1, 3))
    stub = PendulumFlowField(problem, dt=dt, t_final=t_final + 2 * h)
    base = stub.evaluate(points).values[:, 0]
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = h
        out[:, 0, axis] = (stub.evaluate(points + e).values[:, 0] - base) / h
    return out


# ---------------------------------------------------------------------------
# Evaluation grids with reference values
# ---------------------------------------------------------------------------

def evaluation_grid(problem: Problem, n_per_axis=64, reference: GridField = None,
                    param_values=None, margin: float = 0.0,
                    with_jacobians: bool = False, solver_cfg=None,
                    seed: int = 0) -> CollocationSet:
    """Unseen test grid carrying reference values (and jacobians when the
    reference is closed-form)."""
    spec = problem.spec
    if isinstance(problem, Pendulum):
        return _pendulum_eval_set(problem, n_per_axis, solver_cfg, seed)
    if spec.reference == "analytic":
        dims = [i for i in range(spec.input_dim) if i not in spec.param_indices]
        axes = [np.linspace(spec.domain[i][0] + margin,
                            spec.domain[i][1] - margin, n_per_axis)
                for i in dims]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.zeros((mesh[0].size, spec.input_dim))
        for k, i in enumerate(dims):
            pts[:, i] = mesh[k].ravel()
        if spec.param_indices:
            if param_values is None:
                raise ConfigurationError(
                    f"{spec.name} needs param_values for its test grid")
            pts = attach_parameters(pts, problem, param_values)
        field = problem.analytic_field()
        outs = field.evaluate(pts, order=1 if with_jacobians else 0)
        return CollocationSet(pts, "interior", outs.values, outs.jacobian)
    if reference is None:
        reference = _solver_reference(problem, solver_cfg)
    axes = [a[::max(1, len(a) // n_per_axis)] for a in reference.axes]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    values = _grid_value_fn(reference)(pts)
    return CollocationSet(pts, "interior", values)


def _pendulum_eval_set(problem, n_trajectories, solver_cfg, seed):
    cfg = dict(solver_cfg or {})
    dt = float(cfg.get("dt", 0.01))
    rng = np.random.default_rng([int(seed), 0xE7A1])
    sets = generate_datasets(problem, 0, 0, seed=int(rng.integers(2 ** 31)),
                             derivative_source="solver",
                             solver_cfg={"dt": dt},
                             n_trajectories=int(n_trajectories))
    return sets["interior"]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj
