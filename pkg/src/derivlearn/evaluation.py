"""Metrics on held-out grids: solution error, derivative error, residual
norms, and the problem-specific diagnostics (vorticity, flow-map
sensitivity residuals, t=0 field error).

All reported norms are mean-squared values over the evaluation points;
every serialized report labels this convention explicitly.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .collocation import CollocationSet
from .errors import ShapeError
from .fields import evaluate_field
from .problems import (Kovasznay, Pendulum, Problem, pendulum_g_residual,
                       vorticity_error)
from .solvers import GridField

UNITS = "mean-squared"


@dataclass
class MetricsReport:
    l2_u: float
    l2_du: Optional[float] = None
    residual_norms: dict = field(default_factory=dict)
    vorticity_err: Optional[float] = None
    g_residual: Optional[float] = None
    field_err_t0: Optional[float] = None
    grid: dict = field(default_factory=dict)
    wall_ms: float = 0.0

    def __post_init__(self):
        for name, value in self.scalars().items():
            if value is not None and (not np.isfinite(value) or value < 0):
                raise ShapeError(f"metric {name} must be finite and >= 0, "
                                 f"got {value}")

    def scalars(self) -> dict:
        out = {"l2_u": self.l2_u}
        if self.l2_du is not None:
            out["l2_du"] = self.l2_du
        for key, val in self.residual_norms.items():
            out[f"residual_{key}"] = val
        for key in ("vorticity_err", "g_residual", "field_err_t0"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        return out

    def to_dict(self, include_timing: bool = False) -> dict:
        # wall-clock stays out of the persisted payload by default so that
        # reruns with the same seed are byte-identical
        out = {"units": UNITS, **self.scalars(), "grid": self.grid}
        if include_timing:
            out["wall_ms"] = self.wall_ms
        return out

    def save(self, path, include_timing: bool = False) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(include_timing), fh, indent=2,
                      sort_keys=True)
            fh.write("\n")


def _grid_to_collocation(grid: GridField) -> CollocationSet:
    mesh = np.meshgrid(*grid.axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    values = grid.data.reshape(pts.shape[0], -1)
    return CollocationSet(pts, "interior", values)


def residual_norms(problem: Problem, res: np.ndarray) -> dict:
    """Split residual rows into the problem's named equation groups."""
    names = problem.spec.residual_names
    if isinstance(problem, Kovasznay):
        groups = {"momentum": res[:, :2], "incompressibility": res[:, 2:]}
    elif len(names) == 1:
        groups = {names[0]: res}
    else:
        groups = {name: res[:, [k]] for k, name in enumerate(names)}
    return {name: float(np.mean(np.sum(block ** 2, axis=1)))
            for name, block in groups.items()}


def evaluate(problem: Problem, net, test_grid, *, n_g_points: int = 256,
             t0_grid: int = 41, seed: int = 0) -> MetricsReport:
    """Compare a field against reference data on an unseen grid.

    ``test_grid`` is a :class:`CollocationSet` with reference values (and
    optionally jacobians) or a :class:`GridField` of reference data.
    """
    t_start = time.perf_counter()
    if isinstance(test_grid, GridField):
        grid_desc = {"kind": "grid", "shape": list(test_grid.data.shape)}
        test = _grid_to_collocation(test_grid)
    else:
        test = test_grid
        grid_desc = {"kind": "collocation", "n_points": test.n}
    if test.values is None:
        raise ShapeError("test grid carries no reference values")

    order = 1 if test.jacobians is not None else 0
    outs = evaluate_field(net, test.points, order=order)
    n = test.n
    l2_u = float(np.sum((outs.values - test.values) ** 2) / n)
    l2_du = None
    if test.jacobians is not None:
        l2_du = float(np.sum((outs.jacobian - test.jacobians) ** 2) / n)

    res_outs = problem.residual_outputs(net, test.points)
    res = problem.residual(res_outs)
    norms = residual_norms(problem, res)

    report = MetricsReport(l2_u=l2_u, l2_du=l2_du, residual_norms=norms,
                           grid=grid_desc)
    if isinstance(problem, Kovasznay):
        report.vorticity_err = vorticity_error(net, problem, test.points)
    if isinstance(problem, Pendulum):
        rng = np.random.default_rng([int(seed), 0x97])
        idx = rng.choice(n, size=min(n_g_points, n), replace=False)
        g = pendulum_g_residual(problem, net, test.points[idx])
        report.g_residual = float(np.mean(np.sum(g ** 2, axis=1)))
        report.field_err_t0 = _pendulum_t0_field_error(problem, net, t0_grid)
    report.wall_ms = (time.perf_counter() - t_start) * 1e3
    return report


def _pendulum_t0_field_error(problem: Pendulum, net, n_per_axis: int) -> float:
    """Residual of the dynamics at t=0 over a dense initial-state grid."""
    u0 = np.linspace(problem.spec.domain[1][0], problem.spec.domain[1][1],
                     n_per_axis)
    v0 = np.linspace(problem.spec.domain[2][0], problem.spec.domain[2][1],
                     n_per_axis)
    U, V = np.meshgrid(u0, v0, indexing="ij")
    pts = np.stack([np.zeros(U.size), U.ravel(), V.ravel()], axis=1)
    outs = problem.residual_outputs(net, pts)
    res = problem.residual(outs)
    return float(np.mean(np.sum(res ** 2, axis=1)))


def error_field(problem: Problem, net, reference: GridField) -> GridField:
    """Per-point squared error and squared residual maps on a grid.

    The output keeps the reference axes and stacks two components:
    squared solution error (summed over outputs) and squared residual
    norm.  Its mean over the grid equals the report's ``l2_u``.
    """
    test = _grid_to_collocation(reference)
    outs = evaluate_field(net, test.points, order=0)
    sq_err = np.sum((outs.values - test.values) ** 2, axis=1)
    res_outs = problem.residual_outputs(net, test.points)
    sq_res = np.sum(problem.residual(res_outs) ** 2, axis=1)
    grid_shape = tuple(len(a) for a in reference.axes)
    data = np.stack([sq_err.reshape(grid_shape), sq_res.reshape(grid_shape)],
                    axis=-1)
    return GridField(reference.axes, data,
                     {"components": ["sq_error", "sq_residual"],
                      "units": UNITS})


def diff_error_fields(a: GridField, b: GridField) -> GridField:
    """Pointwise difference a - b of two error fields (same axes)."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"error fields differ in shape: {a.data.shape} vs "
                         f"{b.data.shape}")
    for ax_a, ax_b in zip(a.axes, b.axes):
        if not np.array_equal(ax_a, ax_b):
            raise ShapeError("error fields live on different grids")
    return GridField(a.axes, a.data - b.data,
                     {"components": a.meta.get("components"),
                      "diff": True, "units": UNITS})
