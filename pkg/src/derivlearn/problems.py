"""Benchmark problem definitions: domains, residual operators, analytic
solutions with their derivatives, forcings, and auxiliary diagnostics.

Coordinate conventions: for time-dependent problems the time coordinate
comes first; parameter coordinates come after the spatial ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CapabilityError, ConfigurationError, ShapeError
from .fields import AnalyticField, evaluate_field, field_mixed_third
from .jets import FieldOutputs
from .network import Network

PI = np.pi


@dataclass(frozen=True)
class ProblemSpec:
    """Static description of one benchmark system."""

    name: str
    coords: tuple                      # coordinate names, time first if present
    output_dim: int
    domain: tuple                      # (lo, hi) per coordinate
    params: dict
    residual_order: int
    reference: str                     # "analytic" | "solver"
    time_index: Optional[int] = None
    param_indices: tuple = ()
    third_axis: Optional[int] = None
    residual_names: tuple = ("pde",)
    boundary_kind: Optional[str] = "dirichlet"   # None: no spatial boundary

    @property
    def input_dim(self) -> int:
        return len(self.coords)

    @property
    def is_time_dependent(self) -> bool:
        return self.time_index is not None

    def __post_init__(self):
        if self.residual_order > 3:
            raise ConfigurationError("residual order above 3 is unsupported")
        for name, (lo, hi) in zip(self.coords, self.domain):
            if not lo < hi:
                raise ConfigurationError(f"domain bounds for {name} must satisfy "
                                         f"lo < hi, got ({lo}, {hi})")


class Problem:
    """Behavior shared by every benchmark; subclasses fill in the physics."""

    spec: ProblemSpec

    # -- residual ---------------------------------------------------------
    def residual(self, outs: FieldOutputs) -> np.ndarray:
        """PDE residual rows (N, n_equations) from field outputs."""
        raise NotImplementedError

    def residual_vjp(self, outs: FieldOutputs, g: np.ndarray) -> dict:
        """Cotangents of ``sum(residual * g)`` w.r.t. the field outputs."""
        raise NotImplementedError

    @property
    def residual_jet_order(self) -> int:
        """Full derivative tensors the residual actually reads: the third
        order for the dispersive problem comes from a directional jet, so
        only order-2 residuals ever touch the hessian."""
        return 2 if self.spec.residual_order == 2 else 1

    def residual_outputs(self, field, points) -> FieldOutputs:
        self._check_capability(field)
        return evaluate_field(field, points, order=self.residual_jet_order,
                              third_axis=self.spec.third_axis)

    def _check_capability(self, field) -> None:
        if isinstance(field, Network) and self.spec.residual_order >= 2 \
                and field.activation != "tanh":
            raise CapabilityError(
                f"{self.spec.name} needs order-{self.spec.residual_order} input "
                f"derivatives; activation {field.activation!r} cannot supply them")

    # -- reference solution ------------------------------------------------
    def analytic_solution(self, points) -> np.ndarray:
        raise CapabilityError(f"{self.spec.name} has no closed-form solution; "
                              "use its reference solver")

    def analytic_field(self) -> AnalyticField:
        raise CapabilityError(f"{self.spec.name} has no closed-form solution")

    def boundary_values(self, points) -> np.ndarray:
        raise CapabilityError(f"{self.spec.name} defines no Dirichlet boundary data")

    def initial_values(self, points) -> np.ndarray:
        raise CapabilityError(f"{self.spec.name} defines no initial condition")

    # -- helpers -----------------------------------------------------------
    def check_points(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != self.spec.input_dim:
            raise ShapeError(f"points shape {pts.shape} incompatible with "
                             f"{self.spec.name} ({self.spec.input_dim} coords)")
        return pts


def pde_residual(problem: Problem, field, point) -> np.ndarray:
    """Residual vector of the problem's operator applied to a field at one
    point (or a batch of points)."""
    pts = np.asarray(point, dtype=np.float64)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    outs = problem.residual_outputs(field, pts)
    res = problem.residual(outs)
    return res[0] if single else res


# ---------------------------------------------------------------------------
# Allen-Cahn family: lam*(u_xx + u_yy) + u*(u^2 - 1) = f
# ---------------------------------------------------------------------------

class _AllenCahnBase(Problem):
    """Shared residual for the fixed and parametric Allen-Cahn variants.

    The forcing is constructed from the closed-form solution, so that
    solution has residual zero identically.
    """

    lam: float

    def forcing(self, points) -> np.ndarray:
        pts = self.check_points(points)
        u = self._u(pts)
        return self.lam * self._lap_u(pts) + u * (u * u - 1.0)

    def residual(self, outs):
        u = outs.values[:, 0]
        lap = outs.hessian[:, 0, 0, 0] + outs.hessian[:, 0, 1, 1]
        f = self.forcing(outs.points)
        return (self.lam * lap + u * (u * u - 1.0) - f)[:, None]

    def residual_vjp(self, outs, g):
        gf = g[:, 0]
        c_values = ((3.0 * outs.values[:, 0] ** 2 - 1.0) * gf)[:, None]
        c_hess = np.zeros_like(outs.hessian)
        c_hess[:, 0, 0, 0] = self.lam * gf
        c_hess[:, 0, 1, 1] = self.lam * gf
        return {"values": c_values, "hessian": c_hess}

    def boundary_values(self, points):
        # sin(pi * x) vanishes on every edge of [-1, 1]^2; emit exact zeros
        # so boundary targets are not polluted by sin(pi) rounding.
        pts = self.check_points(points)
        return np.zeros((pts.shape[0], 1))

    def analytic_solution(self, points):
        return self._u(self.check_points(points))[:, None]

    def analytic_field(self):
        return AnalyticField(self.spec.input_dim, 1,
                             fn_value=lambda p: self._u(p)[:, None],
                             fn_jacobian=self._jac,
                             fn_hessian=self._hess)

    # subclasses: _u, _lap_u, _jac, _hess


class AllenCahn(_AllenCahnBase):
    """Fixed Allen-Cahn on [-1,1]^2 with solution sin(pi x) sin(pi y)."""

    def __init__(self, lam: float = 0.01):
        self.lam = lam
        self.spec = ProblemSpec(
            name="allen_cahn", coords=("x", "y"), output_dim=1,
            domain=((-1.0, 1.0), (-1.0, 1.0)), params={"lam": lam},
            residual_order=2, reference="analytic")

    def _u(self, p):
        return np.sin(PI * p[:, 0]) * np.sin(PI * p[:, 1])

    def _lap_u(self, p):
        return -2.0 * PI ** 2 * self._u(p)

    def _jac(self, p):
        x, y = p[:, 0], p[:, 1]
        out = np.empty((p.shape[0], 1, 2))
        out[:, 0, 0] = PI * np.cos(PI * x) * np.sin(PI * y)
        out[:, 0, 1] = PI * np.sin(PI * x) * np.cos(PI * y)
        return out

    def _hess(self, p):
        x, y = p[:, 0], p[:, 1]
        u = self._u(p)
        out = np.empty((p.shape[0], 1, 2, 2))
        out[:, 0, 0, 0] = -PI ** 2 * u
        out[:, 0, 1, 1] = -PI ** 2 * u
        out[:, 0, 0, 1] = out[:, 0, 1, 0] = PI ** 2 * np.cos(PI * x) * np.cos(PI * y)
        return out


class AllenCahn1P(_AllenCahnBase):
    """One-parameter Allen-Cahn: u = exp(-xi (x+0.7)) sin(pi x) sin(pi y).

    Inputs are (x, y, xi); the residual differentiates in x and y only.
    """

    def __init__(self, lam: float = 0.01, xi_range=(0.0, PI)):
        self.lam = lam
        self.spec = ProblemSpec(
            name="allen_cahn_1p", coords=("x", "y", "xi"), output_dim=1,
            domain=((-1.0, 1.0), (-1.0, 1.0), tuple(xi_range)),
            params={"lam": lam}, residual_order=2, reference="analytic",
            param_indices=(2,))

    def _parts(self, p):
        x, y, xi = p[:, 0], p[:, 1], p[:, 2]
        e = np.exp(-xi * (x + 0.7))
        return x, y, xi, e, np.sin(PI * x), np.cos(PI * x), np.sin(PI * y), np.cos(PI * y)

    def _u(self, p):
        _, _, _, e, sx, _, sy, _ = self._parts(p)
        return e * sx * sy

    def _lap_u(self, p):
        _, _, xi, e, sx, cx, sy, _ = self._parts(p)
        u_xx = e * sy * ((xi * xi - PI ** 2) * sx - 2.0 * xi * PI * cx)
        u_yy = -PI ** 2 * e * sx * sy
        return u_xx + u_yy

    def _jac(self, p):
        x, _, xi, e, sx, cx, sy, cy = self._parts(p)
        out = np.empty((p.shape[0], 1, 3))
        out[:, 0, 0] = e * sy * (PI * cx - xi * sx)
        out[:, 0, 1] = PI * e * sx * cy
        out[:, 0, 2] = -(x + 0.7) * e * sx * sy
        return out

    def _hess(self, p):
        x, _, xi, e, sx, cx, sy, cy = self._parts(p)
        u = e * sx * sy
        u_x = e * sy * (PI * cx - xi * sx)
        u_y = PI * e * sx * cy
        out = np.empty((p.shape[0], 1, 3, 3))
        out[:, 0, 0, 0] = e * sy * ((xi * xi - PI ** 2) * sx - 2.0 * xi * PI * cx)
        out[:, 0, 1, 1] = -PI ** 2 * u
        out[:, 0, 2, 2] = (x + 0.7) ** 2 * u
        out[:, 0, 0, 1] = out[:, 0, 1, 0] = PI * e * cy * (PI * cx - xi * sx)
        out[:, 0, 0, 2] = out[:, 0, 2, 0] = -(x + 0.7) * u_x - e * sx * sy
        out[:, 0, 1, 2] = out[:, 0, 2, 1] = -(x + 0.7) * u_y
        return out


class AllenCahn2P(_AllenCahnBase):
    """Two-parameter Allen-Cahn: u = sum_j xi_j sin(j pi x) sin(j pi y)/j^2."""

    def __init__(self, lam: float = 0.01):
        self.lam = lam
        self.spec = ProblemSpec(
            name="allen_cahn_2p", coords=("x", "y", "xi1", "xi2"), output_dim=1,
            domain=((-1.0, 1.0), (-1.0, 1.0), (0.0, 1.0), (0.0, 1.0)),
            params={"lam": lam}, residual_order=2, reference="analytic",
            param_indices=(2, 3))

    @staticmethod
    def _modes(p):
        x, y = p[:, 0], p[:, 1]
        return [(p[:, 1 + j], np.sin(j * PI * x), np.cos(j * PI * x),
                 np.sin(j * PI * y), np.cos(j * PI * y)) for j in (1, 2)]

    def _u(self, p):
        return sum(xi * sx * sy / j ** 2
                   for j, (xi, sx, _, sy, _) in enumerate(self._modes(p), start=1))

    def _lap_u(self, p):
        return sum(-2.0 * PI ** 2 * xi * sx * sy
                   for j, (xi, sx, _, sy, _) in enumerate(self._modes(p), start=1))

    def _jac(self, p):
        out = np.zeros((p.shape[0], 1, 4))
        for j, (xi, sx, cx, sy, cy) in enumerate(self._modes(p), start=1):
            out[:, 0, 0] += PI * xi * cx * sy / j
            out[:, 0, 1] += PI * xi * sx * cy / j
            out[:, 0, 1 + j] = sx * sy / j ** 2
        return out

    def _hess(self, p):
        out = np.zeros((p.shape[0], 1, 4, 4))
        for j, (xi, sx, cx, sy, cy) in enumerate(self._modes(p), start=1):
            out[:, 0, 0, 0] += -PI ** 2 * xi * sx * sy
            out[:, 0, 1, 1] += -PI ** 2 * xi * sx * sy
            out[:, 0, 0, 1] += PI ** 2 * xi * cx * cy
            out[:, 0, 0, 1 + j] = PI * cx * sy / j
            out[:, 0, 1, 1 + j] = PI * sx * cy / j
        out[:, 0, 1, 0] = out[:, 0, 0, 1]
        for j in (1, 2):
            out[:, 0, 1 + j, 0] = out[:, 0, 0, 1 + j]
            out[:, 0, 1 + j, 1] = out[:, 0, 1, 1 + j]
        return out


# ---------------------------------------------------------------------------
# Continuity equation: u_t + div(v u) = 0 with v = (-y, x)
# ---------------------------------------------------------------------------

class Continuity(Problem):
    """Mass transport of a density under the rotating field (-y, x).

    The field is divergence-free, so the residual reduces to
    ``u_t - y u_x + x u_y``.  Coordinates are (t, x, y).
    """

    def __init__(self, t_max: float = 10.0, half_width: float = 1.5,
                 ic_centers=((0.6, 0.6), (0.6, -0.6), (-0.6, 0.6), (-0.6, -0.6)),
                 ic_sigma: float = 0.2, ic_amplitude: float = 1.0):
        w = half_width
        self.ic_centers = tuple(tuple(c) for c in ic_centers)
        self.ic_sigma = ic_sigma
        self.ic_amplitude = ic_amplitude
        self.spec = ProblemSpec(
            name="continuity", coords=("t", "x", "y"), output_dim=1,
            domain=((0.0, t_max), (-w, w), (-w, w)),
            params={"ic_sigma": ic_sigma, "ic_amplitude": ic_amplitude,
                    "ic_centers": self.ic_centers},
            residual_order=1, reference="solver", time_index=0)

    def residual(self, outs):
        x, y = outs.points[:, 1], outs.points[:, 2]
        j = outs.jacobian
        return (j[:, 0, 0] - y * j[:, 0, 1] + x * j[:, 0, 2])[:, None]

    def residual_vjp(self, outs, g):
        gf = g[:, 0]
        x, y = outs.points[:, 1], outs.points[:, 2]
        c_jac = np.zeros_like(outs.jacobian)
        c_jac[:, 0, 0] = gf
        c_jac[:, 0, 1] = -y * gf
        c_jac[:, 0, 2] = x * gf
        return {"jacobian": c_jac}

    def velocity(self, x, y):
        return -np.asarray(y), np.asarray(x)

    def initial_density(self, x, y):
        """Sum of isotropic Gaussian bumps, effectively zero at the boundary."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        total = np.zeros(np.broadcast(x, y).shape)
        for cx, cy in self.ic_centers:
            r2 = (x - cx) ** 2 + (y - cy) ** 2
            total += self.ic_amplitude * np.exp(-r2 / (2.0 * self.ic_sigma ** 2))
        return total

    def boundary_values(self, points):
        pts = self.check_points(points)
        return np.zeros((pts.shape[0], 1))

    def initial_values(self, points):
        pts = self.check_points(points)
        return self.initial_density(pts[:, 1], pts[:, 2])[:, None]


# ---------------------------------------------------------------------------
# Steady Navier-Stokes: Kovasznay flow
# ---------------------------------------------------------------------------

class Kovasznay(Problem):
    """Steady 2-D Navier-Stokes around the Kovasznay closed-form flow.

    Outputs are (u, v, p); residual rows are the two momentum components
    followed by the divergence.
    """

    def __init__(self, nu: float = 1.0 / 50.0,
                 domain=((-1.0, 1.0), (-0.5, 1.5))):
        self.nu = nu
        self.lam = 1.0 / (2.0 * nu) - np.sqrt(1.0 / (4.0 * nu ** 2) + 4.0 * PI ** 2)
        self.spec = ProblemSpec(
            name="kovasznay", coords=("x", "y"), output_dim=3,
            domain=tuple(tuple(b) for b in domain), params={"nu": nu},
            residual_order=2, reference="analytic",
            residual_names=("momentum", "incompressibility"))

    def residual(self, outs):
        nu = self.nu
        u, v = outs.values[:, 0], outs.values[:, 1]
        j, h = outs.jacobian, outs.hessian
        mom_x = (u * j[:, 0, 0] + v * j[:, 0, 1] + j[:, 2, 0]
                 - nu * (h[:, 0, 0, 0] + h[:, 0, 1, 1]))
        mom_y = (u * j[:, 1, 0] + v * j[:, 1, 1] + j[:, 2, 1]
                 - nu * (h[:, 1, 0, 0] + h[:, 1, 1, 1]))
        div = j[:, 0, 0] + j[:, 1, 1]
        return np.stack([mom_x, mom_y, div], axis=1)

    def residual_vjp(self, outs, g):
        nu = self.nu
        u, v = outs.values[:, 0], outs.values[:, 1]
        j = outs.jacobian
        gmx, gmy, gdv = g[:, 0], g[:, 1], g[:, 2]
        c_val = np.zeros_like(outs.values)
        c_val[:, 0] = gmx * j[:, 0, 0] + gmy * j[:, 1, 0]
        c_val[:, 1] = gmx * j[:, 0, 1] + gmy * j[:, 1, 1]
        c_jac = np.zeros_like(j)
        c_jac[:, 0, 0] = gmx * u + gdv
        c_jac[:, 0, 1] = gmx * v
        c_jac[:, 1, 0] = gmy * u
        c_jac[:, 1, 1] = gmy * v + gdv
        c_jac[:, 2, 0] = gmx
        c_jac[:, 2, 1] = gmy
        c_hess = np.zeros_like(outs.hessian)
        c_hess[:, 0, 0, 0] = -nu * gmx
        c_hess[:, 0, 1, 1] = -nu * gmx
        c_hess[:, 1, 0, 0] = -nu * gmy
        c_hess[:, 1, 1, 1] = -nu * gmy
        return {"values": c_val, "jacobian": c_jac, "hessian": c_hess}

    def _uvp(self, p):
        lam = self.lam
        x, y = p[:, 0], p[:, 1]
        e = np.exp(lam * x)
        c2, s2 = np.cos(2.0 * PI * y), np.sin(2.0 * PI * y)
        u = 1.0 - e * c2
        v = lam / (2.0 * PI) * e * s2
        pr = 0.5 * (1.0 - np.exp(2.0 * lam * x))
        return np.stack([u, v, pr], axis=1)

    def analytic_solution(self, points):
        return self._uvp(self.check_points(points))

    def _jac(self, p):
        lam = self.lam
        x, y = p[:, 0], p[:, 1]
        e = np.exp(lam * x)
        c2, s2 = np.cos(2.0 * PI * y), np.sin(2.0 * PI * y)
        out = np.empty((p.shape[0], 3, 2))
        out[:, 0, 0] = -lam * e * c2
        out[:, 0, 1] = 2.0 * PI * e * s2
        out[:, 1, 0] = lam ** 2 / (2.0 * PI) * e * s2
        out[:, 1, 1] = lam * e * c2
        out[:, 2, 0] = -lam * np.exp(2.0 * lam * x)
        out[:, 2, 1] = 0.0
        return out

    def _hess(self, p):
        lam = self.lam
        x, y = p[:, 0], p[:, 1]
        e = np.exp(lam * x)
        c2, s2 = np.cos(2.0 * PI * y), np.sin(2.0 * PI * y)
        out = np.zeros((p.shape[0], 3, 2, 2))
        out[:, 0, 0, 0] = -lam ** 2 * e * c2
        out[:, 0, 1, 1] = 4.0 * PI ** 2 * e * c2
        out[:, 0, 0, 1] = out[:, 0, 1, 0] = 2.0 * PI * lam * e * s2
        out[:, 1, 0, 0] = lam ** 3 / (2.0 * PI) * e * s2
        out[:, 1, 1, 1] = -2.0 * PI * lam * e * s2
        out[:, 1, 0, 1] = out[:, 1, 1, 0] = lam ** 2 * e * c2
        out[:, 2, 0, 0] = -2.0 * lam ** 2 * np.exp(2.0 * lam * x)
        return out

    def analytic_field(self):
        return AnalyticField(2, 3, fn_value=self._uvp, fn_jacobian=self._jac,
                             fn_hessian=self._hess)

    def boundary_values(self, points):
        return self.analytic_solution(points)

    def vorticity(self, points):
        """Closed-form vorticity (lam/nu) exp(lam x) sin(2 pi y) / (2 pi)."""
        pts = self.check_points(points)
        x, y = pts[:, 0], pts[:, 1]
        return (self.lam / self.nu) * np.exp(self.lam * x) \
            * np.sin(2.0 * PI * y) / (2.0 * PI)


def vorticity_error(net_or_field, problem: Kovasznay, grid_points) -> float:
    """MSE between the field's curl and the closed-form vorticity."""
    if not isinstance(problem, Kovasznay):
        raise CapabilityError("vorticity error is defined for the Kovasznay flow")
    pts = problem.check_points(grid_points)
    outs = evaluate_field(net_or_field, pts, order=1)
    if outs.values.shape[1] != 3:
        raise ShapeError("vorticity needs a 3-component (u, v, p) field")
    curl = outs.jacobian[:, 1, 0] - outs.jacobian[:, 0, 1]
    return float(np.mean((curl - problem.vorticity(pts)) ** 2))


# ---------------------------------------------------------------------------
# Damped pendulum as a flow map u(t; u0, v0)
# ---------------------------------------------------------------------------

class Pendulum(Problem):
    """Pendulum angle as a function of time and initial state.

    Coordinates are (t, u0, v0) where v0 is the initial angular velocity.
    ``g_over_l`` and ``b_over_m`` default to 9.81 and 0.3; the
    conservative variant uses ``b_over_m = 0``.
    """

    def __init__(self, g_over_l: float = 9.81, b_over_m: float = 0.3,
                 t_max: float = 10.0, u0_range=(-PI / 2, PI / 2),
                 v0_range=(-1.5, 1.5)):
        self.g_over_l = g_over_l
        self.b_over_m = b_over_m
        self.spec = ProblemSpec(
            name="pendulum", coords=("t", "u0", "v0"), output_dim=1,
            domain=((0.0, t_max), tuple(u0_range), tuple(v0_range)),
            params={"g_over_l": g_over_l, "b_over_m": b_over_m},
            residual_order=2, reference="solver", time_index=0,
            param_indices=(1, 2), boundary_kind=None)

    def rhs(self, state, t=0.0):
        """First-order dynamics: (u, u_dot) -> (u_dot, u_ddot)."""
        u, w = state[..., 0], state[..., 1]
        return np.stack([w, -self.g_over_l * np.sin(u) - self.b_over_m * w],
                        axis=-1)

    def energy(self, state):
        u, w = state[..., 0], state[..., 1]
        return 0.5 * w * w + self.g_over_l * (1.0 - np.cos(u))

    def residual(self, outs):
        u = outs.values[:, 0]
        u_t = outs.jacobian[:, 0, 0]
        u_tt = outs.hessian[:, 0, 0, 0]
        return (u_tt + self.g_over_l * np.sin(u) + self.b_over_m * u_t)[:, None]

    def residual_vjp(self, outs, g):
        gf = g[:, 0]
        c_val = (self.g_over_l * np.cos(outs.values[:, 0]) * gf)[:, None]
        c_jac = np.zeros_like(outs.jacobian)
        c_jac[:, 0, 0] = self.b_over_m * gf
        c_hess = np.zeros_like(outs.hessian)
        c_hess[:, 0, 0, 0] = gf
        return {"values": c_val, "jacobian": c_jac, "hessian": c_hess}

    def initial_values(self, points):
        pts = self.check_points(points)
        return pts[:, 1][:, None]


def pendulum_rhs(state, params=(9.81, 0.3)):
    """(u, u_dot) -> (u_dot, -g/l sin u - b/m u_dot)."""
    g_over_l, b_over_m = params
    state = np.asarray(state, dtype=np.float64)
    u, w = state[..., 0], state[..., 1]
    return np.stack([w, -g_over_l * np.sin(u) - b_over_m * w], axis=-1)


def pendulum_g_residual(problem: Pendulum, field, points) -> np.ndarray:
    """Sensitivity residuals of the flow map w.r.t. its initial state.

    Differentiating the pendulum equation in each initial-condition
    coordinate q gives
    ``d^3 u/dt^2 dq + g/l cos(u) du/dq + b/m d^2 u/dt dq = 0``;
    the two rows returned are those expressions for q = u0 and q = v0.
    Third-order mixed derivatives of networks come from polarized
    directional jets.
    """
    pts = problem.check_points(points)
    outs = evaluate_field(field, pts, order=2)
    u = outs.values[:, 0]
    rows = []
    for axis in (1, 2):
        m3 = field_mixed_third(field, pts, axis_twice=0, axis_once=axis)[:, 0]
        rows.append(m3 + problem.g_over_l * np.cos(u) * outs.jacobian[:, 0, axis]
                    + problem.b_over_m * outs.hessian[:, 0, 0, axis])
    return np.stack(rows, axis=1)


# ---------------------------------------------------------------------------
# Korteweg-de Vries: u_t + u u_x + nu u_xxx = 0
# ---------------------------------------------------------------------------

class KdV(Problem):
    """Third-order dispersive wave on the periodic interval [-1, 1].

    Coordinates are (t, x); boundary conditions are periodic in u and u_x.
    """

    def __init__(self, nu: float = 0.0025, t_max: float = 1.0):
        self.nu = nu
        self.spec = ProblemSpec(
            name="kdv", coords=("t", "x"), output_dim=1,
            domain=((0.0, t_max), (-1.0, 1.0)), params={"nu": nu},
            residual_order=3, reference="solver", time_index=0,
            third_axis=1, boundary_kind="periodic")

    def residual(self, outs):
        u = outs.values[:, 0]
        u_t, u_x = outs.jacobian[:, 0, 0], outs.jacobian[:, 0, 1]
        u_xxx = outs.third[:, 0]
        return (u_t + u * u_x + self.nu * u_xxx)[:, None]

    def residual_vjp(self, outs, g):
        gf = g[:, 0]
        c_val = (outs.jacobian[:, 0, 1] * gf)[:, None]
        c_jac = np.zeros_like(outs.jacobian)
        c_jac[:, 0, 0] = gf
        c_jac[:, 0, 1] = outs.values[:, 0] * gf
        return {"values": c_val, "jacobian": c_jac,
                "third": self.nu * gf[:, None]}

    def initial_values(self, points):
        pts = self.check_points(points)
        return np.cos(PI * pts[:, 1])[:, None]

    def periodic_pair(self, points):
        """Map boundary points on x = -1 to their images on x = +1."""
        pts = self.check_points(points)
        image = pts.copy()
        image[:, 1] = -image[:, 1]
        return image


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

_REGISTRY = {
    "allen_cahn": AllenCahn,
    "allen_cahn_1p": AllenCahn1P,
    "allen_cahn_2p": AllenCahn2P,
    "continuity": Continuity,
    "kovasznay": Kovasznay,
    "pendulum": Pendulum,
    "kdv": KdV,
}

_ALIASES = {
    "allencahn": "allen_cahn", "allencahn1p": "allen_cahn_1p",
    "allencahn2p": "allen_cahn_2p", "ac": "allen_cahn",
}

PROBLEM_NAMES = tuple(sorted(_REGISTRY))


def make_problem(name: str, **params) -> Problem:
    key = name.strip().lower().replace("-", "_")
    key = _ALIASES.get(key.replace("_", ""), key)
    if key not in _REGISTRY:
        raise ConfigurationError(f"unknown problem {name!r}; choose from "
                                 f"{PROBLEM_NAMES}")
    return _REGISTRY[key](**params)
