"""Reference solvers and empirical-derivative machinery.

Everything here produces or consumes :class:`GridField`: dense data on a
uniform rectilinear grid, time-major when time is present.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import (BoundaryError, DivergenceError, DomainError, ShapeError,
                     StabilityError)


@dataclass
class GridField:
    """Dense array over a uniform rectilinear grid.

    ``data`` has one axis per entry of ``axes`` (same lengths, same
    order) plus an optional trailing component axis.
    """

    axes: list
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axes = [np.asarray(a, dtype=np.float64) for a in self.axes]
        self.data = np.asarray(self.data, dtype=np.float64)
        grid_shape = tuple(len(a) for a in self.axes)
        if self.data.shape[:len(grid_shape)] != grid_shape:
            raise ShapeError(f"data shape {self.data.shape} does not start with "
                             f"grid shape {grid_shape}")
        for a in self.axes:
            if len(a) > 1 and not np.all(np.diff(a) > 0):
                raise ShapeError("grid axes must be strictly increasing")

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def n_components(self) -> int:
        extra = self.data.shape[len(self.axes):]
        return int(np.prod(extra)) if extra else 1

    def spacing(self, axis: int) -> float:
        a = self.axes[axis]
        return float(a[1] - a[0]) if len(a) > 1 else 0.0

    def save(self, path) -> None:
        """Write raw row-major float64 binary plus a JSON header."""
        path = Path(path)
        np.ascontiguousarray(self.data).tofile(path)
        header = {
            "format": "derivlearn-grid", "version": 1, "dtype": "float64",
            "order": "C", "shape": list(self.data.shape),
            "axes": [a.tolist() for a in self.axes], "meta": self.meta,
        }
        with open(f"{path}.json", "w") as fh:
            json.dump(header, fh)

    @staticmethod
    def load(path) -> "GridField":
        path = Path(path)
        with open(f"{path}.json") as fh:
            header = json.load(fh)
        data = np.fromfile(path, dtype=np.float64).reshape(header["shape"])
        return GridField([np.asarray(a) for a in header["axes"]], data,
                         header.get("meta", {}))

    def export_csv(self, path) -> None:
        """Small-grid export: one row per grid point, coords then values."""
        path = Path(path)
        mesh = np.meshgrid(*self.axes, indexing="ij")
        coords = np.stack([m.ravel() for m in mesh], axis=1)
        vals = self.data.reshape(coords.shape[0], -1)
        with open(path, "w") as fh:
            names = [f"x{i}" for i in range(len(self.axes))]
            names += [f"u{k}" for k in range(vals.shape[1])]
            fh.write(",".join(names) + "\n")
            for c, v in zip(coords, vals):
                fh.write(",".join(repr(x) for x in np.concatenate([c, v])) + "\n")


# ---------------------------------------------------------------------------
# Runge-Kutta 4
# ---------------------------------------------------------------------------

def rk4_step(rhs: Callable, state: np.ndarray, t: float, dt: float) -> np.ndarray:
    k1 = rhs(state, t)
    k2 = rhs(state + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = rhs(state + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = rhs(state + dt * k3, t + dt)
    return state + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_trajectory(rhs: Callable, state0, dt: float, t_final: float) -> GridField:
    """Classical RK4 states at t = 0, dt, ..., t_final.

    ``rhs(state, t)`` may be vectorized over leading axes; ``state0`` may
    be one state vector or a batch ``(B, k)`` of them (the result then
    has shape ``(n_t, B, k)``).
    """
    if dt <= 0 or t_final < dt:
        raise StabilityError(f"need 0 < dt <= t_final, got dt={dt}, T={t_final}")
    state = np.asarray(state0, dtype=np.float64)
    n_steps = int(round(t_final / dt))
    times = np.arange(n_steps + 1) * dt
    out = np.empty((n_steps + 1,) + state.shape)
    out[0] = state
    for k in range(n_steps):
        state = rk4_step(rhs, state, times[k], dt)
        if not np.all(np.isfinite(state)):
            raise DivergenceError(f"non-finite state at step {k + 1}", step=k + 1)
        out[k + 1] = state
    return GridField([times], out, {"dt": dt})


# ---------------------------------------------------------------------------
# First-order upwind finite volumes for the rotating-advection problem
# ---------------------------------------------------------------------------

def continuity_fv_solve(ic: GridField, dt: float, t_final: float,
                        velocity: Optional[Callable] = None,
                        store_every: int = 1) -> GridField:
    """Advect a density under a prescribed velocity field with upwind
    finite volumes in flux form; fluxes vanish on the domain boundary.

    ``ic`` holds the initial density on an (x, y) grid.  Stability
    requires ``(max|vx|/dx + max|vy|/dy) * dt <= 1``; violations raise
    with the largest admissible step.  ``store_every`` keeps every k-th
    frame (the initial frame is always kept).
    """
    if ic.ndim != 2:
        raise ShapeError("initial condition must be a 2-D (x, y) grid")
    xs, ys = ic.axes
    dx, dy = ic.spacing(0), ic.spacing(1)
    if velocity is None:
        velocity = lambda x, y: (-y, x)

    # face-centered velocities (normal components)
    xf = 0.5 * (xs[:-1] + xs[1:])
    yf = 0.5 * (ys[:-1] + ys[1:])
    vx_face = np.broadcast_to(velocity(xf[:, None], ys[None, :])[0],
                              (len(xf), len(ys))).astype(np.float64)
    vy_face = np.broadcast_to(velocity(xs[:, None], yf[None, :])[1],
                              (len(xs), len(yf))).astype(np.float64)

    cfl = (np.abs(vx_face).max() / dx + np.abs(vy_face).max() / dy) * dt
    if cfl > 1.0 + 1e-12:
        dt_ok = dt / cfl
        raise StabilityError(f"CFL number {cfl:.3f} > 1; use dt <= {dt_ok:.3e}")

    vxp, vxm = np.maximum(vx_face, 0.0), np.minimum(vx_face, 0.0)
    vyp, vym = np.maximum(vy_face, 0.0), np.minimum(vy_face, 0.0)

    rho = ic.data.copy()
    n_steps = int(round(t_final / dt))
    frames = [rho.copy()]
    times = [0.0]
    for k in range(n_steps):
        fx = vxp * rho[:-1, :] + vxm * rho[1:, :]       # flux through x-faces
        fy = vyp * rho[:, :-1] + vym * rho[:, 1:]       # flux through y-faces
        div = np.zeros_like(rho)
        div[:-1, :] += fx / dx
        div[1:, :] -= fx / dx
        div[:, :-1] += fy / dy
        div[:, 1:] -= fy / dy
        rho = rho - dt * div
        if not np.all(np.isfinite(rho)):
            raise StabilityError(f"non-finite density at step {k + 1}")
        if (k + 1) % store_every == 0 or k + 1 == n_steps:
            frames.append(rho.copy())
            times.append((k + 1) * dt)
    return GridField([np.asarray(times), xs, ys], np.stack(frames),
                     {"dt": dt, "dx": dx, "dy": dy, "store_every": store_every})


def grid_total_mass(field: GridField, frame: int) -> float:
    """Sum(rho) * dx * dy of one stored frame of an advection run."""
    return float(field.data[frame].sum() * field.spacing(1) * field.spacing(2))


# ---------------------------------------------------------------------------
# Pseudo-spectral Korteweg-de Vries integrator
# ---------------------------------------------------------------------------

def kdv_spectral_solve(ic, nu: float, nx: int, dt: float, t_final: float,
                       store_every: int = 1, x_range=(-1.0, 1.0)) -> GridField:
    """Integrate ``u_t = -u u_x - nu u_xxx`` on a periodic interval.

    Fourier collocation in space with 2/3-rule dealiasing; the dispersive
    term is handled exactly by an integrating factor and the remainder
    stepped with RK4 on the spectral coefficients.  ``ic`` is a callable
    ``u0(x)`` or an array of length ``nx``.
    """
    if nx <= 0 or (nx & (nx - 1)) != 0:
        raise ShapeError(f"nx must be a power of two, got {nx}")
    lo, hi = x_range
    length = hi - lo
    xs = lo + length * np.arange(nx) / nx
    u0 = np.asarray(ic(xs) if callable(ic) else ic, dtype=np.float64)
    if u0.shape != (nx,):
        raise ShapeError(f"initial data shape {u0.shape} != ({nx},)")

    k = 2.0 * np.pi * np.fft.rfftfreq(nx, d=length / nx)
    lin = 1j * nu * k ** 3                       # exact via integrating factor
    e_half = np.exp(0.5 * dt * lin)
    e_full = e_half * e_half
    cutoff = np.arange(k.size) <= (nx // 3)      # 2/3-rule mask

    def nonlinear(v_hat):
        u = np.fft.irfft(v_hat * cutoff, n=nx)
        return -0.5j * k * (np.fft.rfft(u * u) * cutoff)

    v = np.fft.rfft(u0)
    n_steps = int(round(t_final / dt))
    frames = [u0.copy()]
    times = [0.0]
    for step in range(n_steps):
        a = nonlinear(v)
        b = nonlinear(e_half * (v + 0.5 * dt * a))
        c = nonlinear(e_half * v + 0.5 * dt * b)
        d = nonlinear(e_full * v + dt * e_half * c)
        v = e_full * v + dt / 6.0 * (e_full * a + 2.0 * e_half * (b + c) + d)
        if not np.all(np.isfinite(v)):
            raise StabilityError(f"spectral blow-up at step {step + 1}; "
                                 "try a smaller dt")
        if (step + 1) % store_every == 0 or step + 1 == n_steps:
            frames.append(np.fft.irfft(v, n=nx))
            times.append((step + 1) * dt)
    return GridField([np.asarray(times), xs], np.stack(frames),
                     {"dt": dt, "dx": length / nx, "nu": nu,
                      "store_every": store_every, "x_range": list(x_range)})


def kdv_total_mass(field: GridField, frame: int) -> float:
    """Integral of u over the periodic interval at one stored frame."""
    return float(field.data[frame].sum() * field.meta["dx"])


# ---------------------------------------------------------------------------
# Difference quotients (empirical derivatives)
# ---------------------------------------------------------------------------

def empirical_derivative(samples, point, axis: int, h: float,
                         scheme: str = "forward",
                         domain: Optional[list] = None) -> float:
    """Difference quotient of a callable or grid field along one axis.

    Forward: ``(u(x + h e) - u(x)) / h``; central uses the symmetric
    stencil with an O(h^2) error.  Stencil points must stay inside the
    sampled region.
    """
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    if scheme not in ("forward", "central"):
        raise ValueError(f"scheme must be forward or central, got {scheme!r}")
    point = np.asarray(point, dtype=np.float64)
    if isinstance(samples, GridField):
        fn = lambda p: cubic_interpolate(samples, p)
        bounds = [(a[0], a[-1]) for a in samples.axes]
    else:
        fn = samples
        bounds = domain
    step = np.zeros_like(point)
    step[axis] = h
    lo_pt = point - step if scheme == "central" else point
    hi_pt = point + step
    if bounds is not None:
        for p in (lo_pt, hi_pt):
            for c, (lo, hi) in zip(p, bounds):
                if c < lo or c > hi:
                    raise BoundaryError(
                        f"stencil point {p.tolist()} leaves the sampled region; "
                        f"stay at least h={h} from the boundary")
    if scheme == "forward":
        return (float(fn(hi_pt)) - float(fn(point))) / h
    return (float(fn(hi_pt)) - float(fn(lo_pt))) / (2.0 * h)


# ---------------------------------------------------------------------------
# Separable piecewise-cubic (4-point Lagrange) interpolation
# ---------------------------------------------------------------------------

def _lagrange_weights(nodes, x):
    """Barycentric-free 4-point Lagrange weights, vectorized over queries."""
    w = np.ones((x.shape[0], 4))
    for i in range(4):
        for j in range(4):
            if i != j:
                w[:, i] *= (x - nodes[:, j]) / (nodes[:, i] - nodes[:, j])
    return w


def _axis_stencil(axis_coords, q):
    """Indices (n, 4) of the interpolation stencil and matching weights."""
    n_nodes = len(axis_coords)
    if n_nodes < 4:
        raise DomainError("cubic interpolation needs at least 4 nodes per axis")
    cell = np.searchsorted(axis_coords, q, side="right") - 1
    cell = np.clip(cell, 0, n_nodes - 2)
    start = np.clip(cell - 1, 0, n_nodes - 4)
    idx = start[:, None] + np.arange(4)[None, :]
    nodes = axis_coords[idx]
    return idx, _lagrange_weights(nodes, q)


def cubic_interpolate(gridfield: GridField, point):
    """Separable piecewise-cubic interpolation, exact on cubic polynomials.

    Accepts one point or an ``(N, ndim)`` batch; vector-valued data keeps
    its trailing component axis.
    """
    pts = np.asarray(point, dtype=np.float64)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if pts.shape[1] != gridfield.ndim:
        raise ShapeError(f"query dim {pts.shape[1]} != grid dim {gridfield.ndim}")
    for ax, a in enumerate(gridfield.axes):
        q = pts[:, ax]
        if np.any(q < a[0] - 1e-12) or np.any(q > a[-1] + 1e-12):
            raise DomainError(f"query outside grid hull along axis {ax}")

    data = gridfield.data
    grid_nd = gridfield.ndim
    comp_shape = data.shape[grid_nd:]
    # Contract one axis at a time: gather the 4-point stencil, then fold
    # the Lagrange weights in.  After processing axis 0 the array carries
    # the query axis up front.
    idx0, w0 = _axis_stencil(gridfield.axes[0], pts[:, 0])
    work = data[idx0]                              # (N, 4, rest..., comps...)
    work = np.einsum("ns,ns...->n...", w0, work)
    for ax in range(1, grid_nd):
        idx, w = _axis_stencil(gridfield.axes[ax], pts[:, ax])
        work = np.take_along_axis(
            work, idx.reshape(idx.shape + (1,) * (work.ndim - 2)), axis=1)
        work = np.einsum("ns,ns...->n...", w, work)
    if single:
        work = work[0]
        return float(work) if comp_shape == () else work
    return work
