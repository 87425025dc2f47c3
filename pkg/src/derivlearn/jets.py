"""Exact input derivatives of feed-forward networks via forward-mode jets.

Derivatives with respect to the inputs are obtained by propagating
truncated Taylor data through each layer: the full Jacobian and Hessian
blocks for orders 1-2, and univariate jets of order up to 3 along chosen
directions for third derivatives.  A tape recorded during propagation
supports reverse-mode differentiation of any scalar loss built from the
propagated quantities back onto the weights and biases.

Internal layout keeps the neuron axis last, so every affine map is a
single matmul:

* value   ``(N, n)``
* jacobian ``(N, d, n)``      -- d input axes
* hessian ``(N, d, d, n)``
* directional jet ``t1, t2, t3`` each ``(N, n)``

Public arrays use the conventional ``(N, m, d)`` / ``(N, m, d, d)`` layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import AxisError, CapabilityError, NumericalError, ShapeError
from .network import Network


@dataclass
class InputDerivatives:
    """Derivatives of the network output with respect to one input point."""

    value: np.ndarray                    # (m,)
    jacobian: np.ndarray                 # (m, d)
    hessian: Optional[np.ndarray] = None  # (m, d, d)
    third_axis: Optional[np.ndarray] = None  # (m,), d^3 u / dx_a^3


@dataclass
class FieldOutputs:
    """Batched values and input derivatives of a differentiable field."""

    points: np.ndarray                       # (N, d)
    values: np.ndarray                       # (N, m)
    jacobian: Optional[np.ndarray] = None    # (N, m, d)
    hessian: Optional[np.ndarray] = None     # (N, m, d, d)
    third: Optional[np.ndarray] = None       # (N, m) along `third_axis`
    third_axis: Optional[int] = None
    directional: Optional[list] = None       # [(t1, t2, t3)], each (N, m)


class _State:
    """Jet data at one layer boundary."""

    __slots__ = ("value", "jac", "hess", "dirs")

    def __init__(self, value, jac=None, hess=None, dirs=None):
        self.value = value
        self.jac = jac
        self.hess = hess
        self.dirs = dirs if dirs is not None else []


def _matmul_last(arr: np.ndarray, w_t: np.ndarray) -> np.ndarray:
    """arr @ w_t over the last axis as one large GEMM (not a batched loop)."""
    lead = arr.shape[:-1]
    return (arr.reshape(-1, arr.shape[-1]) @ w_t).reshape(*lead, w_t.shape[1])


def _affine(state: _State, w: np.ndarray, b: np.ndarray) -> _State:
    w_t = w.T.copy() if not w.T.flags.c_contiguous else w.T
    out = _State(state.value @ w_t + b)
    if state.jac is not None:
        out.jac = _matmul_last(state.jac, w_t)
    if state.hess is not None:
        out.hess = _matmul_last(state.hess, w_t)
    out.dirs = [[t @ w_t if t is not None else None for t in d]
                for d in state.dirs]
    return out


def _tanh(state: _State):
    """Apply tanh elementwise; return new state plus backprop cache."""
    s = np.tanh(state.value)
    s1 = 1.0 - s * s
    s2 = -2.0 * s * s1
    out = _State(s)
    s3 = None
    if state.jac is not None:
        out.jac = s1[:, None, :] * state.jac
    if state.hess is not None:
        s3 = -2.0 * (s1 * s1 + s * s2)
        ja = state.jac
        out.hess = (s1[:, None, None, :] * state.hess
                    + s2[:, None, None, :] * ja[:, :, None, :] * ja[:, None, :, :])
    need_s3 = any(d[2] is not None for d in state.dirs)
    if need_s3 and s3 is None:
        s3 = -2.0 * (s1 * s1 + s * s2)
    for t1, t2, t3 in state.dirs:
        nt1 = s1 * t1
        nt2 = s2 * t1 * t1 + s1 * t2
        nt3 = None
        if t3 is not None:
            nt3 = s3 * t1 ** 3 + 3.0 * s2 * t1 * t2 + s1 * t3
        out.dirs.append([nt1, nt2, nt3])
    return out, (s, s1, s2, s3)


class JetTape:
    """Recorded propagation, ready for reverse-mode parameter gradients."""

    def __init__(self, net: Network, states, pre_states, caches, order: int,
                 n_dirs: int):
        self._net = net
        self._states = states          # input state of every affine layer
        self._pre_states = pre_states  # affine outputs feeding each tanh
        self._caches = caches          # tanh caches, one per hidden layer
        self._order = order
        self._n_dirs = n_dirs

    def backward(self, cot_values=None, cot_jacobian=None, cot_hessian=None,
                 cot_directional=None):
        """Pull output cotangents back to the parameters.

        Cotangents use the public layouts of :class:`FieldOutputs`;
        ``cot_directional`` is a list (one entry per propagated direction)
        of ``(c1, c2, c3)`` tuples whose members may be None.

        Returns ``(grads, input_grad)`` where ``grads`` is a list of
        ``(dW, db)`` pairs and ``input_grad`` has shape ``(N, d)``.
        """
        net = self._net
        n = self._states[0].value.shape[0]
        m = net.output_dim
        d = net.input_dim

        cz = _as_batch(cot_values, (n, m), "cot_values")
        cj = ch = None
        if cot_jacobian is not None:
            cj = np.transpose(_as_batch(cot_jacobian, (n, m, d), "cot_jacobian"),
                              (0, 2, 1))
        if cot_hessian is not None:
            if self._order < 2:
                raise CapabilityError("tape was recorded without hessians")
            ch = np.transpose(_as_batch(cot_hessian, (n, m, d, d), "cot_hessian"),
                              (0, 2, 3, 1))
        cds = [[None, None, None] for _ in range(self._n_dirs)]
        if cot_directional is not None:
            if len(cot_directional) != self._n_dirs:
                raise ShapeError("one cotangent triple per propagated direction")
            for k, triple in enumerate(cot_directional):
                for j, c in enumerate(triple):
                    if c is not None:
                        cds[k][j] = _as_batch(c, (n, m), f"cot_directional[{k}][{j}]")
        if cz is None:
            cz = np.zeros((n, m))

        cot = _State(cz, cj, ch, cds)
        grads = [None] * net.n_layers
        last = net.n_layers - 1
        for k in range(last, -1, -1):
            if k != last:
                cot = self._tanh_backward(cot, k)
            cot, grads[k] = self._affine_backward(cot, k)
        return grads, cot.value

    def grad_vector(self, **cots) -> np.ndarray:
        grads, _ = self.backward(**cots)
        return flatten_grads(grads)

    def _affine_backward(self, cot: _State, k: int):
        w = self._net.weights[k]
        st_in = self._states[k]
        gw = np.zeros_like(w)
        _outer_accum(gw, cot.value, st_in.value)
        gb = cot.value.sum(axis=0)
        out = _State(cot.value @ w)
        if cot.jac is not None:
            _outer_accum(gw, cot.jac, st_in.jac)
            out.jac = _matmul_last(cot.jac, w)
        if cot.hess is not None:
            _outer_accum(gw, cot.hess, st_in.hess)
            out.hess = _matmul_last(cot.hess, w)
        out.dirs = []
        for cd, td in zip(cot.dirs, st_in.dirs):
            back = []
            for c, t in zip(cd, td):
                if c is None:
                    back.append(None)
                else:
                    _outer_accum(gw, c, t)
                    back.append(c @ w)
            out.dirs.append(back)
        return out, (gw, gb)

    def _tanh_backward(self, cot: _State, k: int) -> _State:
        s, s1, s2, s3 = self._caches[k]
        st_a = self._pre_states[k]
        ca = cot.value * s1
        out = _State(None)
        if cot.jac is not None:
            ja = st_a.jac
            ca = ca + s2 * np.sum(cot.jac * ja, axis=1)
            out.jac = s1[:, None, :] * cot.jac
        if cot.hess is not None:
            ha, ja = st_a.hess, st_a.jac
            jj = ja[:, :, None, :] * ja[:, None, :, :]
            ca = ca + np.sum(cot.hess * (s2[:, None, None, :] * ha
                                         + s3[:, None, None, :] * jj), axis=(1, 2))
            sym = cot.hess + np.transpose(cot.hess, (0, 2, 1, 3))
            from_hess = s2[:, None, :] * np.sum(sym * ja[:, None, :, :], axis=2)
            out.jac = from_hess if out.jac is None else out.jac + from_hess
            out.hess = s1[:, None, None, :] * cot.hess
        s4 = None
        out.dirs = []
        for cd, td in zip(cot.dirs, st_a.dirs):
            c1, c2, c3 = cd
            t1, t2, t3 = td
            b1 = b2 = b3 = None
            if c1 is not None:
                b1 = c1 * s1
                ca = ca + c1 * s2 * t1
            if c2 is not None:
                b1 = _add(b1, c2 * 2.0 * s2 * t1)
                b2 = c2 * s1
                ca = ca + c2 * (s3 * t1 * t1 + s2 * t2)
            if c3 is not None:
                if s4 is None:
                    s4 = -6.0 * s1 * s2 - 2.0 * s * s3
                b1 = _add(b1, c3 * (3.0 * s3 * t1 * t1 + 3.0 * s2 * t2))
                b2 = _add(b2, c3 * 3.0 * s2 * t1)
                b3 = c3 * s1
                ca = ca + c3 * (s4 * t1 ** 3 + 3.0 * s3 * t1 * t2 + s2 * t3)
            out.dirs.append([b1, b2, b3])
        out.value = ca
        return out


def _add(a, b):
    return b if a is None else a + b


def _as_batch(arr, shape, name):
    if arr is None:
        return None
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape != shape:
        raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def _outer_accum(gw, g_arr, in_arr):
    """gw[o, i] += sum over leading axes of g_arr[..., o] * in_arr[..., i]."""
    n_out, n_in = gw.shape
    gw += g_arr.reshape(-1, n_out).T @ in_arr.reshape(-1, n_in)


def flatten_grads(grads) -> np.ndarray:
    chunks = []
    for gw, gb in grads:
        chunks.append(gw.ravel())
        chunks.append(gb)
    return np.concatenate(chunks)


def propagate(net: Network, points, order: int = 0, directions=None,
              dir_order: int = 3, with_tape: bool = False):
    """Propagate jets through the network over a batch of points.

    Parameters
    ----------
    order : 0, 1 or 2
        Highest full derivative tensor to compute (jacobian, hessian).
    directions : optional (k, d) array
        Directions along which univariate jets of order ``dir_order``
        are propagated (third directional derivatives).
    with_tape : bool
        Record the propagation for later reverse-mode gradients.

    Returns ``FieldOutputs`` or ``(FieldOutputs, JetTape)``.
    """
    if order not in (0, 1, 2):
        raise CapabilityError(f"full derivative tensors limited to order 2, got {order}")
    if dir_order not in (2, 3):
        raise CapabilityError("directional jets support order 2 or 3 only")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != net.input_dim:
        raise ShapeError(f"points shape {pts.shape} incompatible with input dim "
                         f"{net.input_dim}")
    n, d = pts.shape

    state = _State(pts.copy())
    if order >= 1:
        state.jac = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    if order >= 2:
        state.hess = np.zeros((n, d, d, d))
    n_dirs = 0
    if directions is not None:
        dirs = np.asarray(directions, dtype=np.float64)
        if dirs.ndim != 2 or dirs.shape[1] != d:
            raise ShapeError(f"directions shape {dirs.shape} incompatible with "
                             f"input dim {d}")
        n_dirs = dirs.shape[0]
        zero = np.zeros((n, d))
        for v in dirs:
            t1 = np.broadcast_to(v, (n, d)).copy()
            t3 = zero.copy() if dir_order == 3 else None
            state.dirs.append([t1, zero.copy(), t3])

    states, pre_states, caches = [], [], []
    last = net.n_layers - 1
    for k in range(net.n_layers):
        states.append(state)
        state = _affine(state, net.weights[k], net.biases[k])
        if k != last:
            pre_states.append(state)
            state, cache = _tanh(state)
            caches.append(cache)

    out = FieldOutputs(points=pts, values=state.value)
    if order >= 1:
        out.jacobian = np.transpose(state.jac, (0, 2, 1))
    if order >= 2:
        out.hessian = np.transpose(state.hess, (0, 3, 1, 2))
    if n_dirs:
        out.directional = [tuple(t if t is None else t.copy() for t in dj)
                           for dj in state.dirs]
    if with_tape:
        return out, JetTape(net, states, pre_states, caches, order, n_dirs)
    return out


def input_derivatives(net: Network, x, order: int = 1,
                      third_axis: Optional[int] = None) -> InputDerivatives:
    """Exact derivatives of the network output at one input point.

    ``third_axis`` additionally requests the pure third derivative along
    that coordinate (the only third-order quantity supported).
    """
    if order not in (1, 2):
        raise CapabilityError(f"order must be 1 or 2, got {order}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise ShapeError(f"point shape {x.shape} incompatible with input dim "
                         f"{net.input_dim}")
    directions = None
    if third_axis is not None:
        if not 0 <= third_axis < net.input_dim:
            raise AxisError(f"third_axis {third_axis} out of range for "
                            f"{net.input_dim} inputs")
        directions = np.eye(net.input_dim)[[third_axis]]
    out = propagate(net, x[None, :], order=order, directions=directions)
    return InputDerivatives(
        value=out.values[0],
        jacobian=out.jacobian[0],
        hessian=out.hessian[0] if order >= 2 else None,
        third_axis=out.directional[0][2][0] if directions is not None else None,
    )


def mixed_third(net: Network, points, axis_twice: int, axis_once: int) -> np.ndarray:
    """Third derivatives ``d^3 u / dx_a^2 dx_b`` by polarization.

    Uses three univariate third-order jets along ``e_a + e_b``,
    ``e_a - e_b`` and ``e_b``: for a symmetric trilinear form ``T``,
    ``T(a,a,b) = (T(a+b)^3 - T(a-b)^3 - 2 T(b)^3) / 6``.
    """
    d = net.input_dim
    for ax in (axis_twice, axis_once):
        if not 0 <= ax < d:
            raise AxisError(f"axis {ax} out of range for {d} inputs")
    ea = np.eye(d)[axis_twice]
    eb = np.eye(d)[axis_once]
    if axis_twice == axis_once:
        out = propagate(net, points, directions=[ea])
        return out.directional[0][2]
    out = propagate(net, points, directions=[ea + eb, ea - eb, eb])
    tp, tm, tb = (out.directional[k][2] for k in range(3))
    return (tp - tm - 2.0 * tb) / 6.0


def loss_gradient(net: Network, loss, points, order: int = 1,
                  third_axis: Optional[int] = None):
    """Gradient of a scalar loss of the network outputs over a batch.

    ``loss`` is a callable mapping :class:`FieldOutputs` to a pair
    ``(value, cotangents)`` where ``cotangents`` is a dict with any of
    the keys ``values``, ``jacobian``, ``hessian``, ``third`` holding
    d(loss)/d(output array).

    Returns ``(value, grad_vector)`` with the gradient flattened in
    parameter-vector order.
    """
    directions = None
    if third_axis is not None:
        directions = np.eye(net.input_dim)[[third_axis]]
    outs, tape = propagate(net, points, order=order, directions=directions,
                           with_tape=True)
    if directions is not None:
        outs.third = outs.directional[0][2]
        outs.third_axis = third_axis
    value, cots = loss(outs)
    if not np.isfinite(value):
        bad = _first_nonfinite_row(outs)
        raise NumericalError(f"non-finite loss value {value!r}"
                             + (f" (first non-finite output at batch index {bad})"
                                if bad is not None else ""))
    cot_dir = None
    if cots.get("third") is not None:
        cot_dir = [(None, None, cots["third"])]
    grads, _ = tape.backward(cot_values=cots.get("values"),
                             cot_jacobian=cots.get("jacobian"),
                             cot_hessian=cots.get("hessian"),
                             cot_directional=cot_dir)
    return value, flatten_grads(grads)


def _first_nonfinite_row(outs: FieldOutputs):
    for arr in (outs.values, outs.jacobian, outs.hessian, outs.third):
        if arr is None:
            continue
        bad = ~np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1)
        if bad.any():
            return int(np.argmax(bad))
    return None
