"""Loss functionals over collocation sets.

Every training method is a weighted sum of MSE blocks: supervised blocks
on values / jacobians / hessians, a PDE-residual block, and boundary and
initial-condition blocks.  The table below lists which supervised blocks
each method switches on and where the residual appears:

===========  ======  =========  ========  ==================
method       values  jacobians  hessians  residual
===========  ======  =========  ========  ==================
OUTL         x
OUTL_PINN    x                            weighted separately
DERL                 x
SOB          x       x
HESL                           x
DER_HESL             x         x
SOB_HES      x       x         x
PINN                                      as the domain term
===========  ======  =========  ========  ==================

All blocks share the boundary and initial terms; the initial term is
dropped for time-independent problems.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from . import jets
from .collocation import CollocationSet
from .errors import (ConfigurationError, EmptyBatchError, NumericalError,
                     ShapeError, SpecificationError)
from .jets import FieldOutputs
from .network import Network
from .problems import Problem


class Method(str, Enum):
    DERL = "DERL"
    OUTL = "OUTL"
    OUTL_PINN = "OUTL_PINN"
    SOB = "SOB"
    HESL = "HESL"
    DER_HESL = "DER_HESL"
    SOB_HES = "SOB_HES"
    PINN = "PINN"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace("+", "_").replace("-", "_")
        try:
            return cls[key]
        except KeyError:
            raise ConfigurationError(
                f"unknown method {value!r}; choose from "
                f"{[m.value for m in cls]}") from None


REQUIRED_TARGETS = {
    Method.DERL: ("jacobians",),
    Method.OUTL: ("values",),
    Method.OUTL_PINN: ("values",),
    Method.SOB: ("values", "jacobians"),
    Method.HESL: ("hessians",),
    Method.DER_HESL: ("jacobians", "hessians"),
    Method.SOB_HES: ("values", "jacobians", "hessians"),
    Method.PINN: (),
}

_USES = {
    Method.DERL: {"jacobians"},
    Method.OUTL: {"values"},
    Method.OUTL_PINN: {"values", "residual"},
    Method.SOB: {"values", "jacobians"},
    Method.HESL: {"hessians"},
    Method.DER_HESL: {"jacobians", "hessians"},
    Method.SOB_HES: {"values", "jacobians", "hessians"},
    Method.PINN: {"residual"},
}


@dataclass
class LossSpec:
    """Method selector plus the weights of the loss blocks.

    ``lambda_pde`` only matters for OUTL_PINN, where the residual rides
    along as an extra term; for PINN the residual is the domain term and
    is scaled by ``lambda_domain``.
    """

    method: Method = Method.DERL
    lambda_domain: float = 1.0
    lambda_pde: float = 1.0
    lambda_boundary: float = 1.0
    lambda_initial: float = 1.0
    stochastic_hessian: bool = False
    hessian_probes: int = 8
    hessian_probe_step: float = 1e-3
    hessian_probe_seed: int = 0

    def __post_init__(self):
        self.method = Method.parse(self.method)
        for name in ("lambda_domain", "lambda_pde", "lambda_boundary",
                     "lambda_initial"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ConfigurationError(f"{name} must be finite and >= 0, got {v}")
            setattr(self, name, v)

    @property
    def uses_residual(self) -> bool:
        return "residual" in _USES[self.method]


@dataclass
class LossBreakdown:
    """Composite loss value with its per-block contributions."""

    total: float
    domain: float = 0.0
    pde: float = 0.0
    boundary: float = 0.0
    initial: float = 0.0
    grad: Optional[np.ndarray] = None

    def components(self) -> dict:
        return {"total": self.total, "domain": self.domain, "pde": self.pde,
                "boundary": self.boundary, "initial": self.initial}


def mse(pred, target) -> float:
    """Mean over rows of the squared Euclidean distance between rows."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    if pred.shape[0] == 0:
        raise EmptyBatchError("mse of an empty batch")
    return float(np.sum((pred - target) ** 2) / pred.shape[0])


class _Accumulator:
    """Collects cotangents per output array for one propagation."""

    def __init__(self, outs: FieldOutputs):
        self.outs = outs
        self.values = None
        self.jacobian = None
        self.hessian = None
        self.third = None

    def add(self, name, arr):
        cur = getattr(self, name)
        setattr(self, name, arr if cur is None else cur + arr)

    def backward(self, tape) -> np.ndarray:
        cot_dir = None
        if self.third is not None:
            cot_dir = [(None, None, self.third)]
        grads, _ = tape.backward(cot_values=self.values,
                                 cot_jacobian=self.jacobian,
                                 cot_hessian=self.hessian,
                                 cot_directional=cot_dir)
        return jets.flatten_grads(grads)


def _propagate(net, points, order, third_axis, with_grad):
    directions = None
    if third_axis is not None:
        directions = np.eye(net.input_dim)[[third_axis]]
    if with_grad:
        outs, tape = jets.propagate(net, points, order=order,
                                    directions=directions, with_tape=True)
    else:
        outs = jets.propagate(net, points, order=order, directions=directions)
        tape = None
    if directions is not None:
        outs.third = outs.directional[0][2]
        outs.third_axis = third_axis
    return outs, tape


def _zeros_like_params(net):
    return np.zeros(net.n_params)


def domain_loss(net: Network, points, *, problem: Optional[Problem] = None,
                value_target=None, value_weight=0.0,
                jacobian_target=None, jacobian_weight=0.0,
                hessian_target=None, hessian_weight=0.0,
                residual_weight=0.0, stochastic_hessian=None,
                with_grad=False):
    """Weighted supervised + residual blocks sharing one jet propagation.

    Returns ``(supervised_value, residual_value, grad_or_None)``; the two
    values are already weighted.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] == 0:
        raise EmptyBatchError("domain loss over an empty point set")
    n = points.shape[0]
    order = 0
    third_axis = None
    if jacobian_weight:
        order = 1
    if hessian_weight and stochastic_hessian is None:
        order = 2
    if residual_weight:
        if problem is None:
            raise SpecificationError("a residual block needs a problem")
        order = max(order, problem.residual_jet_order)
        third_axis = problem.spec.third_axis

    outs, tape = _propagate(net, points, order, third_axis, with_grad)
    acc = _Accumulator(outs)
    sup = 0.0
    if value_weight:
        if value_target is None:
            raise SpecificationError("value block without values target")
        diff = outs.values - value_target
        sup += value_weight * float(np.sum(diff ** 2) / n)
        if with_grad:
            acc.add("values", 2.0 * value_weight * diff / n)
    if jacobian_weight:
        if jacobian_target is None:
            raise SpecificationError("jacobian block without jacobians target")
        diff = outs.jacobian - jacobian_target
        sup += jacobian_weight * float(np.sum(diff ** 2) / n)
        if with_grad:
            acc.add("jacobian", 2.0 * jacobian_weight * diff / n)
    if hessian_weight and stochastic_hessian is None:
        if hessian_target is None:
            raise SpecificationError("hessian block without hessians target")
        diff = outs.hessian - hessian_target
        sup += hessian_weight * float(np.sum(diff ** 2) / n)
        if with_grad:
            acc.add("hessian", 2.0 * hessian_weight * diff / n)
    res_val = 0.0
    if residual_weight:
        res = problem.residual(outs)
        res_val = residual_weight * float(np.sum(res ** 2) / n)
        if with_grad:
            cots = problem.residual_vjp(outs, 2.0 * residual_weight * res / n)
            for key, arr in cots.items():
                acc.add({"values": "values", "jacobian": "jacobian",
                         "hessian": "hessian", "third": "third"}[key], arr)

    grad = acc.backward(tape) if with_grad else None

    if hessian_weight and stochastic_hessian is not None:
        if hessian_target is None:
            raise SpecificationError("hessian block without hessians target")
        h_val, h_grad = _stochastic_hessian_block(
            net, points, hessian_target, hessian_weight,
            stochastic_hessian, with_grad)
        sup += h_val
        if with_grad:
            grad = grad + h_grad

    total = sup + res_val
    if not np.isfinite(total):
        raise NumericalError(f"non-finite domain loss {total!r}")
    return sup, res_val, grad


def _stochastic_hessian_block(net, points, hessian_target, weight, cfg,
                              with_grad):
    """Random-probe Hessian matching: compare finite differences of the
    network jacobian along random unit directions against the exact
    target Hessian contracted with the same directions."""
    n = points.shape[0]
    rng = np.random.default_rng(cfg["seed"])
    k = int(cfg["probes"])
    h = float(cfg["step"])
    d = points.shape[1]
    dirs = rng.normal(size=(k, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    value = 0.0
    grad = _zeros_like_params(net) if with_grad else None
    for v in dirs:
        target_hv = np.einsum("nmde,e->nmd", hessian_target, v)
        outs_p, tape_p = _propagate(net, points + h * v, 1, None, with_grad)
        outs_m, tape_m = _propagate(net, points - h * v, 1, None, with_grad)
        approx_hv = (outs_p.jacobian - outs_m.jacobian) / (2.0 * h)
        diff = approx_hv - target_hv
        value += weight * float(np.sum(diff ** 2) / n) / k
        if with_grad:
            base = 2.0 * weight * diff / (n * k * 2.0 * h)
            acc_p = _Accumulator(outs_p)
            acc_p.add("jacobian", base)
            acc_m = _Accumulator(outs_m)
            acc_m.add("jacobian", -base)
            grad = grad + acc_p.backward(tape_p) + acc_m.backward(tape_m)
    return value, grad


def _value_term(net, points, targets, weight, with_grad):
    n = points.shape[0]
    outs, tape = _propagate(net, points, 0, None, with_grad)
    diff = outs.values - targets
    value = weight * float(np.sum(diff ** 2) / n)
    if not with_grad:
        return value, None
    acc = _Accumulator(outs)
    acc.add("values", 2.0 * weight * diff / n)
    return value, acc.backward(tape)


def _periodic_term(net, problem, points, weight, with_grad):
    """Periodic boundary MSE between paired edge points, on u and u_x."""
    n = points.shape[0]
    images = problem.periodic_pair(points)
    x_axis = problem.spec.third_axis
    outs_a, tape_a = _propagate(net, points, 1, None, with_grad)
    outs_b, tape_b = _propagate(net, images, 1, None, with_grad)
    dv = outs_a.values - outs_b.values
    dj = outs_a.jacobian[:, :, x_axis] - outs_b.jacobian[:, :, x_axis]
    value = weight * float((np.sum(dv ** 2) + np.sum(dj ** 2)) / n)
    if not with_grad:
        return value, None
    cj = np.zeros_like(outs_a.jacobian)
    cj[:, :, x_axis] = 2.0 * weight * dj / n
    acc_a = _Accumulator(outs_a)
    acc_a.add("values", 2.0 * weight * dv / n)
    acc_a.add("jacobian", cj)
    acc_b = _Accumulator(outs_b)
    acc_b.add("values", -2.0 * weight * dv / n)
    acc_b.add("jacobian", -cj)
    return value, acc_a.backward(tape_a) + acc_b.backward(tape_b)


def check_required_targets(spec: LossSpec, interior: CollocationSet) -> None:
    for name in REQUIRED_TARGETS[spec.method]:
        if getattr(interior, name) is None:
            raise SpecificationError(
                f"method {spec.method.value} requires interior target array "
                f"{name!r}")


def composite_breakdown(spec: LossSpec, problem: Problem,
                        interior: CollocationSet,
                        boundary: Optional[CollocationSet] = None,
                        initial: Optional[CollocationSet] = None,
                        net: Network = None,
                        with_grad: bool = False) -> LossBreakdown:
    """Full composite loss with per-block values (and optional gradient)."""
    check_required_targets(spec, interior)
    uses = _USES[spec.method]
    m = spec.method

    total_grad = _zeros_like_params(net) if with_grad else None
    sh_cfg = None
    if m is Method.SOB_HES and spec.stochastic_hessian:
        sh_cfg = {"probes": spec.hessian_probes, "step": spec.hessian_probe_step,
                  "seed": spec.hessian_probe_seed}
    residual_weight = 0.0
    if m is Method.PINN:
        residual_weight = spec.lambda_domain
    elif m is Method.OUTL_PINN:
        residual_weight = spec.lambda_pde
    sup, res, grad = domain_loss(
        net, interior.points, problem=problem,
        value_target=interior.values if "values" in uses else None,
        value_weight=spec.lambda_domain if "values" in uses else 0.0,
        jacobian_target=interior.jacobians if "jacobians" in uses else None,
        jacobian_weight=spec.lambda_domain if "jacobians" in uses else 0.0,
        hessian_target=interior.hessians if "hessians" in uses else None,
        hessian_weight=spec.lambda_domain if "hessians" in uses else 0.0,
        residual_weight=residual_weight, stochastic_hessian=sh_cfg,
        with_grad=with_grad)
    if with_grad:
        total_grad += grad

    bc = 0.0
    if boundary is not None and boundary.n and spec.lambda_boundary > 0:
        if problem.spec.boundary_kind == "periodic":
            bc, g = _periodic_term(net, problem, boundary.points,
                                   spec.lambda_boundary, with_grad)
        else:
            if boundary.values is None:
                raise SpecificationError("boundary set has no values targets")
            bc, g = _value_term(net, boundary.points, boundary.values,
                                spec.lambda_boundary, with_grad)
        if with_grad:
            total_grad += g

    ic = 0.0
    if initial is not None and initial.n and problem.spec.is_time_dependent \
            and spec.lambda_initial > 0:
        if initial.values is None:
            raise SpecificationError("initial set has no values targets")
        ic, g = _value_term(net, initial.points, initial.values,
                            spec.lambda_initial, with_grad)
        if with_grad:
            total_grad += g

    return LossBreakdown(total=sup + res + bc + ic, domain=sup, pde=res,
                         boundary=bc, initial=ic, grad=total_grad)


def composite_loss(spec: LossSpec, problem: Problem, interior: CollocationSet,
                   boundary: Optional[CollocationSet] = None,
                   initial: Optional[CollocationSet] = None,
                   net: Network = None) -> float:
    """Scalar composite loss of a network on the given collocation sets."""
    return composite_breakdown(spec, problem, interior, boundary, initial,
                               net).total
