"""Differentiable fields: a common evaluation surface for networks and
closed-form solution stubs, so residual operators and metrics can consume
either interchangeably.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from . import jets
from .errors import CapabilityError, ShapeError
from .jets import FieldOutputs
from .network import Network


class AnalyticField:
    """Field defined by closed-form value/derivative callables.

    Every callable takes an ``(N, d)`` point array; ``fn_value`` returns
    ``(N, m)``, ``fn_jacobian`` ``(N, m, d)``, ``fn_hessian``
    ``(N, m, d, d)`` and ``fn_third`` (per axis) ``(N, m)``.
    """

    def __init__(self, input_dim: int, output_dim: int, fn_value: Callable,
                 fn_jacobian: Optional[Callable] = None,
                 fn_hessian: Optional[Callable] = None,
                 fn_third: Optional[Callable] = None,
                 fn_mixed_third: Optional[Callable] = None):
        self.input_dim = input_dim
        self.output_dim = output_dim
        self._value = fn_value
        self._jacobian = fn_jacobian
        self._hessian = fn_hessian
        self._third = fn_third
        self._mixed_third = fn_mixed_third

    def evaluate(self, points, order: int = 0,
                 third_axis: Optional[int] = None) -> FieldOutputs:
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != self.input_dim:
            raise ShapeError(f"points shape {pts.shape} incompatible with input "
                             f"dim {self.input_dim}")
        out = FieldOutputs(points=pts, values=np.asarray(self._value(pts)))
        if out.values.ndim == 1:
            out.values = out.values[:, None]
        if order >= 1:
            if self._jacobian is None:
                raise CapabilityError("field has no closed-form jacobian")
            out.jacobian = np.asarray(self._jacobian(pts))
        if order >= 2:
            if self._hessian is None:
                raise CapabilityError("field has no closed-form hessian")
            out.hessian = np.asarray(self._hessian(pts))
        if third_axis is not None:
            if self._third is None:
                raise CapabilityError("field has no closed-form third derivative")
            out.third = np.asarray(self._third(pts, third_axis))
            out.third_axis = third_axis
        return out

    def mixed_third(self, points, axis_twice: int, axis_once: int) -> np.ndarray:
        if self._mixed_third is None:
            raise CapabilityError("field has no closed-form mixed third derivative")
        return np.asarray(self._mixed_third(np.asarray(points, dtype=np.float64),
                                            axis_twice, axis_once))


def evaluate_field(field, points, order: int = 0,
                   third_axis: Optional[int] = None) -> FieldOutputs:
    """Evaluate a network or an analytic stub with one call."""
    if isinstance(field, Network):
        directions = None
        if third_axis is not None:
            directions = np.eye(field.input_dim)[[third_axis]]
        out = jets.propagate(field, np.asarray(points, dtype=np.float64),
                             order=order, directions=directions)
        if third_axis is not None:
            out.third = out.directional[0][2]
            out.third_axis = third_axis
        return out
    return field.evaluate(points, order=order, third_axis=third_axis)


def field_mixed_third(field, points, axis_twice: int, axis_once: int) -> np.ndarray:
    if isinstance(field, Network):
        return jets.mixed_third(field, np.asarray(points, dtype=np.float64),
                                axis_twice, axis_once)
    return field.mixed_third(points, axis_twice, axis_once)
