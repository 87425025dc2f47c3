"""Collocation sets: sampled domain points with optional value and
derivative targets, plus their CSV + JSON-manifest file format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError, ShapeError

REGIONS = ("interior", "boundary", "initial")


@dataclass
class CollocationSet:
    """Points in the (time x) space (x parameter) domain with targets.

    ``values`` is (N, m), ``jacobians`` (N, m, d), ``hessians``
    (N, m, d, d); any of them may be absent.
    """

    points: np.ndarray
    region: str = "interior"
    values: Optional[np.ndarray] = None
    jacobians: Optional[np.ndarray] = None
    hessians: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if self.region not in REGIONS:
            raise ConfigurationError(f"region must be one of {REGIONS}, "
                                     f"got {self.region!r}")
        n, d = self.points.shape
        m = None
        for name in ("values", "jacobians", "hessians"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=np.float64)
            setattr(self, name, arr)
            if arr.shape[0] != n:
                raise ShapeError(f"{name} leading dim {arr.shape[0]} != {n} points")
            if m is None:
                m = arr.shape[1]
            elif arr.shape[1] != m:
                raise ShapeError(f"{name} output dim {arr.shape[1]} != {m}")
            want = {"values": (n, m), "jacobians": (n, m, d),
                    "hessians": (n, m, d, d)}[name]
            if arr.shape != want:
                raise ShapeError(f"{name} shape {arr.shape} != {want}")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def subset(self, idx) -> "CollocationSet":
        take = lambda a: None if a is None else a[idx]
        return CollocationSet(self.points[idx], self.region, take(self.values),
                              take(self.jacobians), take(self.hessians),
                              dict(self.meta))

    def copy(self) -> "CollocationSet":
        cp = lambda a: None if a is None else a.copy()
        return CollocationSet(self.points.copy(), self.region, cp(self.values),
                              cp(self.jacobians), cp(self.hessians),
                              dict(self.meta))

    def validate_against(self, problem) -> None:
        """Check region-specific invariants for a given problem."""
        ti = problem.spec.time_index
        if self.region == "initial":
            if ti is None:
                raise ConfigurationError(f"{problem.spec.name} is time-independent; "
                                         "an initial region makes no sense")
            t0 = problem.spec.domain[ti][0]
            if self.n and not np.all(self.points[:, ti] == t0):
                raise ConfigurationError("initial points must sit at t0 exactly")

    # -- file format --------------------------------------------------------

    def save(self, path) -> None:
        """Write a columnar CSV plus a sidecar ``<path>.manifest.json``."""
        path = Path(path)
        n, d = self.points.shape
        cols = [f"x{i}" for i in range(d)]
        arrays = [self.points]
        if self.values is not None:
            m = self.values.shape[1]
            cols += [f"u{k}" for k in range(m)]
            arrays.append(self.values)
        if self.jacobians is not None:
            m = self.jacobians.shape[1]
            cols += [f"du{k}_dx{i}" for k in range(m) for i in range(d)]
            arrays.append(self.jacobians.reshape(n, -1))
        if self.hessians is not None:
            m = self.hessians.shape[1]
            cols += [f"d2u{k}_dx{i}dx{j}" for k in range(m)
                     for i in range(d) for j in range(d)]
            arrays.append(self.hessians.reshape(n, -1))
        table = np.hstack(arrays)
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in table:
                fh.write(",".join(repr(v) for v in row) + "\n")
        manifest = {"region": self.region, "n_points": n, "n_coords": d,
                    "columns": cols, **self.meta}
        with open(f"{path}.manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, default=_jsonify)

    @staticmethod
    def load(path) -> "CollocationSet":
        path = Path(path)
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        with open(f"{path}.manifest.json") as fh:
            manifest = json.load(fh)
        d = manifest["n_coords"]
        n = data.shape[0]
        idx = {c: i for i, c in enumerate(header)}
        points = data[:, :d]
        u_cols = [c for c in header if c.startswith("u")]
        m = len(u_cols)
        values = data[:, [idx[c] for c in u_cols]] if u_cols else None
        j_cols = [c for c in header if c.startswith("du")]
        jacobians = None
        if j_cols:
            m_j = m or len(j_cols) // d
            jacobians = data[:, [idx[c] for c in j_cols]].reshape(n, m_j, d)
        h_cols = [c for c in header if c.startswith("d2u")]
        hessians = None
        if h_cols:
            m_h = m or len(h_cols) // (d * d)
            hessians = data[:, [idx[c] for c in h_cols]].reshape(n, m_h, d, d)
        meta = {k: v for k, v in manifest.items()
                if k not in ("region", "n_points", "n_coords", "columns")}
        return CollocationSet(points, manifest["region"], values, jacobians,
                              hessians, meta)


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj)}")
