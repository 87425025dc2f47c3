"""Staged knowledge transfer by distillation.

A pipeline trains a plain physics-residual model on the first region,
then extends it region by region: each later stage optimizes the
residual loss on its new region plus an MSE distillation term that pins
the student's outputs/derivatives to a frozen snapshot of the previous
stage's model on all earlier collocation points.

Baselines supported through ``distill_method``: ``none`` (expected to
forget), ``replay`` (residual loss on a fixed 20% sample of old points),
and the separate full-budget single-run model.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import datagen
from .collocation import CollocationSet
from .errors import ConfigurationError, SpecificationError
from .fields import evaluate_field
from .jets import propagate
from .losses import LossSpec, Method, composite_breakdown, domain_loss
from .network import Network, init_network
from .problems import Problem
from .train import TrainConfig, train

DISTILL_METHODS = ("DERL", "OUTL", "SOB", "HESL", "DER_HESL", "SOB_HES",
                   "none", "replay")

_DISTILL_USES = {
    "DERL": ("jacobians",),
    "OUTL": ("values",),
    "SOB": ("values", "jacobians"),
    "HESL": ("hessians",),
    "DER_HESL": ("jacobians", "hessians"),
    "SOB_HES": ("values", "jacobians", "hessians"),
}


@dataclass
class TeacherSnapshot:
    """Frozen teacher evaluations on fixed points, used as targets."""

    points: np.ndarray
    values: Optional[np.ndarray] = None
    jacobians: Optional[np.ndarray] = None
    hessians: Optional[np.ndarray] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.provenance:
            raise ConfigurationError("snapshot provenance must not be empty")
        n = self.points.shape[0]
        for name in ("values", "jacobians", "hessians"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[0] != n:
                raise ConfigurationError(f"snapshot {name} rows != points rows")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def to_collocation(self) -> CollocationSet:
        return CollocationSet(self.points.copy(), "interior",
                              None if self.values is None else self.values.copy(),
                              None if self.jacobians is None
                              else self.jacobians.copy(),
                              None if self.hessians is None
                              else self.hessians.copy(),
                              dict(self.provenance))

    def save(self, path) -> None:
        self.to_collocation().save(path)

    @staticmethod
    def load(path) -> "TeacherSnapshot":
        cs = CollocationSet.load(path)
        return TeacherSnapshot(cs.points, cs.values, cs.jacobians, cs.hessians,
                               provenance=cs.meta)


def snapshot_teacher(net: Network, points, orders=(0, 1),
                     stage_id: str = "stage") -> TeacherSnapshot:
    """Evaluate a frozen teacher on fixed points; deep copies throughout."""
    orders = set(orders)
    if not orders <= {0, 1, 2}:
        raise ConfigurationError(f"orders must be a subset of {{0,1,2}}, "
                                 f"got {sorted(orders)}")
    pts = np.array(points, dtype=np.float64, copy=True)
    outs = propagate(net, pts, order=max(orders)) if orders else None
    return TeacherSnapshot(
        points=pts,
        values=outs.values.copy() if 0 in orders else None,
        jacobians=outs.jacobian.copy() if 1 in orders else None,
        hessians=outs.hessian.copy() if 2 in orders else None,
        provenance={"stage_id": stage_id, "teacher_hash": net.param_hash()},
    )


def required_snapshot_orders(method: str):
    uses = _DISTILL_USES.get(method, ())
    return tuple({"values": 0, "jacobians": 1, "hessians": 2}[u] for u in uses)


def distillation_term(method: str, snapshot: Optional[TeacherSnapshot],
                      problem: Problem, template: Network,
                      weight: float = 1.0,
                      replay_points: Optional[np.ndarray] = None):
    """Build the extra loss term callable for one transfer stage.

    ``template`` fixes the student architecture used to rebuild networks
    from parameter vectors.  Returns None for ``method="none"``.
    """
    if method == "none":
        return None
    if method == "replay":
        if replay_points is None:
            raise SpecificationError("replay needs a fixed set of old points")
        pts = np.array(replay_points, copy=True)

        def replay_term(params, with_grad):
            net = template.with_params(params)
            _, res, grad = domain_loss(net, pts, problem=problem,
                                       residual_weight=weight,
                                       with_grad=with_grad)
            return res, grad

        return replay_term
    if method not in _DISTILL_USES:
        raise ConfigurationError(f"unknown distillation method {method!r}; "
                                 f"choose from {DISTILL_METHODS}")
    uses = _DISTILL_USES[method]
    for name in uses:
        if getattr(snapshot, name) is None:
            raise SpecificationError(
                f"distillation method {method} needs snapshot array {name!r}")
    kwargs = {}
    if "values" in uses:
        kwargs.update(value_target=snapshot.values, value_weight=weight)
    if "jacobians" in uses:
        kwargs.update(jacobian_target=snapshot.jacobians,
                      jacobian_weight=weight)
    if "hessians" in uses:
        kwargs.update(hessian_target=snapshot.hessians, hessian_weight=weight)
    pts = snapshot.points

    def distill_term(params, with_grad):
        net = template.with_params(params)
        sup, _, grad = domain_loss(net, pts, with_grad=with_grad, **kwargs)
        return sup, grad

    return distill_term


@dataclass
class TransferStage:
    """One increment of the domain / time span / parameter range."""

    stage_id: str
    region: dict                      # {"bounds": {...}} | {"param_values": [...]}
    train: TrainConfig
    n_interior: int = 1000
    n_boundary: int = 200
    n_initial: int = 100
    distill_method: str = "DERL"
    distill_weight: float = 1.0
    replay_fraction: float = 0.2

    def __post_init__(self):
        if self.distill_method not in DISTILL_METHODS:
            raise ConfigurationError(
                f"distill_method must be one of {DISTILL_METHODS}")
        if not 0 < self.replay_fraction <= 1:
            raise ConfigurationError("replay_fraction must lie in (0, 1]")


@dataclass
class TransferPlan:
    stages: list
    layer_dims: list
    student_mode: str = "continual"    # or "from_scratch"
    seed: int = 0
    lambda_pde: float = 1.0
    lambda_boundary: float = 1.0
    lambda_initial: float = 1.0
    eval_points: int = 64

    def __post_init__(self):
        if self.student_mode not in ("from_scratch", "continual"):
            raise ConfigurationError("student_mode must be from_scratch or "
                                     "continual")
        if len(self.stages) < 1:
            raise ConfigurationError("a plan needs at least one stage")
        _check_disjoint(self.stages)


def _check_disjoint(stages):
    """Stage regions must not overlap (they partition the growth)."""
    bounds = [s.region.get("bounds") for s in stages]
    for i in range(len(stages)):
        for j in range(i + 1, len(stages)):
            if bounds[i] and bounds[j]:
                shared = set(bounds[i]) & set(bounds[j])
                overlap = all(
                    min(bounds[i][c][1], bounds[j][c][1])
                    - max(bounds[i][c][0], bounds[j][c][0]) > 1e-12
                    for c in shared) if shared else False
                if shared and overlap:
                    raise ConfigurationError(
                        f"stages {stages[i].stage_id!r} and "
                        f"{stages[j].stage_id!r} overlap")
            pv_i = stages[i].region.get("param_values")
            pv_j = stages[j].region.get("param_values")
            if pv_i is not None and pv_j is not None:
                a = {tuple(np.round(v, 12)) for v in np.atleast_2d(pv_i)}
                b = {tuple(np.round(v, 12)) for v in np.atleast_2d(pv_j)}
                if a & b:
                    raise ConfigurationError(
                        f"stages {stages[i].stage_id!r} and "
                        f"{stages[j].stage_id!r} share parameter values")


def _region_bounds(problem, region) -> list:
    bounds = [list(b) for b in problem.spec.domain]
    for name, (lo, hi) in region.get("bounds", {}).items():
        idx = problem.spec.coords.index(name)
        bounds[idx] = [lo, hi]
    return bounds


def _cumulative_bounds(problem, stages) -> list:
    out = None
    for stage in stages:
        b = _region_bounds(problem, stage.region)
        if out is None:
            out = [list(x) for x in b]
        else:
            out = [[min(lo1, lo2), max(hi1, hi2)]
                   for (lo1, hi1), (lo2, hi2) in zip(out, b)]
    return out


def _sample_in_bounds(bounds, n, rng):
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return rng.uniform(lo, hi, size=(n, len(bounds)))


def _stage_sets(problem, plan, stage, cumulative_stages, rng):
    """Collocation sets for one stage: new-region interior, boundary of the
    cumulative region, and the initial slice."""
    spec = problem.spec
    region = stage.region
    pts = _sample_in_bounds(_region_bounds(problem, region), stage.n_interior,
                            rng)
    if "param_values" in region:
        pts = datagen.attach_parameters(
            pts[:, :], problem, np.atleast_2d(region["param_values"]))
    interior = CollocationSet(pts, "interior")

    cum_bounds = _cumulative_bounds(problem, cumulative_stages)
    bpts = _sample_in_bounds(cum_bounds, stage.n_boundary, rng)
    spatial = [i for i in range(spec.input_dim)
               if i != spec.time_index and i not in spec.param_indices]
    boundary = None
    if spec.boundary_kind == "periodic":
        axis = spec.third_axis
        bpts[:, axis] = spec.domain[axis][0]
        boundary = CollocationSet(bpts, "boundary")
    elif spec.boundary_kind == "dirichlet":
        # pin to the faces of the cumulative region; the problem's
        # boundary-value function supplies targets there
        which = rng.integers(0, len(spatial), size=stage.n_boundary)
        side = rng.integers(0, 2, size=stage.n_boundary)
        for i, (w, s) in enumerate(zip(which, side)):
            ax = spatial[w]
            bpts[i, ax] = cum_bounds[ax][s]
        boundary = CollocationSet(bpts, "boundary",
                                  problem.boundary_values(bpts))
    initial = None
    if spec.time_index is not None and stage.n_initial > 0:
        ipts = _sample_in_bounds(cum_bounds, stage.n_initial, rng)
        ipts[:, spec.time_index] = spec.domain[spec.time_index][0]
        initial = CollocationSet(ipts, "initial", problem.initial_values(ipts))
    return {"interior": interior, "boundary": boundary, "initial": initial}


def student_loss(stage: TransferStage, student: Network,
                 snapshot: Optional[TeacherSnapshot], new_region_sets: dict,
                 problem: Problem, plan: Optional[TransferPlan] = None,
                 replay_points=None) -> float:
    """Residual loss on the new region plus the stage's distillation term."""
    lam = dict(lambda_domain=plan.lambda_pde if plan else 1.0,
               lambda_boundary=plan.lambda_boundary if plan else 1.0,
               lambda_initial=plan.lambda_initial if plan else 1.0)
    spec = LossSpec(method=Method.PINN, **lam)
    bd = composite_breakdown(spec, problem, new_region_sets["interior"],
                             new_region_sets.get("boundary"),
                             new_region_sets.get("initial"), student)
    total = bd.total
    term = distillation_term(stage.distill_method, snapshot, problem, student,
                             stage.distill_weight, replay_points)
    if term is not None:
        value, _ = term(student.params_vector(), False)
        total += value
    return float(total)


@dataclass
class StageResult:
    stage_id: str
    net: Network
    metrics_full: dict
    region_errors: dict            # stage_id -> l2_u on that stage's region
    history_len: int


@dataclass
class PipelineResult:
    final_net: Network
    stages: list
    full_baseline: Optional[dict] = None
    manifest: dict = field(default_factory=dict)


def run_transfer_pipeline(plan: TransferPlan, problem: Problem,
                          test_grid: CollocationSet,
                          out_dir=None, include_full_baseline: bool = True,
                          distill_weight_override=None) -> PipelineResult:
    """Execute the staged pipeline and (optionally) the full-budget baseline.

    ``test_grid`` carries reference values over the full domain; per-stage
    metrics are computed on it and on its restriction to each stage's
    region, so forgetting is visible stage by stage.
    """
    from .evaluation import evaluate

    rng_master = np.random.default_rng([plan.seed, 0x7247])
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    spec_pinn = LossSpec(method=Method.PINN, lambda_domain=plan.lambda_pde,
                         lambda_boundary=plan.lambda_boundary,
                         lambda_initial=plan.lambda_initial)
    results = []
    manifest = {"stages": [], "student_mode": plan.student_mode,
                "seed": plan.seed}
    net = init_network(plan.layer_dims, seed=plan.seed)
    accumulated_points = None
    snapshot = None
    stage_region_masks = [_region_mask(problem, s.region, test_grid.points)
                          for s in plan.stages]

    for k, stage in enumerate(plan.stages):
        rng = np.random.default_rng([plan.seed, 0x57A6, k])
        sets = _stage_sets(problem, plan, stage, plan.stages[:k + 1], rng)
        if k == 0:
            student = net
            extra = []
        else:
            student = (init_network(plan.layer_dims,
                                    seed=plan.seed + 1000 * k)
                       if plan.student_mode == "from_scratch" else net.copy())
            method = stage.distill_method
            weight = (distill_weight_override
                      if distill_weight_override is not None
                      else stage.distill_weight)
            replay_points = None
            if method == "replay":
                n_old = accumulated_points.shape[0]
                n_take = int(np.ceil(stage.replay_fraction * n_old))
                idx = np.random.default_rng([plan.seed, 0x3E91, k]) \
                    .choice(n_old, size=n_take, replace=False)
                replay_points = accumulated_points[idx]
            term = distillation_term(method, snapshot, problem, student,
                                     weight, replay_points)
            extra = [term] if term is not None else []

        cfg = replace(stage.train, seed=stage.train.seed + k)
        trained, history = train(student, spec_pinn, sets, cfg, problem,
                                 extra_terms=tuple(extra))
        net = trained

        # snapshot on the union of all interior points seen so far
        pts = sets["interior"].points
        accumulated_points = pts if accumulated_points is None else \
            np.concatenate([accumulated_points, pts])
        next_method = plan.stages[k + 1].distill_method \
            if k + 1 < len(plan.stages) else None
        orders = set(required_snapshot_orders(next_method or "SOB")) | {0, 1}
        snapshot = snapshot_teacher(net, accumulated_points,
                                    orders=sorted(orders),
                                    stage_id=stage.stage_id)

        report = evaluate(problem, net, test_grid)
        region_errors = {}
        for j in range(k + 1):
            mask = stage_region_masks[j]
            if mask.any():
                diff = evaluate_field(net, test_grid.points[mask]).values \
                    - test_grid.values[mask]
                region_errors[plan.stages[j].stage_id] = float(
                    np.sum(diff ** 2) / mask.sum())
        results.append(StageResult(stage.stage_id, net,
                                   report.to_dict(), region_errors,
                                   len(history)))
        manifest["stages"].append(_stage_artifacts(
            out_dir, stage, net, snapshot, report, history, region_errors))

    full_baseline = None
    if include_full_baseline:
        full_baseline = _full_budget_baseline(plan, problem, test_grid,
                                              spec_pinn, rng_master)
        manifest["full_baseline"] = {"l2_u": full_baseline["l2_u"]}

    if out_dir is not None:
        with open(out_dir / "pipeline_manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return PipelineResult(net, results, full_baseline, manifest)


def _region_mask(problem, region, points):
    bounds = _region_bounds(problem, region)
    mask = np.ones(points.shape[0], dtype=bool)
    if "bounds" in region:
        names = set(region["bounds"])
        for i, coord in enumerate(problem.spec.coords):
            if coord in names:
                mask &= (points[:, i] >= bounds[i][0]) \
                    & (points[:, i] <= bounds[i][1])
    if "param_values" in region:
        idx = list(problem.spec.param_indices)
        targets = np.atleast_2d(region["param_values"])
        ok = np.zeros(points.shape[0], dtype=bool)
        for pv in targets:
            ok |= np.all(np.abs(points[:, idx] - pv) < 1e-9, axis=1)
        mask &= ok
    return mask


def _stage_artifacts(out_dir, stage, net, snapshot, report, history,
                     region_errors):
    entry = {"stage_id": stage.stage_id,
             "distill_method": stage.distill_method,
             "teacher_hash": snapshot.provenance["teacher_hash"],
             "region_errors": region_errors}
    if out_dir is None:
        return entry
    ckpt = out_dir / f"{stage.stage_id}_checkpoint.json"
    net.save(ckpt)
    snap_path = out_dir / f"{stage.stage_id}_snapshot.csv"
    snapshot.save(snap_path)
    metrics_path = out_dir / f"{stage.stage_id}_metrics.json"
    report.save(metrics_path)
    from .train import write_history_csv
    write_history_csv(history, out_dir / f"{stage.stage_id}_history.csv")
    entry["artifacts"] = {
        p.name: _sha256(p) for p in (ckpt, snap_path, metrics_path)
    }
    return entry


def _full_budget_baseline(plan, problem, test_grid, spec_pinn, rng):
    """Single model trained on the whole domain for the summed budget."""
    from .evaluation import evaluate

    total_epochs = sum(s.train.epochs for s in plan.stages)
    total_iters = sum(s.train.lbfgs_iters for s in plan.stages)
    cfg = replace(plan.stages[0].train, epochs=total_epochs,
                  lbfgs_iters=total_iters)
    n_int = sum(s.n_interior for s in plan.stages)
    stage_full = TransferStage("full", {"bounds": {}}, cfg,
                               n_interior=n_int,
                               n_boundary=plan.stages[-1].n_boundary,
                               n_initial=plan.stages[-1].n_initial,
                               distill_method="none")
    sets = _stage_sets(problem, plan, stage_full, [stage_full],
                       np.random.default_rng([plan.seed, 0xF011]))
    net0 = init_network(plan.layer_dims, seed=plan.seed + 7)
    trained, _ = train(net0, spec_pinn, sets, cfg, problem)
    report = evaluate(problem, trained, test_grid)
    return {"net": trained, "l2_u": report.to_dict()["l2_u"],
            "report": report.to_dict()}


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()
