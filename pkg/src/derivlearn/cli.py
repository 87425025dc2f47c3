"""Experiment driver.

Verbs: ``generate`` (datasets only), ``train`` (generate, fit, evaluate),
``transfer`` (staged pipelines), ``evaluate`` (re-score a checkpoint),
``report`` (comparison table across run dirs), ``diff`` (subtract two
error fields).  Any config key can be overridden through environment
variables prefixed ``DERIVLEARN_`` with ``__`` as the path separator.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import datagen
from .config import ConfigError, load_config
from .errors import DerivlearnError
from .evaluation import error_field, evaluate
from .losses import LossSpec, Method
from .network import Network, init_network
from .problems import Problem, make_problem
from .solvers import GridField
from .train import TrainConfig, train, write_history_csv
from .transfer import TransferPlan, TransferStage, run_transfer_pipeline

_PARAM_SPLIT_DEFAULTS = {
    "allen_cahn_1p": {"train": 8, "val": 2, "test": 3},
    "allen_cahn_2p": {"train": 15, "val": 5, "test": 5},
}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _problem_from_config(cfg) -> Problem:
    return make_problem(cfg["problem"]["name"], **cfg["problem"]["params"])


def _param_values(problem, cfg):
    """Train/test parameter splits for parametric problems (seed-fixed)."""
    if not problem.spec.param_indices:
        return None, None
    counts = cfg["data"].get("param_split") or _PARAM_SPLIT_DEFAULTS.get(
        problem.spec.name, {"train": 8, "val": 2, "test": 3})
    split = datagen.parameter_split(problem, counts, cfg["seed"])
    return split["train"], split["test"]


def _generate(cfg, problem, train_params):
    data = cfg["data"]
    return datagen.generate_datasets(
        problem, data["n_interior"], data["n_boundary"], data["n_initial"],
        seed=cfg["seed"], derivative_source=data["derivative_source"],
        fd_step=data["fd_step"], include_hessians=data["include_hessians"],
        solver_cfg=data.get("solver"), param_values=train_params,
        n_trajectories=data.get("n_trajectories", 30),
        traj_subsample=data.get("traj_subsample", 10),
        sampling=data.get("sampling", "random"),
        downsample=data.get("downsample"))


def _test_grid(cfg, problem, datasets, test_params):
    data = cfg["data"]
    n = data["test_grid"]["n_per_axis"]
    return datagen.evaluation_grid(
        problem, n_per_axis=n, reference=datasets.get("reference"),
        param_values=test_params, with_jacobians=problem.spec.reference
        == "analytic", solver_cfg=data.get("solver"), seed=cfg["seed"])


def _reference_gridfield(problem, cfg, datasets):
    """Dense reference grid for error-field maps, when one exists."""
    if datasets.get("reference") is not None:
        return datasets["reference"]
    if problem.spec.reference != "analytic" or problem.spec.param_indices:
        return None
    n = cfg["data"]["test_grid"]["n_per_axis"]
    axes = [np.linspace(lo, hi, n) for lo, hi in problem.spec.domain]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    vals = problem.analytic_solution(pts)
    shape = tuple(len(a) for a in axes)
    data = vals.reshape(shape + (vals.shape[1],)) if vals.shape[1] > 1 \
        else vals.reshape(shape)
    return GridField(axes, data)


def _save_datasets(out: Path, datasets):
    ds_dir = out / "datasets"
    ds_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in ("interior", "boundary", "initial"):
        cs = datasets.get(name)
        if cs is not None:
            path = ds_dir / f"{name}.csv"
            cs.save(path)
            paths[name] = path
    if datasets.get("reference") is not None:
        path = ds_dir / "reference.bin"
        datasets["reference"].save(path)
        paths["reference"] = path
    return paths


def run_experiment(cfg, out_dir) -> dict:
    """generate -> train -> evaluate -> artifacts, for one config + seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = _problem_from_config(cfg)
    train_params, test_params = _param_values(problem, cfg)
    datasets = _generate(cfg, problem, train_params)
    dataset_paths = _save_datasets(out, datasets)

    m = problem.spec.output_dim
    layer_dims = [problem.spec.input_dim, *cfg["model"]["hidden_layers"], m]
    net = init_network(layer_dims, seed=cfg["seed"])
    spec = LossSpec(**cfg["loss"])
    tr = cfg["train"]
    tcfg = TrainConfig(optimizer=tr["optimizer"],
                       learning_rate=tr["learning_rate"],
                       lr_decay=tr["lr_decay"],
                       lr_decay_every=tr.get("lr_decay_every", 1),
                       epochs=tr["epochs"], lbfgs_iters=tr["lbfgs_iters"],
                       batch_size=tr["batch_size"], seed=cfg["seed"],
                       noise_sigma=cfg["data"]["noise_sigma"],
                       fd_step=cfg["data"]["fd_step"])
    data = {"interior": datasets["interior"],
            "boundary": datasets["boundary"],
            "initial": datasets["initial"]}
    trained, history = train(net, spec, data, tcfg, problem)

    test = _test_grid(cfg, problem, datasets, test_params)
    report = evaluate(problem, trained, test, seed=cfg["seed"])

    trained.save(out / "checkpoint.json")
    write_history_csv(history, out / "history.csv")
    report.save(out / "metrics.json")
    ref_grid = _reference_gridfield(problem, cfg, datasets)
    if ref_grid is not None:
        error_field(problem, trained, ref_grid).save(out / "error_field.bin")

    manifest = {
        "config": cfg,
        "dataset_manifest": datasets["manifest"],
        "problem": problem.spec.name,
        "method": spec.method.value,
        "seed": cfg["seed"],
        "artifacts": {p.name: _sha256(p) for p in sorted(out.glob("*.*"))
                      if p.name != "manifest.json"},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return report.to_dict()


def _build_plan(cfg) -> TransferPlan:
    t = cfg["transfer"]
    base_train = cfg["train"]
    stages = []
    for k, raw in enumerate(t["stages"]):
        tr = {**base_train, **raw.get("train", {})}
        tcfg = TrainConfig(optimizer=tr["optimizer"],
                           learning_rate=tr["learning_rate"],
                           lr_decay=tr["lr_decay"],
                           lr_decay_every=tr.get("lr_decay_every", 1),
                           epochs=tr["epochs"],
                           lbfgs_iters=tr["lbfgs_iters"],
                           batch_size=tr["batch_size"], seed=cfg["seed"])
        stages.append(TransferStage(
            stage_id=raw.get("stage_id", f"stage{k + 1}"),
            region=raw["region"], train=tcfg,
            n_interior=raw.get("n_interior", cfg["data"]["n_interior"]),
            n_boundary=raw.get("n_boundary", cfg["data"]["n_boundary"]),
            n_initial=raw.get("n_initial", cfg["data"]["n_initial"]),
            distill_method=raw.get("distill_method",
                                   "none" if k == 0 else "DERL"),
            distill_weight=raw.get("distill_weight", 1.0),
            replay_fraction=raw.get("replay_fraction", 0.2)))
    return TransferPlan(
        stages=stages,
        layer_dims=[_problem_from_config(cfg).spec.input_dim,
                    *cfg["model"]["hidden_layers"],
                    _problem_from_config(cfg).spec.output_dim],
        student_mode=t.get("student_mode", "continual"), seed=cfg["seed"],
        lambda_pde=t.get("lambda_pde", 1.0),
        lambda_boundary=t.get("lambda_boundary", 1.0),
        lambda_initial=t.get("lambda_initial", 1.0))


def run_transfer_experiment(cfg, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = _problem_from_config(cfg)
    plan = _build_plan(cfg)
    test = datagen.evaluation_grid(
        problem, n_per_axis=cfg["data"]["test_grid"]["n_per_axis"],
        solver_cfg=cfg["data"].get("solver"), seed=cfg["seed"],
        param_values=_param_values(problem, cfg)[1])
    include_full = cfg["transfer"].get("include_full_baseline", True)
    result = run_transfer_pipeline(plan, problem, test, out_dir=out,
                                   include_full_baseline=include_full)
    summary = {
        "final": result.stages[-1].metrics_full,
        "stages": [{"stage_id": s.stage_id, "metrics": s.metrics_full,
                    "region_errors": s.region_errors}
                   for s in result.stages],
    }
    if result.full_baseline is not None:
        summary["full_baseline"] = result.full_baseline["report"]
    with open(out / "metrics.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", required=True, help="experiment config JSON")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    sub.add_argument("--full", action="store_true",
                     help="apply the config's full_scale overrides")
    sub.add_argument("--jobs", type=int, default=1,
                     help="parallel workers for multi-seed configs")


def _seed_worker(args):
    cfg, out_dir, run_fn_name = args
    fn = {"train": run_experiment, "transfer": run_transfer_experiment}[
        run_fn_name]
    return fn(cfg, out_dir)


def _run_with_seeds(cfg, args, run_fn_name: str) -> int:
    seeds = cfg.get("seeds")
    if not seeds:
        fn = {"train": run_experiment, "transfer": run_transfer_experiment}[
            run_fn_name]
        metrics = fn(cfg, args.out)
        print(json.dumps(metrics, indent=2, sort_keys=True, default=str))
        return 0
    jobs = []
    for seed in seeds:
        sub_cfg = dict(cfg, seed=int(seed))
        sub_cfg.pop("seeds", None)
        jobs.append((sub_cfg, str(Path(args.out) / f"seed_{seed}"),
                     run_fn_name))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(_seed_worker, jobs))
    else:
        for job in jobs:
            _seed_worker(job)
    print(f"completed {len(jobs)} runs under {args.out}")
    return 0


def cmd_generate(args) -> int:
    cfg = load_config(args.config, full_scale=args.full,
                      seed_override=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = _problem_from_config(cfg)
    train_params, _ = _param_values(problem, cfg)
    datasets = _generate(cfg, problem, train_params)
    _save_datasets(out, datasets)
    with open(out / "manifest.json", "w") as fh:
        json.dump(datasets["manifest"], fh, indent=2, sort_keys=True,
                  default=str)
    print(f"datasets written to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, full_scale=args.full,
                      seed_override=args.seed)
    return _run_with_seeds(cfg, args, "train")


def cmd_transfer(args) -> int:
    cfg = load_config(args.config, full_scale=args.full,
                      seed_override=args.seed)
    if not cfg.get("transfer"):
        raise ConfigError("transfer", "config has no transfer block")
    return _run_with_seeds(cfg, args, "transfer")


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, full_scale=args.full,
                      seed_override=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = _problem_from_config(cfg)
    net = Network.load(args.checkpoint)
    train_params, test_params = _param_values(problem, cfg)
    datasets = _generate(cfg, problem, train_params)
    test = _test_grid(cfg, problem, datasets, test_params)
    report = evaluate(problem, net, test, seed=cfg["seed"])
    report.save(out / "metrics.json")
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    rows = []
    failed = False
    problems = set()
    for run_dir in args.run_dirs:
        run = Path(run_dir)
        try:
            with open(run / "manifest.json") as fh:
                manifest = json.load(fh)
            with open(run / "metrics.json") as fh:
                metrics = json.load(fh)
        except FileNotFoundError as err:
            print(f"{run}: missing {Path(err.filename).name}",
                  file=sys.stderr)
            failed = True
            continue
        problems.add(manifest["problem"])
        row = {"run": run.name, "method": manifest["method"],
               "seed": manifest["seed"]}
        row.update({k: v for k, v in metrics.items()
                    if isinstance(v, (int, float))})
        rows.append(row)
    if len(problems) > 1:
        print(f"refusing to tabulate runs from different problems: "
              f"{sorted(problems)}", file=sys.stderr)
        return 2
    order = {m.value: k for k, m in enumerate(Method)}
    rows.sort(key=lambda r: (order.get(r["method"], 99), r["seed"], r["run"]))
    columns = ["run", "method", "seed"]
    for row in rows:
        columns += [c for c in row if c not in columns]
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(str(row.get(c, "")) for c in columns))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 1 if failed else 0


def cmd_diff(args) -> int:
    from .evaluation import diff_error_fields
    a = GridField.load(args.field_a)
    b = GridField.load(args.field_b)
    diff_error_fields(a, b).save(args.out)
    print(f"difference field written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="derivlearn",
        description="derivative-supervision experiments on ODE/PDE benchmarks")
    subs = parser.add_subparsers(dest="verb", required=True)

    for verb, fn in (("generate", cmd_generate), ("train", cmd_train),
                     ("transfer", cmd_transfer)):
        sub = subs.add_parser(verb)
        _add_common(sub)
        sub.set_defaults(fn=fn)

    sub = subs.add_parser("evaluate")
    _add_common(sub)
    sub.add_argument("--checkpoint", required=True,
                     help="serialized network JSON")
    sub.set_defaults(fn=cmd_evaluate)

    sub = subs.add_parser("report")
    sub.add_argument("run_dirs", nargs="+")
    sub.add_argument("--out", default=None, help="CSV output path")
    sub.set_defaults(fn=cmd_report)

    sub = subs.add_parser("diff")
    sub.add_argument("field_a")
    sub.add_argument("field_b")
    sub.add_argument("--out", required=True)
    sub.set_defaults(fn=cmd_diff)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except DerivlearnError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
