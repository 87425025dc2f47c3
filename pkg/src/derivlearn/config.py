"""Experiment configuration: JSON schema, validation with field paths,
environment-variable overrides, and desk-scale vs full-scale merging.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from .errors import ConfigurationError
from .losses import REQUIRED_TARGETS, Method

ENV_PREFIX = "DERIVLEARN_"
SPEC_VERSION = 1

_DEFAULTS = {
    "seed": 0,
    "output_dir": None,
    "problem": {"name": None, "params": {}},
    "data": {
        "n_interior": 1000, "n_boundary": 200, "n_initial": 0,
        "derivative_source": "analytic", "fd_step": 1e-3,
        "noise_sigma": 0.0, "include_hessians": False,
        "sampling": "random", "downsample": None, "solver": {},
        "param_split": None, "n_trajectories": 30, "traj_subsample": 10,
        "test_grid": {"n_per_axis": 64},
    },
    "model": {"hidden_layers": [50, 50, 50, 50]},
    "loss": {"method": "DERL", "lambda_domain": 1.0, "lambda_pde": 1.0,
             "lambda_boundary": 1.0, "lambda_initial": 1.0},
    "train": {"optimizer": "lbfgs", "lbfgs_iters": 100, "epochs": 0,
              "batch_size": None, "learning_rate": 1e-3, "lr_decay": None,
              "lr_decay_every": 1},
    "transfer": None,
    "full_scale": None,
}


class ConfigError(ConfigurationError):
    """Invalid experiment config; carries the offending field path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _parse_env_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_env_overrides(cfg: dict, environ=None) -> dict:
    """Apply ``DERIVLEARN_a__b__c=value`` overrides (values parse as JSON)."""
    environ = os.environ if environ is None else environ
    out = copy.deepcopy(cfg)
    for key, raw in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].split("__")
        node = out
        for part in path[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[path[-1]] = _parse_env_value(raw)
    return out


def load_config(path, full_scale: bool = False, env: bool = True,
                seed_override=None) -> dict:
    """Load, merge defaults, apply overrides, and validate a config file."""
    path = Path(path)
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(str(path), "config file not found") from None
    except json.JSONDecodeError as err:
        raise ConfigError(str(path), f"not valid JSON ({err})") from None
    if raw.get("spec_version") != SPEC_VERSION:
        raise ConfigError("spec_version",
                          f"expected {SPEC_VERSION}, got "
                          f"{raw.get('spec_version')!r}")
    cfg = _deep_merge(_DEFAULTS, {k: v for k, v in raw.items()
                                  if k != "spec_version"})
    if full_scale and cfg.get("full_scale"):
        cfg = _deep_merge(cfg, cfg["full_scale"])
    cfg.pop("full_scale", None)
    if env:
        cfg = apply_env_overrides(cfg)
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    validate_config(cfg)
    return cfg


def _require(cond, path, message):
    if not cond:
        raise ConfigError(path, message)


def validate_config(cfg: dict) -> None:
    from .problems import PROBLEM_NAMES, make_problem

    _require(isinstance(cfg.get("seed"), int), "seed", "must be an integer")
    name = cfg["problem"].get("name")
    _require(isinstance(name, str) and name, "problem.name",
             f"must name one of {PROBLEM_NAMES}")
    try:
        problem = make_problem(name, **cfg["problem"].get("params", {}))
    except (ConfigurationError, TypeError) as err:
        raise ConfigError("problem", str(err)) from None

    data = cfg["data"]
    for key in ("n_interior", "n_boundary", "n_initial"):
        _require(isinstance(data.get(key), int) and data[key] >= 0,
                 f"data.{key}", "must be a nonnegative integer")
    src = data.get("derivative_source")
    _require(src in ("analytic", "empirical", "solver", "none"),
             "data.derivative_source",
             "must be analytic | empirical | solver | none")
    _require(data.get("fd_step", 0) > 0, "data.fd_step", "must be > 0")
    _require(data.get("noise_sigma", 0) >= 0, "data.noise_sigma",
             "must be >= 0")
    _require(data.get("sampling") in ("random", "grid"), "data.sampling",
             "must be random | grid")

    try:
        method = Method.parse(cfg["loss"].get("method"))
    except ConfigurationError as err:
        raise ConfigError("loss.method", str(err)) from None
    for key in ("lambda_domain", "lambda_pde", "lambda_boundary",
                "lambda_initial"):
        v = cfg["loss"].get(key)
        _require(isinstance(v, (int, float)) and v >= 0, f"loss.{key}",
                 "must be a nonnegative number")
    if "jacobians" in REQUIRED_TARGETS[method] and src == "none":
        raise ConfigError("data.derivative_source",
                          f"method {method.value} trains on jacobian targets "
                          f"but derivative_source is 'none'")
    if "hessians" in REQUIRED_TARGETS[method] and not data.get(
            "include_hessians"):
        raise ConfigError("data.include_hessians",
                          f"method {method.value} trains on hessian targets")
    if problem.spec.reference == "analytic" and src == "solver":
        raise ConfigError("data.derivative_source",
                          f"{name} has no reference solver")

    model = cfg["model"]
    hl = model.get("hidden_layers")
    _require(isinstance(hl, list) and hl
             and all(isinstance(h, int) and h >= 1 for h in hl),
             "model.hidden_layers", "must be a nonempty list of widths")

    tr = cfg["train"]
    _require(tr.get("optimizer") in ("adam", "lbfgs", "adam+lbfgs"),
             "train.optimizer", "must be adam | lbfgs | adam+lbfgs")
    _require(tr.get("learning_rate", 0) > 0, "train.learning_rate",
             "must be > 0")
    for key in ("lbfgs_iters", "epochs"):
        _require(isinstance(tr.get(key), int) and tr[key] >= 0,
                 f"train.{key}", "must be a nonnegative integer")

    transfer = cfg.get("transfer")
    if transfer is not None:
        _require(isinstance(transfer.get("stages"), list)
                 and transfer["stages"], "transfer.stages",
                 "must be a nonempty list")
        _require(transfer.get("student_mode", "continual")
                 in ("continual", "from_scratch"), "transfer.student_mode",
                 "must be continual | from_scratch")
        for k, st in enumerate(transfer["stages"]):
            _require(isinstance(st.get("region"), dict),
                     f"transfer.stages[{k}].region", "must be a mapping")
            dm = st.get("distill_method", "DERL")
            from .transfer import DISTILL_METHODS
            if k == 0:
                _require(dm in ("none",) or "distill_method" not in st,
                         f"transfer.stages[{k}].distill_method",
                         "stage 1 trains a plain residual model; "
                         "it cannot distill")
            else:
                _require(dm in DISTILL_METHODS,
                         f"transfer.stages[{k}].distill_method",
                         f"must be one of {DISTILL_METHODS}")
