"""Optimization loop: Adam and L-BFGS phases over collocation data.

Training is fully deterministic given (seed, config, data): batch order
comes from a counter-based RNG keyed on (seed, epoch) and both optimizers
are straight numpy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .collocation import CollocationSet
from .errors import ConfigurationError, NumericalError
from .losses import LossSpec, composite_breakdown
from .network import Network
from .problems import Problem

HISTORY_COLUMNS = ("epoch", "total_loss", "domain_term", "pde_term", "bc_term",
                   "ic_term", "grad_norm", "wall_ms")


@dataclass
class TrainConfig:
    """Optimizer schedule and data-handling knobs for one training run."""

    optimizer: str = "lbfgs"            # "adam" | "lbfgs" | "adam+lbfgs"
    learning_rate: float = 1e-3
    lr_decay: Optional[float] = None    # multiplicative factor
    lr_decay_every: int = 1             # epochs between decay applications
    epochs: int = 0                     # Adam epochs
    lbfgs_iters: int = 0
    batch_size: Optional[int] = None    # None: full batch
    lbfgs_memory: int = 10
    seed: int = 0
    noise_sigma: float = 0.0
    fd_step: float = 1e-3               # h used when targets are empirical

    def __post_init__(self):
        if self.optimizer not in ("adam", "lbfgs", "adam+lbfgs"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.lr_decay is not None and not 0 < self.lr_decay <= 1:
            raise ConfigurationError("lr_decay must lie in (0, 1]")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")
        if self.fd_step <= 0:
            raise ConfigurationError("fd_step must be > 0")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Parameters plus first/second moment accumulators."""

    params: np.ndarray
    m: np.ndarray = None
    v: np.ndarray = None
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros_like(self.params)
        if self.v is None:
            self.v = np.zeros_like(self.params)


def adam_step(state: AdamState, gradient: np.ndarray, lr: float) -> AdamState:
    """One bias-corrected Adam update; returns a fresh state."""
    gradient = np.asarray(gradient, dtype=np.float64)
    if not np.all(np.isfinite(gradient)):
        raise NumericalError("non-finite gradient passed to adam_step")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * gradient
    v = state.beta2 * state.v + (1.0 - state.beta2) * gradient ** 2
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    params = state.params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return AdamState(params, m, v, t, state.beta1, state.beta2, state.eps)


# ---------------------------------------------------------------------------
# L-BFGS with a strong-Wolfe line search
# ---------------------------------------------------------------------------

@dataclass
class LBFGSRecord:
    iteration: int
    loss: float
    grad_norm: float
    step_size: float
    flag: str = ""


def _cubic_min(a, fa, dfa, b, fb, dfb):
    """Minimizer of the cubic through (a, fa, dfa), (b, fb, dfb)."""
    d1 = dfa + dfb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - dfa * dfb
    if disc < 0:
        return None
    rad = np.sqrt(disc)
    denom = dfb - dfa + 2.0 * rad
    if denom == 0:
        return None
    return b - (b - a) * (dfb + rad - d1) / denom


def _zoom(phi, alo, flo, dlo, ahi, fhi, dhi, f0, df0, c1, c2, max_iter=20):
    for _ in range(max_iter):
        cand = _cubic_min(alo, flo, dlo, ahi, fhi, dhi)
        width = abs(ahi - alo)
        lo, hi = min(alo, ahi), max(alo, ahi)
        if cand is None or not np.isfinite(cand) or cand <= lo + 0.1 * width \
                or cand >= hi - 0.1 * width:
            cand = 0.5 * (alo + ahi)
        fc, dc = phi(cand)
        if fc > f0 + c1 * cand * df0 or fc >= flo:
            ahi, fhi, dhi = cand, fc, dc
        else:
            if abs(dc) <= -c2 * df0:
                return cand, fc, dc, True
            if dc * (ahi - alo) >= 0:
                ahi, fhi, dhi = alo, flo, dlo
            alo, flo, dlo = cand, fc, dc
        if width < 1e-16:
            break
    return alo, flo, dlo, flo < f0 + c1 * alo * df0


def strong_wolfe_search(phi: Callable, f0: float, df0: float, alpha0: float = 1.0,
                        c1: float = 1e-4, c2: float = 0.9, alpha_max: float = 1e6,
                        max_iter: int = 25):
    """Bracket + zoom line search enforcing the strong Wolfe conditions.

    ``phi(alpha)`` returns ``(f, df)`` along the search ray.  Returns
    ``(alpha, f, df, ok)``; ``ok`` is False on line-search failure.
    """
    if df0 >= 0:
        return 0.0, f0, df0, False
    a_prev, f_prev, d_prev = 0.0, f0, df0
    alpha = alpha0
    for it in range(max_iter):
        fa, da = phi(alpha)
        if not np.isfinite(fa):
            alpha = 0.5 * (a_prev + alpha)
            continue
        if fa > f0 + c1 * alpha * df0 or (it > 0 and fa >= f_prev):
            return _zoom(phi, a_prev, f_prev, d_prev, alpha, fa, da, f0, df0,
                         c1, c2)
        if abs(da) <= -c2 * df0:
            return alpha, fa, da, True
        if da >= 0:
            return _zoom(phi, alpha, fa, da, a_prev, f_prev, d_prev, f0, df0,
                         c1, c2)
        a_prev, f_prev, d_prev = alpha, fa, da
        alpha = min(2.0 * alpha, alpha_max)
        if alpha >= alpha_max:
            break
    return a_prev, f_prev, d_prev, a_prev > 0


def lbfgs_minimize(loss_fn: Callable, net: Network, max_iters: int,
                   memory: int = 10, grad_tol: float = 1e-9,
                   c1: float = 1e-4, c2: float = 0.9):
    """Limited-memory BFGS with strong-Wolfe steps on a network.

    ``loss_fn(params) -> (value, grad)`` must be deterministic over the
    full dataset.  Accepted losses are monotone nonincreasing; on a
    line-search failure the best iterate so far is returned and the event
    is flagged in the history.

    Returns ``(net, records)`` with one :class:`LBFGSRecord` per accepted
    iteration (plus the starting point).
    """
    x = net.params_vector()
    f, g = loss_fn(x)
    gnorm = float(np.linalg.norm(g))
    records = [LBFGSRecord(0, float(f), gnorm, 0.0, "start")]
    best_x, best_f = x.copy(), f

    s_hist, y_hist, rho_hist = [], [], []
    evals = {"phi": 0}

    for it in range(1, max_iters + 1):
        if gnorm <= grad_tol:
            records.append(LBFGSRecord(it, float(f), gnorm, 0.0, "converged"))
            break
        # two-loop recursion
        q = -g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist),
                             reversed(rho_hist)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if y_hist:
            q *= (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist),
                                  reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        p = q
        dphi0 = float(p @ g)
        if dphi0 >= 0:                       # not a descent direction: reset
            s_hist, y_hist, rho_hist = [], [], []
            p = -g
            dphi0 = float(p @ g)

        state = {}

        def phi(alpha):
            evals["phi"] += 1
            fv, gv = loss_fn(x + alpha * p)
            state[alpha] = gv
            return fv, float(gv @ p)

        alpha0 = 1.0 if s_hist else min(1.0, 1.0 / max(gnorm, 1e-12))
        alpha, f_new, _, ok = strong_wolfe_search(phi, f, dphi0, alpha0,
                                                  c1=c1, c2=c2)
        if not ok or alpha <= 0 or f_new >= f:
            records.append(LBFGSRecord(it, float(f), gnorm, 0.0,
                                       "line_search_failed"))
            break
        g_new = state[alpha]
        x_new = x + alpha * p
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        if f < best_f:
            best_f, best_x = f, x.copy()
        records.append(LBFGSRecord(it, float(f), gnorm, float(alpha)))

    return net.with_params(best_x), records


# ---------------------------------------------------------------------------
# Noise injection
# ---------------------------------------------------------------------------

def add_noise(cset: CollocationSet, sigma: float, seed: int) -> CollocationSet:
    """Add iid zero-mean Gaussian noise to value and jacobian targets.

    Points (and hessian targets) are untouched; ``sigma = 0`` returns a
    bitwise-identical copy.  Deterministic given the seed.
    """
    if sigma < 0:
        raise ConfigurationError("sigma must be >= 0")
    out = cset.copy()
    if sigma == 0:
        return out
    rng = np.random.default_rng([int(seed), 0x6E01])
    if out.values is not None:
        out.values = out.values + sigma * rng.standard_normal(out.values.shape)
    if out.jacobians is not None:
        out.jacobians = out.jacobians + sigma * rng.standard_normal(
            out.jacobians.shape)
    return out


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------

def train(net: Network, spec: LossSpec, data: dict, cfg: TrainConfig,
          problem: Problem, extra_terms=()):
    """Run the configured Adam and/or L-BFGS phases.

    ``data`` maps ``"interior"`` (required), ``"boundary"`` and
    ``"initial"`` (optional) to collocation sets.  ``extra_terms`` are
    callables ``term(params, with_grad) -> (value, grad_or_None)`` added
    to every loss evaluation (distillation and replay terms plug in
    here).  Returns ``(trained_net, history)`` where history rows carry
    the composite loss and its components per epoch / iteration.
    """
    interior = data["interior"]
    boundary = data.get("boundary")
    initial = data.get("initial")
    if cfg.noise_sigma > 0:
        interior = add_noise(interior, cfg.noise_sigma, cfg.seed)
    if cfg.batch_size is not None and cfg.batch_size > interior.n:
        raise ConfigurationError(f"batch_size {cfg.batch_size} exceeds the "
                                 f"{interior.n} interior points")

    history = []
    params = net.params_vector()
    t_start = time.perf_counter()

    def wall_ms():
        return (time.perf_counter() - t_start) * 1e3

    def with_extras(bd, p, with_grad=True):
        for term in extra_terms:
            value, grad = term(p, with_grad)
            bd.total += value
            if with_grad:
                bd.grad = bd.grad + grad
        return bd

    def full_loss(p):
        bd = composite_breakdown(spec, problem, interior, boundary, initial,
                                 net.with_params(p), with_grad=True)
        return with_extras(bd, p)

    if cfg.optimizer in ("adam", "adam+lbfgs") and cfg.epochs > 0:
        state = AdamState(params)
        lr = cfg.learning_rate
        n = interior.n
        bs = cfg.batch_size or n
        last_good = state.params.copy()
        aborted = False
        for epoch in range(cfg.epochs):
            order = np.random.default_rng([cfg.seed, 2654435761, epoch]) \
                .permutation(n)
            sums = np.zeros(5)
            gnorm = 0.0
            n_batches = 0
            for lo in range(0, n, bs):
                batch = interior.subset(order[lo:lo + bs])
                try:
                    bd = composite_breakdown(spec, problem, batch, boundary,
                                             initial,
                                             net.with_params(state.params),
                                             with_grad=True)
                    bd = with_extras(bd, state.params)
                    state = adam_step(state, bd.grad, lr)
                except NumericalError:
                    aborted = True
                    break
                sums += (bd.total, bd.domain, bd.pde, bd.boundary, bd.initial)
                gnorm = float(np.linalg.norm(bd.grad))
                n_batches += 1
                last_good = state.params.copy()
            if aborted:
                history.append({"epoch": epoch, "total_loss": np.nan,
                                "domain_term": np.nan, "pde_term": np.nan,
                                "bc_term": np.nan, "ic_term": np.nan,
                                "grad_norm": np.nan, "wall_ms": wall_ms()})
                state = AdamState(last_good)
                break
            mean = sums / max(n_batches, 1)
            history.append({"epoch": epoch, "total_loss": mean[0],
                            "domain_term": mean[1], "pde_term": mean[2],
                            "bc_term": mean[3], "ic_term": mean[4],
                            "grad_norm": gnorm, "wall_ms": wall_ms()})
            if cfg.lr_decay is not None and (epoch + 1) % cfg.lr_decay_every == 0:
                lr *= cfg.lr_decay
        params = state.params

    if cfg.optimizer in ("lbfgs", "adam+lbfgs") and cfg.lbfgs_iters > 0:
        offset = len(history)

        def vec_loss(p):
            bd = full_loss(p)
            return bd.total, bd.grad

        trained, records = lbfgs_minimize(vec_loss, net.with_params(params),
                                          cfg.lbfgs_iters,
                                          memory=cfg.lbfgs_memory)
        params = trained.params_vector()
        for rec in records:
            history.append({"epoch": offset + rec.iteration,
                            "total_loss": rec.loss, "domain_term": np.nan,
                            "pde_term": np.nan, "bc_term": np.nan,
                            "ic_term": np.nan, "grad_norm": rec.grad_norm,
                            "wall_ms": wall_ms()})

    final = net.with_params(params)
    if history:
        bd = composite_breakdown(spec, problem, interior, boundary, initial,
                                 final, with_grad=False)
        bd = with_extras(bd, params, with_grad=False)
        history[-1].update(total_loss=bd.total, domain_term=bd.domain,
                           pde_term=bd.pde, bc_term=bd.boundary,
                           ic_term=bd.initial)
    return final, history


def write_history_csv(history, path) -> None:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for row in history:
            fh.write(",".join(repr(float(row[c])) if c != "epoch"
                              else str(row[c]) for c in HISTORY_COLUMNS) + "\n")
