"""Full-batch and minibatch optimizers over a flat parameter vector.

Each ``*_run`` takes an :class:`Objective`, a starting vector and an
:class:`OptimizerConfig`, and appends one record per iteration to a
:class:`TrainingTrace`.  A trace that arrives empty first receives the record
of the starting point, so ``iter 0`` is always the initial loss.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import linalg as sla

from ..diffcore import ConfigurationError, HvpOracle, NonFiniteError, Objective, _theta_of, as_objective
from .losses import ALMState, advance_alm
from .trace import TrainingTrace

METHODS = ("adam", "lbfgs", "nncg", "alm", "curriculum")

Callback = Callable[[np.ndarray, TrainingTrace], None]


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "lbfgs"
    lr: float = 1.0
    epochs: int = 2000
    # L-BFGS
    history: int = 100
    tol_grad: float = 1e-7
    tol_change: float = 1e-9
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_ls_evals: int = 25
    # NNCG
    nystrom_rank: int = 50
    precond_every: int = 1
    cg_max_iters: int = 50
    cg_tol: float = 1e-8
    armijo_c: float = 1e-4
    armijo_max_halvings: int = 40
    hvp_mode: str = "exact"
    # Adam
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    batch_size: int | None = None
    # ALM
    alm_mu0: float = 2.0
    alm_gamma: float = 1.2
    alm_update_every: int = 2000
    alm_max_updates: int = 50
    # curriculum
    cl_speed: float = 0.05
    cl_stage_epochs: int = 2000
    cl_stages: int | None = None
    # optimizer used inside alm / curriculum
    inner: str = "lbfgs"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown optimizer {self.method!r}; expected one of {METHODS}")
        if self.inner not in ("adam", "lbfgs", "nncg"):
            raise ConfigurationError(f"inner optimizer must be adam, lbfgs or nncg, not {self.inner!r}")
        positive = {
            "lr": self.lr,
            "history": self.history,
            "nystrom_rank": self.nystrom_rank,
            "precond_every": self.precond_every,
            "cg_max_iters": self.cg_max_iters,
            "max_ls_evals": self.max_ls_evals,
            "alm_mu0": self.alm_mu0,
            "alm_update_every": self.alm_update_every,
            "alm_max_updates": self.alm_max_updates,
            "cl_speed": self.cl_speed,
            "cl_stage_epochs": self.cl_stage_epochs,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if min(self.tol_grad, self.tol_change, self.cg_tol) < 0:
            raise ConfigurationError("tolerances must be >= 0")
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ConfigurationError("need 0 < wolfe_c1 < wolfe_c2 < 1")
        if not 0 < self.armijo_c < 1:
            raise ConfigurationError("armijo_c must lie in (0, 1)")
        if not (0 <= self.betas[0] < 1 and 0 <= self.betas[1] < 1):
            raise ConfigurationError("Adam betas must lie in [0, 1)")
        if self.alm_gamma < 1:
            raise ConfigurationError("alm_gamma must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if self.cl_stages is not None and self.cl_stages < 1:
            raise ConfigurationError("cl_stages must be positive")
        if self.hvp_mode not in ("fd", "exact"):
            raise ConfigurationError(f"unknown HVP mode {self.hvp_mode!r}")


def _start(trace: TrainingTrace | None, obj: Objective, theta, tag):
    trace = TrainingTrace() if trace is None else trace
    f, g = obj.value_and_grad(theta)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        trace.status = "diverged"
        raise NonFiniteError(f"non-finite loss at the start of {tag}", theta)
    if not trace.records:
        trace.append(f, np.linalg.norm(g), 0.0, tag)
    return trace, f, g


def _record(trace, theta_new, theta_old, f, g, tag, callback):
    trace.append(f, np.linalg.norm(g), np.linalg.norm(theta_new - theta_old), tag)
    trace.theta = theta_new
    if callback is not None:
        callback(theta_new, trace)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, theta, lr=1e-3, betas=(0.9, 0.999), eps=1e-8) -> "AdamState":
        theta = np.array(theta, dtype=np.float64)
        return cls(theta, np.zeros_like(theta), np.zeros_like(theta), 0, lr, betas[0], betas[1], eps)


def adam_step(state: AdamState, grad) -> AdamState:
    g = np.asarray(grad, dtype=np.float64)
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    theta = state.theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, theta=theta, m=m, v=v, t=t)


def adam_run(
    loss_fn,
    params,
    config: OptimizerConfig,
    trace: TrainingTrace | None = None,
    stage_tag: str = "adam",
    callback: Callback | None = None,
    batches: Callable[[np.random.Generator], list[Objective]] | None = None,
    seed: int = 0,
) -> TrainingTrace:
    """``epochs`` passes of Adam.

    Without ``batches`` each epoch is a single full-batch step.  Otherwise
    ``batches(rng)`` returns the per-step objectives of one epoch (e.g. the
    same loss with different minibatch masks).  Logged losses are those of
    the objective the step was taken on.
    """
    obj = as_objective(loss_fn)
    theta = np.array(_theta_of(params), dtype=np.float64)
    trace, _, _ = _start(trace, obj, theta, stage_tag)
    state = AdamState.create(theta, config.lr, config.betas, config.adam_eps)
    rng = np.random.default_rng(seed)
    for _ in range(config.epochs):
        for o in batches(rng) if batches is not None else (obj,):
            f, g = o.value_and_grad(state.theta)
            if not np.isfinite(f) or not np.all(np.isfinite(g)):
                trace.status = "diverged"
                trace.theta = state.theta
                raise NonFiniteError("non-finite loss during Adam", state.theta)
            old = state.theta
            state = adam_step(state, g)
            # the record carries the loss/gradient that produced this step
            trace.append(f, np.linalg.norm(g), np.linalg.norm(state.theta - old), stage_tag)
            trace.theta = state.theta
            if callback is not None:
                callback(state.theta, trace)
    trace.theta = state.theta
    trace.status = "completed"
    return trace


# ---------------------------------------------------------------------------
# line searches


def _cubic_min(x1, f1, g1, x2, f2, g2, lo, hi):
    """Minimizer of the cubic through two (value, slope) pairs, clipped to [lo, hi]."""
    with np.errstate(all="ignore"):
        d1 = g1 + g2 - 3 * (f1 - f2) / (x1 - x2)
        d2_sq = d1 * d1 - g1 * g2
        if np.isfinite(d2_sq) and d2_sq >= 0:
            d2 = math.sqrt(d2_sq)
            if x1 <= x2:
                t = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2 * d2))
            else:
                t = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2 * d2))
            if np.isfinite(t):
                return min(max(t, lo), hi)
    return 0.5 * (lo + hi)


@dataclass
class LineSearchResult:
    t: float
    f: float
    g: np.ndarray
    gd: float
    n_evals: int


def strong_wolfe(obj: Objective, theta, f0, g0, d, t0, c1=1e-4, c2=0.9, max_evals=25):
    """Bracketing + zoom search for a step satisfying both strong-Wolfe conditions.

    Returns a :class:`LineSearchResult` or ``None`` when no such step was found
    within ``max_evals`` evaluations.  Non-finite trial values count as too large.
    """
    gd0 = float(g0 @ d)
    if not gd0 < 0:
        return None
    d_scale = float(np.max(np.abs(d)))
    evals = 0

    def phi(t):
        nonlocal evals
        evals += 1
        f, g = obj.value_and_grad(theta + t * d)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return math.inf, g, math.nan
        return f, g, float(g @ d)

    def armijo_ok(t, f):
        return f <= f0 + c1 * t * gd0

    def curvature_ok(gd):
        return abs(gd) <= -c2 * gd0

    t_prev, f_prev, gd_prev = 0.0, f0, gd0
    t = t0
    bracket = None
    while evals < max_evals:
        f, g, gd = phi(t)
        if not armijo_ok(t, f) or (evals > 1 and f >= f_prev):
            bracket = [(t_prev, f_prev, gd_prev), (t, f, gd)]
            break
        if curvature_ok(gd):
            return LineSearchResult(t, f, g, gd, evals)
        if gd >= 0:
            bracket = [(t, f, gd), (t_prev, f_prev, gd_prev)]
            break
        lo_ext, hi_ext = t + 0.01 * (t - t_prev), 10 * t
        t_new = _cubic_min(t_prev, f_prev, gd_prev, t, f, gd, lo_ext, hi_ext)
        t_prev, f_prev, gd_prev = t, f, gd
        t = t_new
    if bracket is None:
        return None

    # zoom: bracket[0] is the best point so far (satisfies sufficient decrease)
    (t_lo, f_lo, gd_lo), (t_hi, f_hi, gd_hi) = bracket
    while evals < max_evals:
        if abs(t_hi - t_lo) * d_scale < 1e-16 * max(1.0, abs(t_lo) * d_scale):
            break
        a, b = min(t_lo, t_hi), max(t_lo, t_hi)
        w = b - a
        if np.isfinite(f_hi) and np.isfinite(gd_hi):
            t = _cubic_min(t_lo, f_lo, gd_lo, t_hi, f_hi, gd_hi, a + 0.1 * w, b - 0.1 * w)
        else:
            t = 0.5 * (a + b)
        f, g, gd = phi(t)
        if not armijo_ok(t, f) or f >= f_lo:
            t_hi, f_hi, gd_hi = t, f, gd
        else:
            if curvature_ok(gd):
                return LineSearchResult(t, f, g, gd, evals)
            if gd * (t_hi - t_lo) >= 0:
                t_hi, f_hi, gd_hi = t_lo, f_lo, gd_lo
            t_lo, f_lo, gd_lo = t, f, gd
    return None


def armijo(obj: Objective, theta, f0, g0, d, t0=1.0, c=1e-4, max_halvings=40):
    """Backtracking by halving until ``f(theta + t d) <= f0 + c t g0.d``."""
    gd0 = float(g0 @ d)
    t = t0
    for k in range(max_halvings + 1):
        f, g = obj.value_and_grad(theta + t * d)
        if np.isfinite(f) and f <= f0 + c * t * gd0:
            return LineSearchResult(t, f, g, float(g @ d), k + 1)
        t *= 0.5
    return None


# ---------------------------------------------------------------------------
# L-BFGS


def _two_loop(g, memory):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(memory):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    if memory:
        s, y, _ = memory[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(memory, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def lbfgs_run(
    loss_fn,
    params,
    config: OptimizerConfig,
    trace: TrainingTrace | None = None,
    stage_tag: str = "lbfgs",
    callback: Callback | None = None,
) -> TrainingTrace:
    """L-BFGS with a strong-Wolfe line search.

    Stops on ``||g|| < tol_grad``, ``|f_new - f| < tol_change``,
    ``max|t d| < tol_change`` or the epoch budget.  A failed line search
    clears the memory and retries along ``-g`` once before giving up with
    status ``line_search_failed``.
    """
    obj = as_objective(loss_fn)
    theta = np.array(_theta_of(params), dtype=np.float64)
    trace, f, g = _start(trace, obj, theta, stage_tag)
    trace.theta = theta
    memory: deque = deque(maxlen=config.history)
    status = "completed"
    for k in range(config.epochs):
        if np.linalg.norm(g) < config.tol_grad:
            status = "converged"
            break
        d = _two_loop(g, memory)
        first = not memory
        t0 = config.lr * min(1.0, 1.0 / np.sum(np.abs(g))) if first else config.lr
        res = strong_wolfe(obj, theta, f, g, d, t0, config.wolfe_c1, config.wolfe_c2, config.max_ls_evals)
        if res is None and not first:
            trace.events.append(f"iter {trace.last_iter}: line search failed, memory reset")
            memory.clear()
            d = -g
            t0 = config.lr * min(1.0, 1.0 / np.sum(np.abs(g)))
            res = strong_wolfe(obj, theta, f, g, d, t0, config.wolfe_c1, config.wolfe_c2, config.max_ls_evals)
        if res is None:
            status = "line_search_failed"
            trace.events.append(f"iter {trace.last_iter}: line search failed along -g")
            break
        trace.line_search.append((res.t, f, res.f, float(g @ d), res.gd))
        step = res.t * d
        theta_new = theta + step
        y = res.g - g
        sy = float(step @ y)
        # scale-free curvature test; an absolute threshold starves the memory near the optimum
        if sy > 1e-10 * np.linalg.norm(step) * np.linalg.norm(y):
            memory.append((step, y, 1.0 / sy))
        f_old = f
        _record(trace, theta_new, theta, res.f, res.g, stage_tag, callback)
        theta, f, g = theta_new, res.f, res.g
        if abs(f - f_old) < config.tol_change or np.max(np.abs(step)) < config.tol_change:
            status = "converged"
            break
    trace.theta = theta
    trace.status = status
    return trace


# ---------------------------------------------------------------------------
# Nystrom-preconditioned Newton-CG


@dataclass
class NystromApprox:
    """Rank-r approximation ``U diag(eigvals) U^T`` of a PSD operator."""

    U: np.ndarray
    eigvals: np.ndarray
    shift: float = 0.0
    events: list = field(default_factory=list)

    def inverse(self, rho: float) -> Callable[[np.ndarray], np.ndarray]:
        """``x -> (lam_r + rho) U (Lam + rho)^-1 U^T x + (I - U U^T) x``."""
        U, lam = self.U, self.eigvals
        lam_r = lam[-1] if lam.size else 0.0

        def apply(x):
            ux = U.T @ x
            return (lam_r + rho) * (U @ (ux / (lam + rho))) + x - U @ ux

        return apply


def nystrom(hvp: Callable, dim: int, rank: int, rng: np.random.Generator) -> NystromApprox:
    """Randomized Nystrom approximation from ``rank`` Hessian-vector products."""
    rank = min(rank, dim)
    omega, _ = np.linalg.qr(rng.standard_normal((dim, rank)))
    Y = np.column_stack([hvp(omega[:, j]) for j in range(rank)])
    nu = np.sqrt(dim) * np.finfo(np.float64).eps * np.linalg.norm(Y, 2)
    nu = max(nu, np.finfo(np.float64).tiny)
    events = []
    Y_nu = Y + nu * omega
    core = omega.T @ Y_nu
    core = 0.5 * (core + core.T)
    try:
        L = np.linalg.cholesky(core)
    except np.linalg.LinAlgError:
        # indefinite curvature: lift the core until it is positive definite
        w_min = np.linalg.eigvalsh(core)[0]
        extra = abs(w_min) + nu + 1e-12 * max(1.0, abs(w_min))
        Y_nu = Y_nu + extra * omega
        nu += extra
        core = omega.T @ Y_nu
        L = np.linalg.cholesky(0.5 * (core + core.T))
        events.append(f"nystrom shift raised to {nu:.3g}")
    B = sla.solve_triangular(L, Y_nu.T, lower=True).T
    U, S, _ = np.linalg.svd(B, full_matrices=False)
    lam = np.maximum(0.0, S**2 - nu)
    return NystromApprox(U, lam, nu, events)


@dataclass
class CGInfo:
    iters: int
    residual: float
    breakdown: bool


def pcg(hvp: Callable, b, precond: Callable, max_iters=50, tol=1e-8):
    """Preconditioned CG for ``H x = b``; stops at negative curvature."""
    x = np.zeros_like(b)
    r = b.copy()
    z = precond(r)
    p = z.copy()
    rz = r @ z
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return x, CGInfo(0, 0.0, False)
    for i in range(max_iters):
        Hp = hvp(p)
        pHp = p @ Hp
        if not pHp > 0 or not np.isfinite(pHp):
            return x, CGInfo(i, np.linalg.norm(r) / bnorm, True)
        a = rz / pHp
        x = x + a * p
        r = r - a * Hp
        rel = np.linalg.norm(r) / bnorm
        if rel <= tol:
            return x, CGInfo(i + 1, rel, False)
        z = precond(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, CGInfo(max_iters, rel, False)


def nncg_run(
    loss_fn,
    params,
    config: OptimizerConfig,
    trace: TrainingTrace | None = None,
    stage_tag: str = "nncg",
    callback: Callback | None = None,
    seed: int = 0,
) -> TrainingTrace:
    """Newton-CG with a Nystrom preconditioner and Armijo backtracking."""
    obj = as_objective(loss_fn)
    theta = np.array(_theta_of(params), dtype=np.float64)
    trace, f, g = _start(trace, obj, theta, stage_tag)
    trace.theta = theta
    rng = np.random.default_rng(seed)
    approx = None
    status = "completed"
    for k in range(config.epochs):
        if np.linalg.norm(g) < config.tol_grad:
            status = "converged"
            break
        hvp = HvpOracle(obj, theta, config.hvp_mode)
        if approx is None or k % config.precond_every == 0:
            approx = nystrom(hvp, theta.size, config.nystrom_rank, rng)
            trace.events.extend(f"iter {trace.last_iter}: {e}" for e in approx.events)
        lam_max = approx.eigvals[0] if approx.eigvals.size else 0.0
        rho = max(1e-6 * lam_max, 1e-12)
        d, info = pcg(hvp, -g, approx.inverse(rho), config.cg_max_iters, config.cg_tol)
        if info.breakdown:
            trace.events.append(f"iter {trace.last_iter}: CG hit non-positive curvature after {info.iters} steps")
        if not g @ d < 0:
            trace.events.append(f"iter {trace.last_iter}: fallback to -g")
            d = -g
        res = armijo(obj, theta, f, g, d, config.lr, config.armijo_c, config.armijo_max_halvings)
        if res is None and not np.array_equal(d, -g):
            trace.events.append(f"iter {trace.last_iter}: Armijo failed on CG direction, fallback to -g")
            d = -g
            res = armijo(obj, theta, f, g, d, config.lr, config.armijo_c, config.armijo_max_halvings)
        if res is None:
            status = "line_search_failed"
            trace.events.append(f"iter {trace.last_iter}: Armijo failed along -g")
            break
        trace.line_search.append((res.t, f, res.f, float(g @ d), res.gd))
        step = res.t * d
        theta_new = theta + step
        f_old = f
        _record(trace, theta_new, theta, res.f, res.g, stage_tag, callback)
        theta, f, g = theta_new, res.f, res.g
        if abs(f - f_old) < config.tol_change or np.max(np.abs(step)) < config.tol_change:
            status = "converged"
            break
    trace.theta = theta
    trace.status = status
    return trace


# ---------------------------------------------------------------------------
# augmented Lagrangian outer loop


def run_inner(method, obj, theta, config, trace, tag, callback=None, seed=0, batches=None):
    if method == "lbfgs":
        return lbfgs_run(obj, theta, config, trace, tag, callback)
    if method == "nncg":
        return nncg_run(obj, theta, config, trace, tag, callback, seed)
    if method == "adam":
        return adam_run(obj, theta, config, trace, tag, callback, batches, seed)
    raise ConfigurationError(f"{method!r} cannot run as an inner optimizer")


def alm_loop(
    alm_obj: Objective,
    constraints: Callable[[np.ndarray], np.ndarray],
    params,
    config: OptimizerConfig,
    trace: TrainingTrace | None = None,
    stage_tag: str = "alm",
    callback: Callback | None = None,
    seed: int = 0,
) -> tuple[TrainingTrace, ALMState]:
    """Alternate inner solves of the augmented Lagrangian with multiplier updates.

    ``alm_obj`` takes args ``(multipliers, mu, *data)``.  Runs
    ``max(1, epochs // alm_update_every)`` outer iterations, each of
    ``alm_update_every`` inner epochs.  Max constraint violation after each
    inner solve is logged to ``trace.events``.
    """
    theta = np.array(_theta_of(params), dtype=np.float64)
    data = alm_obj.args[2:]
    n_c = np.asarray(alm_obj.args[0]).size
    state = ALMState(np.zeros(n_c), config.alm_mu0, config.alm_mu0, config.alm_gamma, config.alm_max_updates)
    inner = replace(config, method=config.inner, epochs=config.alm_update_every)
    n_outer = max(1, config.epochs // config.alm_update_every)
    for k in range(n_outer):
        obj = alm_obj.with_args(state.multipliers, state.mu, *data)
        trace = run_inner(config.inner, obj, theta, inner, trace, stage_tag, callback, seed + k)
        theta = trace.theta
        c = constraints(theta)
        trace.events.append(f"alm outer {k}: mu={state.mu:.6g} max|c|={np.max(np.abs(c)):.6g}")
        if trace.status == "line_search_failed":
            trace.events.append(f"alm outer {k}: inner solve stopped on a failed line search")
        state = advance_alm(state, c)
        # inner status does not end the outer loop; the next solve sees new multipliers
    trace.status = "completed"
    return trace, state
