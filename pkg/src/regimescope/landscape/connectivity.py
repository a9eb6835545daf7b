"""Mode connectivity along a quadratic Bezier curve between two parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffcore import NonFiniteError, _theta_of, as_objective
from ..training.optim import AdamState, adam_step


@dataclass(frozen=True)
class ConnectivityResult:
    mc: float
    t_star: float
    t_grid: np.ndarray
    curve_losses: np.ndarray
    loss_a: float
    loss_b: float
    control: np.ndarray | None = None


def mc_from_samples(t_grid, curve_losses, loss_a: float, loss_b: float) -> ConnectivityResult:
    """Signed gap between the endpoint-mean loss and the curve loss closest to it.

    Ties in the closeness criterion go to the smallest ``t``.  A negative
    value is a barrier.
    """
    t = np.asarray(t_grid, dtype=np.float64)
    L = np.asarray(curve_losses, dtype=np.float64)
    if t.shape != L.shape or t.size == 0:
        raise ValueError("t_grid and curve_losses must be non-empty and the same length")
    if not np.all(np.isfinite(L)) or not (np.isfinite(loss_a) and np.isfinite(loss_b)):
        raise NonFiniteError("non-finite loss on the connecting curve")
    order = np.argsort(t, kind="stable")
    t, L = t[order], L[order]
    target = 0.5 * (loss_a + loss_b)
    i = int(np.argmin(np.abs(target - L)))  # first minimum, i.e. smallest t
    return ConnectivityResult(float(target - L[i]), float(t[i]), t, L, float(loss_a), float(loss_b))


def bezier(theta_a, control, theta_b, t):
    t = np.asarray(t, dtype=np.float64)[..., None]
    return (1 - t) ** 2 * theta_a + 2 * t * (1 - t) * control + t**2 * theta_b


def mode_connectivity(
    loss_fn,
    theta_a,
    theta_b,
    steps: int = 200,
    lr: float = 1e-3,
    samples_per_step: int = 16,
    grid: int = 101,
    seed: int = 0,
) -> ConnectivityResult:
    """Fit the Bezier control point by Adam on the curve-averaged loss, then score the curve."""
    obj = as_objective(loss_fn)
    a = np.array(_theta_of(theta_a), dtype=np.float64)
    b = np.array(_theta_of(theta_b), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"endpoint dimensions differ: {a.size} vs {b.size}")
    rng = np.random.default_rng(seed)
    state = AdamState.create(0.5 * (a + b), lr)
    for _ in range(steps):
        ts = rng.uniform(0.0, 1.0, samples_per_step)
        grad = np.zeros_like(a)
        for t in ts:
            f, g = obj.value_and_grad(bezier(a, state.theta, b, t))
            if not np.isfinite(f):
                raise NonFiniteError(f"non-finite loss at t={t:.3f} while fitting the curve", state.theta)
            grad += 2 * t * (1 - t) * g
        state = adam_step(state, grad / samples_per_step)
    t_grid = np.linspace(0.0, 1.0, grid)
    losses = np.array([obj(bezier(a, state.theta, b, t)) for t in t_grid])
    res = mc_from_samples(t_grid, losses, obj(a), obj(b))
    return ConnectivityResult(res.mc, res.t_star, res.t_grid, res.curve_losses, res.loss_a, res.loss_b, state.theta)
