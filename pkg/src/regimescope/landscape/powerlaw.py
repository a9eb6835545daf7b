"""Power-law tail fits of inverse step magnitudes."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

MIN_POINTS = 50
MAX_CANDIDATES = 2000


@dataclass(frozen=True)
class PowerLawFit:
    alpha: float
    x_min: float
    n_tail: int
    ks: float


def fit_power_law(x, min_tail: int = MIN_POINTS) -> PowerLawFit:
    """Continuous MLE ``alpha = 1 + n / sum(log(x / x_min))`` with ``x_min`` chosen by minimum KS distance."""
    x = np.sort(np.asarray(x, dtype=np.float64))
    if x.size < MIN_POINTS:
        raise ValueError(f"need at least {MIN_POINTS} positive values, got {x.size}")
    if x[0] == x[-1]:
        raise ValueError("all values are equal; the power-law exponent is undefined")
    n = x.size
    # candidate x_min: order statistics that leave at least min_tail points above
    last = n - min_tail
    idx = np.unique(np.linspace(0, last, min(last + 1, MAX_CANDIDATES)).round().astype(int))
    best = None
    logx = np.log(x)
    for i in idx:
        if i > 0 and x[i] == x[i - 1]:
            continue
        tail = logx[i:] - logx[i]
        s = tail.sum()
        if s <= 0:
            continue
        m = tail.size
        alpha = 1.0 + m / s
        emp = np.arange(m) / m
        model = 1.0 - np.exp((1.0 - alpha) * tail)
        ks = float(np.max(np.maximum(np.abs(emp - model), np.abs(emp + 1.0 / m - model))))
        if best is None or ks < best.ks:
            best = PowerLawFit(float(alpha), float(x[i]), int(m), ks)
    if best is None:
        raise ValueError("no x_min candidate leaves a non-degenerate tail")
    return best


def post_threshold_steps(trace, loss_threshold: float | None, tail_len: int | None = None) -> np.ndarray:
    """Step magnitudes from the first iteration whose loss is at or below the threshold."""
    losses, steps = trace.losses(), trace.steps()
    start = 1  # record 0 is the starting point and carries no step
    if loss_threshold is not None:
        hit = np.flatnonzero(losses <= loss_threshold)
        if hit.size == 0:
            raise ValueError(f"loss never reaches {loss_threshold:g}")
        start = max(start, int(hit[0]))
    out = steps[start:]
    return out if tail_len is None else out[:tail_len]


def pl_exponent(trace, loss_threshold: float | None = None, tail_len: int | None = None) -> float:
    """Power-law exponent of ``1 / step_magnitude`` after the loss crosses ``loss_threshold``.

    ``trace`` is a TrainingTrace or a plain array of step magnitudes.
    Zero steps are dropped with a warning.
    """
    steps = np.asarray(trace, dtype=np.float64) if isinstance(trace, (list, tuple, np.ndarray)) else post_threshold_steps(trace, loss_threshold, tail_len)
    zero = steps <= 0
    if zero.any():
        warnings.warn(f"dropping {int(zero.sum())} zero step magnitudes", RuntimeWarning, stacklevel=2)
        steps = steps[~zero]
    if tail_len is not None and steps.size < tail_len:
        raise ValueError(f"only {steps.size} usable steps, fewer than tail_len={tail_len}")
    return fit_power_law(1.0 / steps).alpha
