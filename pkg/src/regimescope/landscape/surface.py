"""Two-dimensional loss slices along the sharpest Hessian directions."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..diffcore import NetworkParameters, _theta_of, as_objective
from .spectrum import top_eigs

LOG_OFFSET = 1e-12


@dataclass(frozen=True)
class SurfaceSlice:
    radius: float
    grid_n: int
    coords: np.ndarray
    values: np.ndarray  # values[i, j] = log(L(theta + coords[i] d1 + coords[j] d2) + 1e-12)
    d1: np.ndarray
    d2: np.ndarray
    direction_source: str  # "hessian" or "random"

    @property
    def center(self) -> float:
        c = self.grid_n // 2
        return float(self.values[c, c])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "beta", "logloss"])
            for i, a in enumerate(self.coords):
                for j, b in enumerate(self.coords):
                    w.writerow([repr(float(a)), repr(float(b)), repr(float(self.values[i, j]))])


def filter_normalize(direction, theta, blocks) -> np.ndarray:
    """Rescale each block of ``direction`` to the norm of the same block of ``theta``.

    Blocks where ``theta`` is zero (freshly initialised biases) keep the
    direction at unit norm instead of collapsing it.
    """
    d = np.array(direction, dtype=np.float64)
    for sl in blocks:
        dn = np.linalg.norm(d[sl])
        if dn == 0:
            continue
        tn = np.linalg.norm(theta[sl])
        d[sl] *= (tn if tn > 0 else 1.0) / dn
    return d


def _blocks(params, n):
    if isinstance(params, NetworkParameters):
        return params.blocks()
    return [slice(0, n)]


def surface_slice(
    loss_fn,
    params,
    hvp=None,
    radius: float = 1.0,
    grid_n: int = 21,
    seed: int = 0,
    max_iters: int = 200,
    tol: float = 1e-6,
) -> SurfaceSlice:
    """Evaluate ``log(L + 1e-12)`` on a ``grid_n x grid_n`` lattice in ``[-radius, radius]^2``.

    Directions are the top-2 Hessian eigenvectors when ``hvp`` is given and
    the eigen-solve converges; otherwise two random orthonormal vectors.
    Either pair is filter-normalized per layer weight block and bias block.
    """
    if grid_n < 1 or grid_n % 2 == 0:
        raise ValueError("grid_n must be odd so that the centre lands on theta")
    obj = as_objective(loss_fn)
    theta = np.array(_theta_of(params), dtype=np.float64)
    n = theta.size
    source = "random"
    if hvp is not None and n >= 2:
        eig = top_eigs(hvp, n, 2, max_iters, tol, seed, oversample=2)
        if eig.converged:
            d1, d2 = eig[0][1], eig[1][1]
            source = "hessian"
    if source == "random":
        rng = np.random.default_rng(seed)
        Q, _ = np.linalg.qr(rng.standard_normal((n, 2)))
        d1, d2 = Q[:, 0], Q[:, min(1, Q.shape[1] - 1)]
    blocks = _blocks(params, n)
    d1, d2 = filter_normalize(d1, theta, blocks), filter_normalize(d2, theta, blocks)
    coords = np.linspace(-radius, radius, grid_n)
    values = np.empty((grid_n, grid_n))
    c = grid_n // 2
    for i, a in enumerate(coords):
        for j, b in enumerate(coords):
            # exact centre, independent of linspace rounding
            point = theta if (i == c and j == c) else theta + a * d1 + b * d2
            values[i, j] = np.log(obj(point) + LOG_OFFSET)
    return SurfaceSlice(float(radius), grid_n, coords, values, d1, d2, source)
