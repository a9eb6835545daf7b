"""Matrix-free curvature estimators.

Everything here sees the Hessian only through a callable ``hvp(v) -> H v``
of known dimension, so a dense test matrix and a network loss are
interchangeable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


def _orthonormalize(W: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal basis of the columns of ``W``; rank-deficient columns are refilled at random."""
    Q, R = np.linalg.qr(W)
    diag = np.abs(np.diag(R))
    scale = diag.max() if diag.size else 0.0
    bad = diag <= 1e-12 * scale if scale > 0 else np.ones(diag.size, dtype=bool)
    for j in np.flatnonzero(bad):
        v = rng.standard_normal(W.shape[0])
        for _ in range(2):
            v -= Q[:, np.arange(Q.shape[1]) != j] @ (Q[:, np.arange(Q.shape[1]) != j].T @ v)
        Q[:, j] = v / np.linalg.norm(v)
    return Q


class EigenResult(list):
    """List of ``(eigenvalue, eigenvector)`` pairs, largest ``|eigenvalue|`` first."""

    def __init__(self, pairs, converged: bool, iterations: int):
        super().__init__(pairs)
        self.converged = converged
        self.iterations = iterations

    @property
    def values(self) -> np.ndarray:
        return np.array([lam for lam, _ in self])


def top_eigs(hvp, dim: int, k: int = 1, max_iters: int = 200, tol: float = 1e-6, seed: int = 0, oversample: int = 4):
    """Leading ``k`` eigenpairs by power iteration with deflation.

    The ``k`` (plus ``oversample``) vectors are iterated as one block and
    kept mutually orthogonal, i.e. each later vector is deflated against the
    earlier ones, with a Rayleigh-Ritz rotation per sweep.  ``oversample``
    extra vectors speed up convergence when the wanted eigenvalues are not
    well separated (``+lambda`` and ``-lambda`` of similar size, say).
    Converged once every wanted Rayleigh quotient moves by less than
    ``tol * |lambda|`` between sweeps; otherwise the last estimate is
    returned with ``converged=False``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > dim:
        raise ValueError(f"k={k} exceeds dimension {dim}")
    rng = np.random.default_rng(seed)
    b = min(dim, k + max(0, oversample))
    V = _orthonormalize(rng.standard_normal((dim, b)), rng)
    prev = None
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        W = np.column_stack([hvp(V[:, j]) for j in range(b)])
        T = V.T @ W
        evals, S = np.linalg.eigh(0.5 * (T + T.T))
        order = np.argsort(-np.abs(evals), kind="stable")
        evals, S = evals[order], S[:, order]
        X = V @ S
        HX = W @ S
        ritz = evals[:k]
        if prev is not None and np.all(np.abs(ritz - prev) <= tol * np.abs(ritz)):
            converged = True
            break
        if np.all(np.abs(ritz) == 0) and np.allclose(HX, 0.0):
            converged = True
            break
        prev = ritz
        V = _orthonormalize(HX, rng)
    pairs = [(float(evals[i]), X[:, i] / np.linalg.norm(X[:, i])) for i in range(k)]
    return EigenResult(pairs, converged, it)


def lambda_max(hvp, dim: int, max_iters: int = 200, tol: float = 1e-6, seed: int = 0) -> float:
    return top_eigs(hvp, dim, 1, max_iters, tol, seed)[0][0]


def hessian_trace(hvp, dim: int, max_probes: int = 100, rel_tol: float = 1e-3, seed: int = 0, window: int = 10) -> float:
    """Hutchinson estimate with Rademacher probes.

    Stops early once the running mean moved by at most ``rel_tol`` (relative)
    over the last ``window`` probes; ``rel_tol=0`` forces ``max_probes``.
    """
    if max_probes < 1:
        raise ValueError("max_probes must be >= 1")
    rng = np.random.default_rng(seed)
    means = []
    total = 0.0
    for n in range(1, max_probes + 1):
        v = rng.choice([-1.0, 1.0], size=dim)
        total += float(v @ hvp(v))
        means.append(total / n)
        if rel_tol > 0 and n > window and abs(means[-1] - means[-1 - window]) <= rel_tol * abs(means[-1]):
            break
    return means[-1]


@dataclass(frozen=True)
class SpectralDensity:
    nodes: np.ndarray
    weights: np.ndarray
    kernel_sigma: float
    symlog_threshold: float = 1e-2

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise ValueError("density weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-8:
            raise ValueError(f"density weights sum to {self.weights.sum()!r}, expected 1")

    def curve(self, grid) -> np.ndarray:
        """Gaussian-smoothed density evaluated on ``grid``."""
        grid = np.asarray(grid, dtype=np.float64)
        s = self.kernel_sigma
        z = (grid[:, None] - self.nodes[None, :]) / s
        return (np.exp(-0.5 * z * z) @ self.weights) / (s * np.sqrt(2 * np.pi))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "weight"])
            for x, p in zip(self.nodes, self.weights):
                w.writerow([repr(float(x)), repr(float(p))])


def lanczos(hvp, v0: np.ndarray, m: int):
    """``m``-step Lanczos with full reorthogonalization; returns ``(alpha, beta)``.

    Stops early on breakdown (``beta`` numerically zero), so ``len(alpha)``
    may be less than ``m``.
    """
    n = v0.size
    Q = np.zeros((n, m))
    alpha, beta = [], []
    q = v0 / np.linalg.norm(v0)
    scale = 0.0
    for j in range(m):
        Q[:, j] = q
        w = hvp(q)
        a = float(q @ w)
        alpha.append(a)
        w = w - Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
        w = w - Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
        b = float(np.linalg.norm(w))
        scale = max(scale, abs(a), b)
        if j == m - 1 or b <= 1e-10 * max(scale, 1e-300):
            break
        beta.append(b)
        q = w / b
    return np.array(alpha), np.array(beta)


def _merge_nodes(nodes, weights, rel=1e-8):
    order = np.argsort(nodes, kind="stable")
    nodes, weights = nodes[order], weights[order]
    scale = max(np.max(np.abs(nodes)) if nodes.size else 0.0, 1e-300)
    out_n, out_w = [], []
    for x, p in zip(nodes, weights):
        if out_n and abs(x - out_n[-1]) <= rel * scale:
            total = out_w[-1] + p
            out_n[-1] = (out_n[-1] * out_w[-1] + x * p) / total if total > 0 else out_n[-1]
            out_w[-1] = total
        else:
            out_n.append(x)
            out_w.append(p)
    return np.array(out_n), np.array(out_w)


def slq_density(
    hvp,
    dim: int,
    lanczos_steps: int | None = None,
    n_probes: int = 8,
    seed: int = 0,
    kernel_sigma: float | None = None,
    symlog_threshold: float = 1e-2,
) -> SpectralDensity:
    """Stochastic Lanczos quadrature over Rademacher probes.

    Each probe contributes the Ritz values of its tridiagonal matrix with
    weights equal to the squared first components of the Ritz vectors; the
    probes are averaged and coincident nodes merged.  ``kernel_sigma``
    defaults to 1% of the spectral range (or 1e-3 for a point spectrum).
    ``lanczos_steps`` defaults to ``min(64, dim)``.
    """
    m = min(64, dim) if lanczos_steps is None else lanczos_steps
    if m > dim or m < 1:
        raise ValueError(f"lanczos_steps={lanczos_steps} exceeds dimension {dim}")
    rng = np.random.default_rng(seed)
    nodes, weights = [], []
    for _ in range(n_probes):
        v = rng.choice([-1.0, 1.0], size=dim)
        a, b = lanczos(hvp, v, m)
        T = np.diag(a) + np.diag(b, 1) + np.diag(b, -1)
        theta, S = np.linalg.eigh(T)
        tau = S[0, :] ** 2
        tau /= tau.sum()
        nodes.append(theta)
        weights.append(tau / n_probes)
    nodes, weights = _merge_nodes(np.concatenate(nodes), np.concatenate(weights))
    weights = weights / weights.sum()
    if kernel_sigma is None:
        span = float(nodes.max() - nodes.min())
        kernel_sigma = 0.01 * span if span > 0 else 1e-3
    return SpectralDensity(nodes, weights, float(kernel_sigma), symlog_threshold)


def negative_mass(density: SpectralDensity) -> float:
    return float(min(1.0, max(0.0, density.weights[density.nodes < 0].sum())))
