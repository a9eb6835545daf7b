import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))


class DenseOracle:
    """A dense symmetric matrix behind the hvp callable interface."""

    def __init__(self, A):
        self.A = np.asarray(A, dtype=np.float64)
        self.dim = self.A.shape[0]
        self.n_calls = 0

    def __call__(self, v):
        self.n_calls += 1
        return self.A @ v


def random_symmetric(dim, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((dim, dim))
    return 0.5 * (M + M.T)


def central_fd_grad(f, x, h):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def max_rel_err(a, b, floor=1e-8):
    """Componentwise relative error, guarding components that are zero in both."""
    a, b = np.asarray(a), np.asarray(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


@pytest.fixture
def dense_oracle():
    return DenseOracle
