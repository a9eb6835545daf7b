"""Benchmark differential equations: residual operators, boundary terms, reference
solutions, collocation sampling and the damped pendulum.

A "model" here is either a :class:`NetworkParameters` (input ``(x, t)``) or a
plain jax-traceable function ``u(x, t) -> scalar`` used as an analytic stand-in
for the network; derivatives of the latter come from jax autodiff.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np
from scipy.integrate import solve_ivp

from .diffcore import ConfigurationError, NetworkParameters, mlp, mlp_jets

PDE_FAMILIES = ("convection", "reaction", "wave", "reaction_diffusion")
FAMILIES = PDE_FAMILIES + ("pendulum",)
SWEEP_RANGES = {
    "convection": (5.0, 70.0),
    "reaction": (1.0, 30.0),
    "wave": (0.1, 6.0),
    "reaction_diffusion": (1.0, 30.0),
    "pendulum": (0.1, 1.0),
}
DEFAULT_AUX = {"wave": 3.0, "reaction_diffusion": 5.0}
EVAL_NX, EVAL_NT = 256, 100
PENDULUM_TEST_THETA0 = 2.8
PENDULUM_TEST_HORIZON = 20.0


@dataclass(frozen=True)
class ProblemSpec:
    family: str
    coeff: float
    aux_coeff: float | None = None
    n_res: int = 1000
    n_bc: int = 256
    horizon: float = 20.0
    dt: float = 0.05
    rd_sign: str = "decay"  # "decay": u_t = nu u_xx - rho u(1-u); "growth": + rho u(1-u)
    theta0: float = 1.7
    omega0: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.aux_coeff is None:
            object.__setattr__(self, "aux_coeff", DEFAULT_AUX.get(self.family, 0.0))
        if self.n_res < 1 or self.n_bc < 0:
            raise ConfigurationError("n_res must be >= 1 and n_bc >= 0")
        if not self.dt > 0 or self.horizon < self.dt:
            raise ConfigurationError("need dt > 0 and horizon >= dt")
        if self.rd_sign not in ("decay", "growth"):
            raise ConfigurationError("rd_sign must be 'decay' or 'growth'")

    @property
    def domain(self) -> tuple[tuple[float, float], tuple[float, float]]:
        if self.family == "wave":
            return (0.0, 1.0), (0.0, 1.0)
        if self.family == "pendulum":
            return (0.0, 0.0), (0.0, self.horizon)
        return (0.0, 2 * np.pi), (0.0, 1.0)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def in_sweep_range(self) -> bool:
        lo, hi = SWEEP_RANGES[self.family]
        return lo <= self.coeff <= hi

    def replace(self, **changes) -> "ProblemSpec":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class PointSet:
    residual: np.ndarray
    initial: np.ndarray
    periodic_left: np.ndarray
    periodic_right: np.ndarray
    dirichlet: np.ndarray

    @property
    def n_boundary_points(self) -> int:
        return len(self.initial) + len(self.periodic_left) + len(self.dirichlet)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states_raw: np.ndarray
    states_embedded: np.ndarray
    b: float


# ---------------------------------------------------------------------------
# fields: networks or analytic stand-ins, evaluated with input derivatives


def _jets_fn(u: Callable, X, axes, second):
    def scalar(p):
        return u(p[0], p[1])

    value = jax.vmap(scalar)(X)
    grad = jax.vmap(jax.grad(scalar))(X)
    d1 = [grad[:, a] for a in axes]
    d2 = None
    if second:
        hess = jax.vmap(jax.hessian(scalar))(X)
        d2 = [hess[:, a, a] for a in axes]
    return value, d1, d2


def field_jets(model, X, axes=(0, 1), second=True):
    """``(u, [u_axis...], [u_axis_axis...])`` as 1-D arrays over the rows of ``X``."""
    X = jnp.asarray(X, dtype=jnp.float64)
    if isinstance(model, NetworkParameters):
        model = (jnp.asarray(model.theta), model.layer_sizes, model.output_activation)
    if isinstance(model, tuple):
        theta, sizes, act = model
        v, d1, d2 = mlp_jets(theta, sizes, X, axes, second, act)
        return v[:, 0], [g[:, 0] for g in d1], None if d2 is None else [g[:, 0] for g in d2]
    return _jets_fn(model, X, axes, second)


def field_values(model, X):
    X = jnp.asarray(X, dtype=jnp.float64)
    if isinstance(model, NetworkParameters):
        return mlp(jnp.asarray(model.theta), model.layer_sizes, X, model.output_activation)[:, 0]
    if isinstance(model, tuple):
        theta, sizes, act = model
        return mlp(theta, sizes, X, act)[:, 0]
    return jax.vmap(lambda p: model(p[0], p[1]))(X)


def _gaussian_bump(x):
    return jnp.exp(-((x - jnp.pi) ** 2) / (2 * (jnp.pi / 4) ** 2))


def initial_condition(problem: ProblemSpec, x):
    if problem.family == "convection":
        return jnp.sin(x)
    if problem.family in ("reaction", "reaction_diffusion"):
        return _gaussian_bump(x)
    if problem.family == "wave":
        return jnp.sin(jnp.pi * x) + 0.5 * jnp.sin(problem.aux_coeff * jnp.pi * x)
    raise ConfigurationError(f"{problem.family} has no PDE initial condition")


def pde_residuals(problem: ProblemSpec, model, X):
    """Residual of the PDE operator at each row ``(x, t)`` of ``X`` (jax-traceable)."""
    fam, c = problem.family, problem.coeff
    second = fam in ("wave", "reaction_diffusion")
    u, (ux, ut), d2 = field_jets(model, X, (0, 1), second)
    if fam == "convection":
        return ut + c * ux
    if fam == "reaction":
        return ut - c * u * (1 - u)
    if fam == "wave":
        return d2[1] - c**2 * d2[0]
    if fam == "reaction_diffusion":
        sign = 1.0 if problem.rd_sign == "decay" else -1.0
        return ut - problem.aux_coeff * d2[0] + sign * c * u * (1 - u)
    raise ConfigurationError(f"{fam} is not a PDE family")


def residual(problem: ProblemSpec, model, point):
    """PDE residual at one point (returns float) or at each row of a point array."""
    P = np.atleast_2d(np.asarray(point, dtype=np.float64))
    r = np.asarray(pde_residuals(problem, model, P))
    return float(r[0]) if np.ndim(point) == 1 else r


def check_pairing(points: PointSet) -> None:
    left, right = points.periodic_left, points.periodic_right
    if len(left) != len(right):
        raise ConfigurationError("periodic boundary pairs are mismatched")
    if isinstance(left, np.ndarray) and isinstance(right, np.ndarray) and len(left):
        if not np.allclose(left[:, 1], right[:, 1]):
            raise ConfigurationError("periodic boundary pairs are mismatched")


def boundary_terms(problem: ProblemSpec, model, points: PointSet):
    """Boundary/initial residual vector (jax-traceable).

    Periodic families: ``u(x,0) - IC(x)`` then ``u(0,t) - u(L,t)`` per pair.
    Wave: ``u(x,0) - IC(x)``, ``u_t(x,0)``, then ``u`` at the Dirichlet points.
    """
    parts = []
    if problem.family == "wave":
        if len(points.initial):
            u0, (u0t,), _ = field_jets(model, points.initial, (1,), False)
            parts += [u0 - initial_condition(problem, points.initial[:, 0]), u0t]
        if len(points.dirichlet):
            parts.append(field_values(model, points.dirichlet))
    else:
        check_pairing(points)
        if len(points.initial):
            parts.append(field_values(model, points.initial) - initial_condition(problem, points.initial[:, 0]))
        if len(points.periodic_left):
            parts.append(field_values(model, points.periodic_left) - field_values(model, points.periodic_right))
    if not parts:
        return jnp.zeros(0)
    return jnp.concatenate(parts)


def boundary_residuals(problem: ProblemSpec, model, point_set: PointSet) -> np.ndarray:
    return np.asarray(boundary_terms(problem, model, point_set))


def analytic_solution(problem: ProblemSpec, point):
    """Closed-form solution for convection, reaction and wave at ``(x, t)`` rows."""
    P = np.atleast_2d(np.asarray(point, dtype=np.float64))
    x, t = P[:, 0], P[:, 1]
    c = problem.coeff
    if problem.family == "convection":
        u = np.sin(x - c * t)
    elif problem.family == "reaction":
        h = np.exp(-((x - np.pi) ** 2) / (2 * (np.pi / 4) ** 2))
        e = np.exp(c * t)
        u = h * e / (h * e + 1 - h)
    elif problem.family == "wave":
        k = problem.aux_coeff
        u = np.sin(np.pi * x) * np.cos(c * np.pi * t) + 0.5 * np.sin(k * np.pi * x) * np.cos(k * c * np.pi * t)
    else:
        raise ConfigurationError(f"no closed-form solution for {problem.family}")
    return float(u[0]) if np.ndim(point) == 1 else u


def analytic_field(problem: ProblemSpec) -> Callable:
    """The closed form as a jax function ``u(x, t)``, for use in place of a network."""
    c, k = problem.coeff, problem.aux_coeff
    if problem.family == "convection":
        return lambda x, t: jnp.sin(x - c * t)
    if problem.family == "reaction":

        def u(x, t):
            h = _gaussian_bump(x)
            e = jnp.exp(c * t)
            return h * e / (h * e + 1 - h)

        return u
    if problem.family == "wave":
        return lambda x, t: jnp.sin(jnp.pi * x) * jnp.cos(c * jnp.pi * t) + 0.5 * jnp.sin(k * jnp.pi * x) * jnp.cos(
            k * c * jnp.pi * t
        )
    raise ConfigurationError(f"no closed-form solution for {problem.family}")


# ---------------------------------------------------------------------------
# reference grids


def evaluation_axes(problem: ProblemSpec, nx: int = EVAL_NX, nt: int = EVAL_NT):
    (x0, x1), (t0, t1) = problem.domain
    periodic = problem.family != "wave"
    return np.linspace(x0, x1, nx, endpoint=not periodic), np.linspace(t0, t1, nt)


def evaluation_points(problem: ProblemSpec, nx: int = EVAL_NX, nt: int = EVAL_NT) -> np.ndarray:
    """Grid points as rows ``(x, t)``, time-major so ``reshape(nt, nx)`` recovers the grid."""
    xs, ts = evaluation_axes(problem, nx, nt)
    T, Xg = np.meshgrid(ts, xs, indexing="ij")
    return np.column_stack([Xg.ravel(), T.ravel()])


MAX_SUBSTEPS = 2_000_000


def _rd_rhs(u, dx, nu, rho, sign):
    lap = (np.roll(u, -1) - 2 * u + np.roll(u, 1)) / dx**2
    return nu * lap - sign * rho * u * (1 - u)


def reference_solution_grid(problem: ProblemSpec, nx: int = EVAL_NX, nt: int = EVAL_NT, cache_dir=None) -> np.ndarray:
    """Reaction-diffusion reference on an ``(nt, nx)`` grid.

    Second-order central differences on the periodic x-grid, classical RK4 in
    time with enough sub-steps between output times to stay inside the RK4
    stability region.
    """
    if problem.family != "reaction_diffusion":
        raise ConfigurationError("reference_solution_grid is only defined for reaction_diffusion")
    path = None
    if cache_dir is not None:
        key = f"{problem.family}|{problem.coeff!r}|{problem.aux_coeff!r}|{problem.rd_sign}|{nx}|{nt}"
        path = Path(cache_dir) / f"rd_{hashlib.sha256(key.encode()).hexdigest()[:16]}.npy"
        if path.exists():
            return np.load(path)
    nu, rho = problem.aux_coeff, problem.coeff
    sign = 1.0 if problem.rd_sign == "decay" else -1.0
    xs, ts = evaluation_axes(problem, nx, nt)
    dx = xs[1] - xs[0]
    # RK4 is stable on the negative real axis down to about -2.78
    stiff = 4 * nu / dx**2 + abs(rho)
    dt_max = 2.0 / stiff if stiff > 0 else np.inf
    u = np.asarray(_gaussian_bump(xs))
    out = np.empty((nt, nx))
    out[0] = u
    total = 0
    for k in range(1, nt):
        span = ts[k] - ts[k - 1]
        n_sub = max(1, int(np.ceil(span / dt_max)))
        total += n_sub
        if total > MAX_SUBSTEPS:
            raise RuntimeError(f"reaction-diffusion solver exceeded {MAX_SUBSTEPS} sub-steps")
        h = span / n_sub
        for _ in range(n_sub):
            k1 = _rd_rhs(u, dx, nu, rho, sign)
            k2 = _rd_rhs(u + 0.5 * h * k1, dx, nu, rho, sign)
            k3 = _rd_rhs(u + 0.5 * h * k2, dx, nu, rho, sign)
            k4 = _rd_rhs(u + h * k3, dx, nu, rho, sign)
            u = u + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k] = u
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, out)
    return out


def reference_grid(problem: ProblemSpec, nx: int = EVAL_NX, nt: int = EVAL_NT, cache_dir=None) -> np.ndarray:
    if problem.family == "reaction_diffusion":
        return reference_solution_grid(problem, nx, nt, cache_dir)
    return analytic_solution(problem, evaluation_points(problem, nx, nt)).reshape(nt, nx)


def relative_l2_error(predicted, reference) -> float:
    pred = np.asarray(predicted, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {ref.shape}")
    denom = np.linalg.norm(ref.ravel())
    if denom == 0.0:
        raise ValueError("reference grid has zero norm")
    return float(np.linalg.norm((pred - ref).ravel()) / denom)


def pinn_test_error(params: NetworkParameters, problem: ProblemSpec, cache_dir=None) -> float:
    ref = reference_grid(problem, cache_dir=cache_dir)
    pred = np.asarray(field_values(params, evaluation_points(problem))).reshape(ref.shape)
    return relative_l2_error(pred, ref)


# ---------------------------------------------------------------------------
# collocation


def sample_points(problem: ProblemSpec, seed: int) -> PointSet:
    """Uniform random residual points; equispaced initial and boundary points."""
    if problem.family not in PDE_FAMILIES:
        raise ConfigurationError(f"{problem.family} has no collocation points")
    rng = np.random.default_rng(seed)
    (x0, x1), (t0, t1) = problem.domain
    res = np.column_stack([rng.uniform(x0, x1, problem.n_res), rng.uniform(t0, t1, problem.n_res)])
    # keep residual points off the closed boundary
    res[:, 0] = np.clip(res[:, 0], np.nextafter(x0, x1), np.nextafter(x1, x0))
    res[:, 1] = np.clip(res[:, 1], np.nextafter(t0, t1), np.nextafter(t1, t0))
    n_ic = problem.n_bc // 2
    n_rest = problem.n_bc - n_ic
    empty = np.zeros((0, 2))
    if problem.family == "wave":
        xi = np.linspace(x0, x1, n_ic)
        initial = np.column_stack([xi, np.full(n_ic, t0)])
        n_left = n_rest // 2
        tl, tr = np.linspace(t0, t1, n_left), np.linspace(t0, t1, n_rest - n_left)
        dirichlet = np.vstack([np.column_stack([np.full(n_left, x0), tl]), np.column_stack([np.full(len(tr), x1), tr])])
        return PointSet(res, initial, empty, empty, dirichlet)
    xi = np.linspace(x0, x1, n_ic, endpoint=False)
    initial = np.column_stack([xi, np.full(n_ic, t0)])
    tp = np.linspace(t0, t1, n_rest)
    left = np.column_stack([np.full(n_rest, x0), tp])
    right = np.column_stack([np.full(n_rest, x1), tp])
    return PointSet(res, initial, left, right, empty)


# ---------------------------------------------------------------------------
# pendulum


def pendulum_rhs(t, y, b):
    theta, omega = y
    return [omega, -b * omega - np.sin(theta)]


def embed_sphere(theta, omega):
    theta, omega = np.asarray(theta, dtype=np.float64), np.asarray(omega, dtype=np.float64)
    st = np.sin(theta)
    return np.stack([st * np.cos(omega), st * np.sin(omega), -np.cos(theta)], axis=-1)


def pushforward_field(theta, omega, b):
    """Velocity of the embedded state along the true flow, ``D(embed) @ (omega_dot, theta_dot)``."""
    theta, omega = np.asarray(theta, dtype=np.float64), np.asarray(omega, dtype=np.float64)
    th_dot = omega
    om_dot = -b * omega - np.sin(theta)
    st, ct, so, co = np.sin(theta), np.cos(theta), np.sin(omega), np.cos(omega)
    return np.stack(
        [
            ct * co * th_dot - st * so * om_dot,
            ct * so * th_dot + st * co * om_dot,
            st * th_dot,
        ],
        axis=-1,
    )


def pendulum_truth(b: float, theta0: float, omega0: float, horizon: float, dt: float) -> Trajectory:
    n = int(round(horizon / dt))
    times = dt * np.arange(n + 1)
    sol = solve_ivp(
        pendulum_rhs, (0.0, times[-1]), [theta0, omega0], method="RK45", t_eval=times, rtol=1e-6, atol=1e-9, args=(b,)
    )
    if not sol.success:
        raise RuntimeError(f"pendulum integration failed: {sol.message}")
    raw = sol.y.T.copy()
    return Trajectory(times, raw, embed_sphere(raw[:, 0], raw[:, 1]), float(b))


def training_trajectory(problem: ProblemSpec) -> Trajectory:
    return pendulum_truth(problem.coeff, problem.theta0, problem.omega0, problem.horizon, problem.dt)


def pendulum_test_trajectory(problem: ProblemSpec) -> Trajectory:
    return pendulum_truth(problem.coeff, PENDULUM_TEST_THETA0, 0.0, PENDULUM_TEST_HORIZON, problem.dt)


def vector_field(model):
    """Batched ``X -> dX/dt`` for a network or a plain callable."""
    if isinstance(model, NetworkParameters):
        theta = jnp.asarray(model.theta)
        return lambda X: np.asarray(mlp(theta, model.layer_sizes, jnp.asarray(X), model.output_activation))
    return model


def node_test_error(model, problem: ProblemSpec, trajectory: Trajectory | None = None) -> float:
    """Mean squared one-step Euler error of the learned field along the test trajectory."""
    traj = trajectory if trajectory is not None else pendulum_test_trajectory(problem)
    X = traj.states_embedded
    f = np.asarray(vector_field(model)(X[:-1]))
    pred = X[:-1] + problem.dt * f
    return float(np.mean(np.sum((pred - X[1:]) ** 2, axis=1)))
