"""Loss assembly for PINNs, neural ODEs and the augmented-Lagrangian variants.

Every builder returns an :class:`Objective` over the flat parameter vector.
The physical coefficient is a jit argument rather than a constant so that a
curriculum can move it without recompiling.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import jax
import jax.numpy as jnp
import numpy as np

from ..benchmarks import (
    PointSet,
    ProblemSpec,
    Trajectory,
    boundary_terms,
    check_pairing,
    pde_residuals,
    pushforward_field,
)
from ..diffcore import ConfigurationError, NetworkParameters, Objective, mlp

MU_OVERFLOW = 1e12


@dataclass(frozen=True)
class ALMState:
    multipliers: np.ndarray
    mu: float
    mu0: float = 2.0
    gamma: float = 1.2
    max_updates: int = 50

    def __post_init__(self):
        if not self.mu > 0:
            raise ConfigurationError("ALM penalty must be positive")
        if not np.all(np.isfinite(self.multipliers)):
            raise ConfigurationError("ALM multipliers must be finite")

    @property
    def mu_cap(self) -> float:
        return self.mu0 * self.gamma**self.max_updates


@dataclass(frozen=True)
class LossContext:
    problem: ProblemSpec
    points: PointSet | Trajectory
    physics_weight: float = 1.0
    alm_state: ALMState | None = None
    # neural-ODE rollout length from each observed state; None = one rollout from x(0)
    window: int | None = None

    def __post_init__(self):
        if not np.isfinite(self.physics_weight) or self.physics_weight < 0:
            raise ConfigurationError("physics weight must be finite and >= 0")
        if self.window is not None and self.window < 1:
            raise ConfigurationError("rollout window must be >= 1")


def _theta(params):
    return params.theta if isinstance(params, NetworkParameters) else np.asarray(params, dtype=np.float64)


def _point_args(points: PointSet):
    check_pairing(points)
    if len(points.residual) == 0:
        raise ConfigurationError("PINN loss needs at least one residual point")
    return (points.residual, points.initial, points.periodic_left, points.periodic_right, points.dirichlet)


# ---------------------------------------------------------------------------
# PINN


def _pinn_parts(problem, sizes, act, theta, coeff, res, ini, pl, pr, dirich):
    prob = replace(problem, coeff=coeff)
    model = (theta, sizes, act)
    r = pde_residuals(prob, model, res)
    b = boundary_terms(prob, model, PointSet(res, ini, pl, pr, dirich))
    return r, b


def _pinn_value(r, b):
    loss = 0.5 * jnp.mean(r**2)
    if b.shape[0]:
        loss = loss + 0.5 * jnp.mean(b**2)
    return loss


def pinn_field_loss(problem: ProblemSpec, model, points: PointSet) -> float:
    """The PINN loss of any field: a network or an analytic ``u(x, t)``."""
    _point_args(points)
    return float(_pinn_value(pde_residuals(problem, model, points.residual), boundary_terms(problem, model, points)))


def pinn_objective(ctx: LossContext, layer_sizes, output_activation="identity") -> Objective:
    """``(1/2n_res) sum r_i^2 + (1/2n_bc) sum b_j^2``; args ``(coeff, *points)``."""
    problem, sizes = ctx.problem, tuple(layer_sizes)

    def fun(theta, coeff, *pts):
        return _pinn_value(*_pinn_parts(problem, sizes, output_activation, theta, coeff, *pts))

    return Objective(fun, problem.coeff, *_point_args(ctx.points))


def pinn_loss(params: NetworkParameters, ctx: LossContext) -> float:
    return pinn_objective(ctx, params.layer_sizes, params.output_activation)(params.theta)


# ---------------------------------------------------------------------------
# neural ODE on the embedded pendulum


def euler_rollout(theta, sizes, x0, n_steps, dt, act="identity"):
    """Forward-Euler predictions at ``t_1..t_n`` from ``x0``."""

    def step(x, _):
        x_next = x + dt * mlp(theta, sizes, x[None, :], act)[0]
        return x_next, x_next

    _, xs = jax.lax.scan(step, x0, None, length=n_steps)
    return xs


def _require_trajectory(ctx):
    if not isinstance(ctx.points, Trajectory):
        raise ConfigurationError("neural-ODE losses need a Trajectory")
    return ctx.points


def _node_data(theta, sizes, act, dt, X_obs, w, window=None):
    if window is None:
        pred = euler_rollout(theta, sizes, X_obs[0], X_obs.shape[0] - 1, dt, act)
        err = jnp.sum((pred - X_obs[1:]) ** 2, axis=1)
        return jnp.sum(w * err) / jnp.sum(w)
    # one rollout of `window` steps from every observed state that leaves room for it
    n_starts = X_obs.shape[0] - window

    def step(x, _):
        x_next = x + dt * mlp(theta, sizes, x, act)
        return x_next, x_next

    _, xs = jax.lax.scan(step, X_obs[:n_starts], None, length=window)
    idx = jnp.arange(n_starts)[None, :] + jnp.arange(1, window + 1)[:, None]
    err = jnp.mean(jnp.sum((xs - X_obs[idx]) ** 2, axis=2), axis=0)
    return jnp.sum(w * err) / jnp.sum(w)


def n_node_weights(n_obs: int, window: int | None) -> int:
    """Length of the weight vector: observation times, or rollout start states."""
    if window is None:
        return n_obs - 1
    if window > n_obs - 1:
        raise ConfigurationError(f"rollout window {window} exceeds the {n_obs - 1} observed steps")
    return n_obs - window


def node_objective(ctx: LossContext, layer_sizes, output_activation="identity") -> Objective:
    """MSE of Euler rollouts against the observed embedded states; args ``(X_obs, weights)``.

    With ``ctx.window=None`` the whole trajectory is rolled out from ``x(0)``
    and ``weights`` runs over ``t_1..t_n``.  With ``window=k`` every observed
    state starts a ``k``-step rollout and ``weights`` runs over start states.
    Minibatches are 0/1 weight masks.
    """
    traj = _require_trajectory(ctx)
    sizes, dt, window = tuple(layer_sizes), ctx.problem.dt, ctx.window

    def fun(theta, X_obs, w):
        return _node_data(theta, sizes, output_activation, dt, X_obs, w, window)

    X = traj.states_embedded
    return Objective(fun, X, np.ones(n_node_weights(len(X), window)))


def node_loss(params: NetworkParameters, ctx: LossContext) -> float:
    return node_objective(ctx, params.layer_sizes, params.output_activation)(params.theta)


def physics_targets(traj: Trajectory) -> np.ndarray:
    return pushforward_field(traj.states_raw[:, 0], traj.states_raw[:, 1], traj.b)


def pinode_objective(ctx: LossContext, layer_sizes, output_activation="identity") -> Objective:
    """NODE data loss plus ``lambda`` times the mean squared mismatch between the
    network field and the known embedded field at the ground-truth states.
    With ``lambda == 0`` the physics term is dropped entirely."""
    traj = _require_trajectory(ctx)
    sizes, dt, lam, window = tuple(layer_sizes), ctx.problem.dt, float(ctx.physics_weight), ctx.window

    def fun(theta, X_obs, w, F):
        data = _node_data(theta, sizes, output_activation, dt, X_obs, w, window)
        if lam == 0.0:
            return data
        phys = jnp.mean(jnp.sum((mlp(theta, sizes, X_obs, output_activation) - F) ** 2, axis=1))
        return data + lam * phys

    X = traj.states_embedded
    return Objective(fun, X, np.ones(n_node_weights(len(X), window)), physics_targets(traj))


def pinode_loss(params: NetworkParameters, ctx: LossContext) -> float:
    return pinode_objective(ctx, params.layer_sizes, params.output_activation)(params.theta)


# ---------------------------------------------------------------------------
# augmented Lagrangian: residuals are equality constraints, the rest is the objective


def alm_objective_builder(kind: str, ctx: LossContext, layer_sizes, output_activation="identity"):
    """Return ``(objective, constraints)`` for the augmented Lagrangian.

    ``objective`` is an Objective with args ``(multipliers, mu, *data)``;
    ``constraints(theta)`` evaluates the constraint vector at concrete parameters.
    """
    sizes = tuple(layer_sizes)
    if kind == "pinn":
        problem = ctx.problem
        data = (problem.coeff, *_point_args(ctx.points))
        n_c = len(ctx.points.residual)

        def parts(theta, coeff, *pts):
            r, b = _pinn_parts(problem, sizes, output_activation, theta, coeff, *pts)
            f = 0.5 * jnp.mean(b**2) if b.shape[0] else 0.0
            return f, r

    elif kind == "pinode":
        traj = _require_trajectory(ctx)
        dt, window = ctx.problem.dt, ctx.window
        X = traj.states_embedded
        data = (X, np.ones(n_node_weights(len(X), window)), physics_targets(traj))
        n_c = X.size

        def parts(theta, X_obs, w, F):
            f = _node_data(theta, sizes, output_activation, dt, X_obs, w, window)
            c = (mlp(theta, sizes, X_obs, output_activation) - F).ravel()
            return f, c

    else:
        raise ConfigurationError(f"ALM is defined for pinn/pinode, not {kind!r}")

    def fun(theta, lam, mu, *d):
        f, c = parts(theta, *d)
        return f + jnp.dot(lam, c) + 0.5 * mu * jnp.sum(c**2)

    c_jit = jax.jit(lambda theta, *d: parts(theta, *d)[1])

    def constraints(theta):
        return np.asarray(c_jit(jnp.asarray(theta), *data))

    return Objective(fun, np.zeros(n_c), 2.0, *data), constraints


def generic_alm_objective(f_fun, c_fun, n_constraints: int) -> Objective:
    """Augmented Lagrangian of jax functions ``f(theta)`` and ``c(theta)``; args ``(multipliers, mu)``."""

    def fun(theta, lam, mu):
        c = c_fun(theta)
        return f_fun(theta) + jnp.dot(lam, c) + 0.5 * mu * jnp.sum(c**2)

    return Objective(fun, np.zeros(n_constraints), 2.0)


def alm_objective(params, ctx: LossContext, kind: str = "pinn") -> float:
    if ctx.alm_state is None:
        raise ConfigurationError("ALM objective needs alm_state")
    theta = _theta(params)
    sizes = params.layer_sizes
    obj, _ = alm_objective_builder(kind, ctx, sizes)
    st = ctx.alm_state
    return obj.with_args(st.multipliers, st.mu, *obj.args[2:])(theta)


def advance_alm(state: ALMState, constraint_values) -> ALMState:
    """``lambda_i += mu c_i``; then ``mu *= gamma`` up to ``mu0 * gamma**max_updates``."""
    c = np.asarray(constraint_values, dtype=np.float64)
    if c.shape != state.multipliers.shape:
        raise ConfigurationError(f"{c.size} constraint values for {state.multipliers.size} multipliers")
    lam = state.multipliers + state.mu * c
    mu = min(state.mu * state.gamma, state.mu_cap)
    if mu > MU_OVERFLOW:
        raise OverflowError(f"ALM penalty {mu:.3g} exceeds guard {MU_OVERFLOW:g}")
    return replace(state, multipliers=lam, mu=mu)


def alm_update(ctx: LossContext, constraint_values) -> LossContext:
    if ctx.alm_state is None:
        raise ConfigurationError("ALM update needs alm_state")
    return replace(ctx, alm_state=advance_alm(ctx.alm_state, constraint_values))
