import jax.numpy as jnp
import numpy as np
import pytest

from conftest import central_fd_grad, max_rel_err
from regimescope.benchmarks import (
    PointSet,
    ProblemSpec,
    analytic_field,
    pushforward_field,
    sample_points,
    training_trajectory,
)
from regimescope.diffcore import ConfigurationError, NetworkParameters, forward, init_network, param_count
from regimescope.training.losses import (
    ALMState,
    LossContext,
    advance_alm,
    alm_objective,
    alm_objective_builder,
    alm_update,
    euler_rollout,
    node_loss,
    node_objective,
    physics_targets,
    pinn_field_loss,
    pinn_loss,
    pinn_objective,
    pinode_loss,
    pinode_objective,
)

EMPTY = np.zeros((0, 2))


def pendulum_ctx(horizon=2.0, weight=1.0, window=None):
    prob = ProblemSpec("pendulum", 0.5, horizon=horizon)
    return LossContext(prob, training_trajectory(prob), weight, window=window)


@pytest.mark.parametrize("family", ["convection", "reaction", "wave"])
def test_pinn_loss_of_exact_solution_vanishes(family):
    prob = ProblemSpec(family, 3.0, n_res=200, n_bc=64)
    assert pinn_field_loss(prob, analytic_field(prob), sample_points(prob, 0)) <= 1e-15


def test_pinn_loss_single_residual_no_boundary():
    prob = ProblemSpec("convection", 2.0, n_res=1, n_bc=0)
    pts = PointSet(np.array([[1.0, 0.5]]), EMPTY, EMPTY, EMPTY, EMPTY)
    # u = x gives r = beta * 1 = 2, so the loss is 4 / 2
    assert pinn_field_loss(prob, lambda x, t: x, pts) == pytest.approx(2.0, abs=1e-14)


def test_pinn_loss_permutation_invariant():
    prob = ProblemSpec("convection", 10.0, n_res=64, n_bc=32)
    pts = sample_points(prob, 1)
    p = init_network([2, 8, 1], 0)
    rng = np.random.default_rng(0)
    perm = PointSet(
        pts.residual[rng.permutation(64)],
        pts.initial[rng.permutation(len(pts.initial))],
        pts.periodic_left[::-1],
        pts.periodic_right[::-1],
        EMPTY,
    )
    a = pinn_loss(p, LossContext(prob, pts))
    b = pinn_loss(p, LossContext(prob, perm))
    assert a == pytest.approx(b, rel=1e-13)


def test_pinn_network_loss_matches_field_loss():
    prob = ProblemSpec("reaction", 4.0, n_res=50, n_bc=20)
    pts = sample_points(prob, 3)
    p = init_network([2, 6, 1], 2)
    assert pinn_loss(p, LossContext(prob, pts)) == pytest.approx(pinn_field_loss(prob, p, pts), rel=1e-13)


def test_pinn_needs_residual_points():
    prob = ProblemSpec("convection", 2.0)
    with pytest.raises(ConfigurationError):
        pinn_objective(LossContext(prob, PointSet(EMPTY, EMPTY, EMPTY, EMPTY, EMPTY)), (2, 4, 1))


@pytest.mark.parametrize("family", ["convection", "reaction", "wave", "reaction_diffusion"])
def test_pinn_gradient_matches_fd(family):
    prob = ProblemSpec(family, 3.0, n_res=40, n_bc=16)
    obj = pinn_objective(LossContext(prob, sample_points(prob, 0)), (2, 8, 8, 1))
    theta = init_network((2, 8, 8, 1), 1).theta
    g = obj.grad(theta)
    assert max_rel_err(g, central_fd_grad(obj, theta, 1e-5), floor=1e-6) < 1e-5


def test_euler_step_of_linear_decay():
    theta = NetworkParameters((3, 3), np.concatenate([-np.eye(3).ravel(), np.zeros(3)])).theta
    xs = np.asarray(euler_rollout(jnp.asarray(theta), (3, 3), jnp.array([1.0, 0.0, 0.0]), 1, 0.05))
    assert xs[0] == pytest.approx([0.95, 0.0, 0.0], abs=1e-15)


def test_node_loss_of_zero_field():
    ctx = pendulum_ctx()
    X = ctx.points.states_embedded
    zero = NetworkParameters((3, 16, 3), np.zeros(param_count((3, 16, 3))))
    expect = np.mean(np.sum((X[1:] - X[0]) ** 2, axis=1))
    assert node_loss(zero, ctx) == pytest.approx(expect, rel=1e-13)


def test_node_windowed_zero_field():
    ctx = pendulum_ctx(window=1)
    X = ctx.points.states_embedded
    zero = NetworkParameters((3, 4, 3), np.zeros(param_count((3, 4, 3))))
    assert node_loss(zero, ctx) == pytest.approx(np.mean(np.sum(np.diff(X, axis=0) ** 2, axis=1)), rel=1e-13)


def test_node_window_two_averages_both_horizons():
    ctx = pendulum_ctx(window=2)
    X = ctx.points.states_embedded
    zero = NetworkParameters((3, 4, 3), np.zeros(param_count((3, 4, 3))))
    one = np.sum((X[1:-1] - X[:-2]) ** 2, axis=1)
    two = np.sum((X[2:] - X[:-2]) ** 2, axis=1)
    assert node_loss(zero, ctx) == pytest.approx(np.mean(0.5 * (one + two)), rel=1e-13)


def test_node_window_too_long():
    with pytest.raises(ConfigurationError):
        node_objective(pendulum_ctx(horizon=0.1, window=5), (3, 4, 3))


def test_single_step_exact_field_error_is_fourth_order():
    errs = []
    for dt in (0.02, 0.01):
        prob = ProblemSpec("pendulum", 0.5, horizon=dt, dt=dt)
        traj = training_trajectory(prob)
        th, om = traj.states_raw[0]
        x1 = traj.states_embedded[0] + dt * pushforward_field(th, om, 0.5)
        errs.append(np.sum((x1 - traj.states_embedded[1]) ** 2))
    assert 12 < errs[0] / errs[1] < 20  # 16 for O(dt^4)


def test_pinode_without_physics_is_node_bitwise():
    p = init_network((3, 16, 16, 3), 4)
    a = node_loss(p, pendulum_ctx())
    b = pinode_loss(p, pendulum_ctx(weight=0.0))
    assert a == b
    ga = node_objective(pendulum_ctx(), p.layer_sizes).grad(p.theta)
    gb = pinode_objective(pendulum_ctx(weight=0.0), p.layer_sizes).grad(p.theta)
    assert np.array_equal(ga, gb)


def test_pinode_sums_data_and_physics():
    p = init_network((3, 8, 3), 1)
    ctx = pendulum_ctx(weight=1.0)
    X = ctx.points.states_embedded
    phys = np.mean(np.sum((forward(p, X) - physics_targets(ctx.points)) ** 2, axis=1))
    assert pinode_loss(p, ctx) == pytest.approx(node_loss(p, ctx) + phys, rel=1e-12)
    ctx3 = pendulum_ctx(weight=3.0)
    assert pinode_loss(p, ctx3) == pytest.approx(node_loss(p, ctx) + 3 * phys, rel=1e-12)


def test_pinode_gradient_matches_fd():
    ctx = pendulum_ctx(horizon=0.5, weight=0.7)
    obj = pinode_objective(ctx, (3, 6, 3))
    theta = init_network((3, 6, 3), 0).theta
    assert max_rel_err(obj.grad(theta), central_fd_grad(obj, theta, 1e-5), floor=1e-6) < 1e-5


def _alm_parts(ctx, p):
    obj, constraints = alm_objective_builder("pinn", ctx, p.layer_sizes)
    c = constraints(p.theta)
    return obj, c


def test_alm_zero_multipliers_is_quadratic_penalty():
    prob = ProblemSpec("convection", 5.0, n_res=30, n_bc=10)
    pts = sample_points(prob, 0)
    p = init_network((2, 6, 1), 0)
    mu = 3.5
    ctx = LossContext(prob, pts, alm_state=ALMState(np.zeros(30), mu))
    _, c = _alm_parts(ctx, p)
    f = pinn_loss(p, LossContext(prob, pts)) - 0.5 * np.mean(c**2)
    assert alm_objective(p, ctx) == pytest.approx(f + 0.5 * mu * np.sum(c**2), rel=1e-12)


def test_alm_objective_with_multipliers():
    prob = ProblemSpec("convection", 5.0, n_res=30, n_bc=10)
    pts = sample_points(prob, 0)
    p = init_network((2, 6, 1), 0)
    lam = np.linspace(-1, 1, 30)
    ctx0 = LossContext(prob, pts, alm_state=ALMState(np.zeros(30), 2.0))
    ctx = LossContext(prob, pts, alm_state=ALMState(lam, 2.0))
    _, c = _alm_parts(ctx, p)
    assert alm_objective(p, ctx) - alm_objective(p, ctx0) == pytest.approx(lam @ c, rel=1e-10)


def test_alm_update_rule():
    s = advance_alm(ALMState(np.zeros(1), 2.0), [0.5])
    assert s.multipliers[0] == 1.0 and s.mu == pytest.approx(2.4)
    s0 = ALMState(np.array([0.3, -0.2]), 2.0)
    assert np.array_equal(advance_alm(s0, np.zeros(2)).multipliers, s0.multipliers)


def test_alm_constraint_satisfied_objective_is_f():
    # a linear field with beta * a + b = 0 satisfies u_t + beta u_x = 0 exactly
    prob = ProblemSpec("convection", 2.0, n_res=10, n_bc=8)
    pts = sample_points(prob, 0)
    p = NetworkParameters((2, 1), np.array([1.0, -2.0, 0.1]))
    ctx = LossContext(prob, pts, alm_state=ALMState(np.full(10, 0.7), 5.0))
    _, c = _alm_parts(ctx, p)
    assert np.max(np.abs(c)) < 1e-14
    f = pinn_loss(p, LossContext(prob, pts))
    assert alm_objective(p, ctx) == pytest.approx(f, rel=1e-12)


def test_alm_penalty_capped_and_guarded():
    s = ALMState(np.zeros(1), 2.0, max_updates=3)
    for _ in range(10):
        s = advance_alm(s, [0.0])
    assert s.mu == pytest.approx(2.0 * 1.2**3)
    with pytest.raises(OverflowError):
        advance_alm(ALMState(np.zeros(1), 1e12, mu0=1.0, gamma=10.0, max_updates=100), [0.0])


def test_alm_update_on_context():
    prob = ProblemSpec("convection", 2.0, n_res=2, n_bc=0)
    ctx = LossContext(prob, sample_points(prob, 0), alm_state=ALMState(np.zeros(2), 2.0))
    assert np.array_equal(alm_update(ctx, [0.5, -1.0]).alm_state.multipliers, [1.0, -2.0])
    with pytest.raises(ConfigurationError):
        alm_update(LossContext(prob, sample_points(prob, 0)), [0.0, 0.0])
    with pytest.raises(ConfigurationError):
        advance_alm(ALMState(np.zeros(2), 2.0), [0.0])


def test_alm_for_node_is_rejected():
    with pytest.raises(ConfigurationError):
        alm_objective_builder("node", pendulum_ctx(), (3, 4, 3))


def test_context_validation():
    prob = ProblemSpec("pendulum", 0.5, horizon=1.0)
    with pytest.raises(ConfigurationError):
        LossContext(prob, training_trajectory(prob), physics_weight=-1.0)
    with pytest.raises(ConfigurationError):
        LossContext(prob, training_trajectory(prob), window=0)
    with pytest.raises(ConfigurationError):
        node_objective(LossContext(prob, sample_points(ProblemSpec("convection", 1.0), 0)), (3, 4, 3))
