import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import central_fd_grad, max_rel_err
from regimescope.diffcore import (
    ConfigurationError,
    NetworkParameters,
    NonFiniteError,
    Objective,
    forward,
    forward_jet,
    init_network,
    load_checkpoint,
    loss_gradient,
    make_hvp,
    param_count,
    save_checkpoint,
)


def test_param_count_pinn_default():
    # 2*50+50 + 3*(50*50+50) + 50*1+1
    assert init_network([2, 50, 50, 50, 50, 1], seed=0).n_params == 7851


def test_param_count_single_weight():
    assert init_network([1, 1], seed=123).n_params == 2


def test_init_is_deterministic():
    a = init_network([3, 16, 16, 3], 7)
    b = init_network([3, 16, 16, 3], 7)
    assert np.array_equal(a.theta, b.theta)
    assert not np.array_equal(a.theta, init_network([3, 16, 16, 3], 8).theta)


def test_init_biases_zero_and_glorot_bounds():
    p = init_network([4, 10, 2], 0)
    blocks = p.blocks()
    assert np.all(p.theta[blocks[1]] == 0) and np.all(p.theta[blocks[3]] == 0)
    assert np.max(np.abs(p.theta[blocks[0]])) <= np.sqrt(6 / 14)


@pytest.mark.parametrize("sizes", [[], [3], [2, 0, 1], [2, -1]])
def test_bad_layer_sizes(sizes):
    with pytest.raises(ConfigurationError):
        init_network(sizes, 0)


def test_theta_length_checked():
    with pytest.raises(ConfigurationError):
        NetworkParameters((2, 1), np.zeros(5))


def test_nonfinite_theta_rejected():
    with pytest.raises(NonFiniteError):
        NetworkParameters((1, 1), np.array([np.nan, 0.0]))


def test_zero_network_outputs_zero():
    p = NetworkParameters((2, 5, 1), np.zeros(param_count((2, 5, 1))))
    assert forward(p, [0.3, -4.0])[0] == 0.0


def test_linear_single_layer():
    p = NetworkParameters((1, 1), np.array([2.0, 0.0]))
    assert forward(p, [3.0])[0] == 6.0


def test_pendulum_net_finite():
    p = init_network([1, 16, 16, 16, 2], 0)
    out = forward(p, [0.7])
    assert out.shape == (2,) and np.all(np.isfinite(out))


def test_input_dimension_checked():
    with pytest.raises(ConfigurationError):
        forward(init_network([2, 3, 1], 0), [1.0, 2.0, 3.0])


def test_jet_of_tanh_at_zero():
    p = NetworkParameters((1, 1), np.array([1.0, 0.0]), "tanh")
    jet = forward_jet(p, [0.0], 0)
    assert (jet.value[0], jet.d1[0], jet.d2[0]) == (0.0, 1.0, 0.0)


def test_jet_of_linear_map():
    p = NetworkParameters((1, 1), np.array([2.0, 0.0]))
    jet = forward_jet(p, [5.0], 0)
    assert (jet.value[0], jet.d1[0], jet.d2[0]) == (10.0, 2.0, 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_jet_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = init_network([2, 8, 8, 2], seed)
    x = rng.uniform(-1, 1, 2)
    h = 1e-4
    for axis in (0, 1):
        e = np.zeros(2)
        e[axis] = h
        f0, fp, fm = forward(p, x), forward(p, x + e), forward(p, x - e)
        jet = forward_jet(p, x, axis)
        # FD truncation is O(h^2) ~ 1e-8 relative, well under the bound
        assert max_rel_err(jet.d1, (fp - fm) / (2 * h), floor=1e-3) < 1e-6
        d2_fd = (fp - 2 * f0 + fm) / h**2
        assert np.max(np.abs(jet.d2 - d2_fd)) < 1e-6 * max(1.0, np.max(np.abs(jet.d2)))


@given(seed=st.integers(0, 10_000), n=st.integers(1, 6))
def test_jet_value_channel_equals_forward(seed, n):
    p = init_network([3, 6, 2], seed % 97)
    X = np.random.default_rng(seed).uniform(-2, 2, (n, 3))
    jet = forward_jet(p, X, seed % 3)
    assert np.max(np.abs(jet.value - forward(p, X))) <= 1e-12


def test_gradient_of_half_squared_norm():
    g = loss_gradient(lambda t: 0.5 * jnp.sum(t**2), np.array([1.0, -2.0]))
    assert np.allclose(g, [1.0, -2.0], atol=0, rtol=0)


def test_gradient_of_constant_is_zero():
    g = loss_gradient(lambda t: 3.0 + 0.0 * jnp.sum(t), np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(g, np.zeros(3))


def test_gradient_nonfinite_raises():
    with pytest.raises(NonFiniteError):
        loss_gradient(lambda t: jnp.log(t[0]), np.array([-1.0]))


def test_gradient_matches_fd_on_mlp_regression():
    p = init_network([2, 6, 6, 1], 3)
    X = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    y = np.sin(X[:, 0])
    from regimescope.diffcore import mlp

    def loss(t):
        return 0.5 * jnp.mean((mlp(t, p.layer_sizes, X)[:, 0] - y) ** 2)

    g = loss_gradient(loss, p)
    fd = central_fd_grad(Objective(loss), p.theta, 1e-5)
    assert max_rel_err(g, fd, floor=1e-6) < 1e-5


def test_hvp_diag():
    obj = Objective(lambda t: 0.5 * (3 * t[0] ** 2 + t[1] ** 2))
    for mode in ("fd", "exact"):
        hvp = make_hvp(obj, np.array([0.4, -1.0]), mode)
        assert np.allclose(hvp(np.array([1.0, 1.0])), [3.0, 1.0], atol=1e-9)
        assert np.array_equal(hvp(np.zeros(2)), np.zeros(2))


def test_hvp_unknown_mode():
    with pytest.raises(ConfigurationError):
        make_hvp(lambda t: jnp.sum(t), np.zeros(2), "magic")


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 1000))
def test_hvp_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    obj = Objective(lambda t: jnp.sum(jnp.tanh(t) ** 3) + jnp.sum(t[:-1] * t[1:]) ** 2)
    theta = rng.standard_normal(6)
    v, u = rng.standard_normal(6), rng.standard_normal(6)
    for mode, tol in (("exact", 1e-6), ("fd", 1e-3)):
        hvp = make_hvp(obj, theta, mode)
        lhs = hvp(a * v + b * u)
        rhs = a * hvp(v) + b * hvp(u)
        scale = np.linalg.norm(a * hvp(v)) + np.linalg.norm(b * hvp(u))
        assert np.linalg.norm(lhs - rhs) <= tol * max(scale, 1e-12) + 1e-9


def test_fd_hvp_exact_on_quadratic():
    A = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, -0.3], [0.0, -0.3, 4.0]])
    obj = Objective(lambda t: 0.5 * t @ (jnp.asarray(A) @ t))
    v = np.array([0.3, -1.0, 2.0])
    hv = make_hvp(obj, np.array([1.0, 2.0, 3.0]), "fd")(v)
    assert np.allclose(hv, A @ v, rtol=0, atol=1e-9)


def test_checkpoint_roundtrip(tmp_path):
    p = init_network([2, 4, 1], 5, "tanh")
    save_checkpoint(p, tmp_path / "c.bin")
    q = load_checkpoint(tmp_path / "c.bin")
    assert q.layer_sizes == p.layer_sizes and q.output_activation == "tanh"
    assert np.array_equal(q.theta, p.theta)


def test_checkpoint_magic_checked(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"notackpt" + bytes(16))
    with pytest.raises(ConfigurationError):
        load_checkpoint(tmp_path / "x.bin")
