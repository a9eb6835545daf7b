"""Dense tanh MLPs with input jets, parameter gradients and Hessian-vector products.

Parameters live in one flat float64 vector, laid out layer by layer with the
weight matrix (row-major, shape ``(n_in, n_out)``) before the bias.  All
differentiable code is written in ``jax.numpy`` so losses built on top of it
can be jitted and differentiated with respect to that flat vector.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import jax
import jax.numpy as jnp
import numpy as np

jax.config.update("jax_enable_x64", True)

CHECKPOINT_MAGIC = b"RGSCOPE1"
FD_HVP_EPS = 1e-5


class ConfigurationError(ValueError):
    """Invalid architecture, problem or run configuration."""


class NonFiniteError(FloatingPointError):
    """A loss or gradient evaluated to inf/nan; carries the offending parameters."""

    def __init__(self, message: str, theta: np.ndarray | None = None):
        super().__init__(message)
        self.theta = None if theta is None else np.array(theta, copy=True)


def param_count(layer_sizes: Sequence[int]) -> int:
    return int(sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:])))


def _check_sizes(layer_sizes: Sequence[int]) -> tuple[int, ...]:
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ConfigurationError(f"layer_sizes needs >= 2 positive entries, got {list(layer_sizes)}")
    return sizes


@dataclass(frozen=True)
class NetworkParameters:
    layer_sizes: tuple[int, ...]
    theta: np.ndarray
    output_activation: str = "identity"

    def __post_init__(self):
        sizes = _check_sizes(self.layer_sizes)
        theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if theta.size != param_count(sizes):
            raise ConfigurationError(
                f"theta has {theta.size} entries, layer sizes {list(sizes)} need {param_count(sizes)}"
            )
        if not np.all(np.isfinite(theta)):
            raise NonFiniteError("non-finite parameter vector", theta)
        if self.output_activation not in ("identity", "tanh"):
            raise ConfigurationError(f"unknown output activation {self.output_activation!r}")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "theta", theta)

    @property
    def n_params(self) -> int:
        return self.theta.size

    def with_theta(self, theta) -> "NetworkParameters":
        return NetworkParameters(self.layer_sizes, np.asarray(theta, dtype=np.float64), self.output_activation)

    def blocks(self) -> list[slice]:
        """Slices of ``theta`` for each weight block and each bias block, in layout order."""
        return layer_blocks(self.layer_sizes)


def layer_blocks(layer_sizes: Sequence[int]) -> list[slice]:
    out, i = [], 0
    for a, b in zip(layer_sizes[:-1], layer_sizes[1:]):
        out.append(slice(i, i + a * b))
        i += a * b
        out.append(slice(i, i + b))
        i += b
    return out


def init_network(layer_sizes: Sequence[int], seed: int, output_activation: str = "identity") -> NetworkParameters:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    sizes = _check_sizes(layer_sizes)
    rng = np.random.default_rng(seed)
    chunks = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (a + b))
        chunks.append(rng.uniform(-limit, limit, size=a * b))
        chunks.append(np.zeros(b))
    return NetworkParameters(sizes, np.concatenate(chunks), output_activation)


def unpack(theta, layer_sizes: Sequence[int]):
    """Split a flat vector into ``[(W, b), ...]`` with ``W`` of shape ``(n_in, n_out)``."""
    layers, i = [], 0
    for a, b in zip(layer_sizes[:-1], layer_sizes[1:]):
        W = theta[i : i + a * b].reshape(a, b)
        i += a * b
        layers.append((W, theta[i : i + b]))
        i += b
    return layers


def mlp(theta, layer_sizes, X, output_activation="identity"):
    """Batched forward pass, ``X`` of shape ``(n, d_in)``; traceable by jax."""
    layers = unpack(theta, layer_sizes)
    h = X
    for k, (W, b) in enumerate(layers):
        h = h @ W + b
        if k < len(layers) - 1 or output_activation == "tanh":
            h = jnp.tanh(h)
    return h


def mlp_jets(theta, layer_sizes, X, axes=(0,), second_order=True, output_activation="identity"):
    """Propagate value and per-axis first/second input derivatives through the MLP.

    Returns ``(value, d1, d2)`` where ``d1[a]`` and ``d2[a]`` have the shape of
    ``value`` and hold the derivative along input coordinate ``axes[a]``.
    ``d2`` is None when ``second_order`` is False.
    """
    layers = unpack(theta, layer_sizes)
    last = len(layers) - 1
    h, d1, d2 = X, None, None
    for k, (W, b) in enumerate(layers):
        z = h @ W + b
        if k == 0:
            # d(x)/d(x_axis) is a unit vector, so the first affine map just picks a row of W
            dz = [jnp.broadcast_to(W[a], z.shape) for a in axes]
            ddz = [jnp.zeros_like(z) for _ in axes] if second_order else None
        else:
            dz = [g @ W for g in d1]
            ddz = [g @ W for g in d2] if second_order else None
        if k < last or output_activation == "tanh":
            s = jnp.tanh(z)
            sp = 1.0 - s * s
            h = s
            d1 = [sp * g for g in dz]
            if second_order:
                spp = -2.0 * s * sp
                d2 = [spp * g * g + sp * gg for g, gg in zip(dz, ddz)]
        else:
            h, d1, d2 = z, dz, ddz
    return h, d1, d2


def _as_batch(params: NetworkParameters, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.layer_sizes[0]:
        raise ConfigurationError(f"input of shape {x.shape} does not match input dim {params.layer_sizes[0]}")
    return X, single


def forward(params: NetworkParameters, x) -> np.ndarray:
    X, single = _as_batch(params, x)
    out = np.asarray(mlp(jnp.asarray(params.theta), params.layer_sizes, X, params.output_activation))
    return out[0] if single else out


class Jet2(NamedTuple):
    value: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


def forward_jet(params: NetworkParameters, x, axis_index: int) -> Jet2:
    """Value, first and second derivative of every output along one input axis."""
    X, single = _as_batch(params, x)
    if not 0 <= axis_index < params.layer_sizes[0]:
        raise ConfigurationError(f"axis {axis_index} out of range for input dim {params.layer_sizes[0]}")
    v, d1, d2 = mlp_jets(
        jnp.asarray(params.theta), params.layer_sizes, X, (axis_index,), True, params.output_activation
    )
    v, g, gg = (np.asarray(a) for a in (v, d1[0], d2[0]))
    if single:
        v, g, gg = v[0], g[0], gg[0]
    return Jet2(v, g, gg)


class Objective:
    """A scalar loss of the flat parameter vector.

    ``fun(theta, *args)`` must be jax-traceable.  ``args`` are passed as jit
    arguments (not baked-in constants), so large point sets do not bloat the
    compiled program.
    """

    def __init__(self, fun: Callable, *args):
        self.fun = fun
        self.args = tuple(jnp.asarray(a) if isinstance(a, np.ndarray) else a for a in args)
        self._value = jax.jit(fun)
        self._value_and_grad = jax.jit(jax.value_and_grad(fun))

        def hvp(theta, v, *a):
            return jax.jvp(lambda t: jax.grad(fun)(t, *a), (theta,), (v,))[1]

        self._hvp = jax.jit(hvp)
        self.n_evals = 0

    def with_args(self, *args) -> "Objective":
        """Same compiled loss with different data arguments (no recompilation for equal shapes)."""
        other = object.__new__(Objective)
        other.__dict__.update(self.__dict__)
        other.args = tuple(jnp.asarray(a) if isinstance(a, np.ndarray) else a for a in args)
        other.n_evals = 0
        return other

    def __call__(self, theta) -> float:
        self.n_evals += 1
        return float(self._value(jnp.asarray(theta, dtype=jnp.float64), *self.args))

    def value_and_grad(self, theta) -> tuple[float, np.ndarray]:
        self.n_evals += 1
        f, g = self._value_and_grad(jnp.asarray(theta, dtype=jnp.float64), *self.args)
        return float(f), np.asarray(g)

    def grad(self, theta) -> np.ndarray:
        return self.value_and_grad(theta)[1]

    def hvp_exact(self, theta, v) -> np.ndarray:
        return np.asarray(self._hvp(jnp.asarray(theta, dtype=jnp.float64), jnp.asarray(v, dtype=jnp.float64), *self.args))


def as_objective(loss_fn) -> Objective:
    return loss_fn if isinstance(loss_fn, Objective) else Objective(loss_fn)


def _theta_of(params) -> np.ndarray:
    if isinstance(params, NetworkParameters):
        return params.theta
    return np.asarray(params, dtype=np.float64).reshape(-1)


def loss_gradient(loss_fn, params) -> np.ndarray:
    """Exact gradient of ``loss_fn`` at ``params``; raises NonFiniteError on inf/nan."""
    obj = as_objective(loss_fn)
    theta = _theta_of(params)
    f, g = obj.value_and_grad(theta)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteError(f"non-finite loss/gradient (loss={f})", theta)
    return g


@dataclass
class HvpOracle:
    """Matrix-free ``v -> H v`` with ``H`` the loss Hessian at a fixed point."""

    objective: Objective
    theta: np.ndarray
    mode: str = "fd"
    eps: float = FD_HVP_EPS
    n_calls: int = field(default=0, init=False)

    @property
    def dim(self) -> int:
        return self.theta.size

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != self.theta.shape:
            raise ValueError(f"direction has shape {v.shape}, expected {self.theta.shape}")
        self.n_calls += 1
        if self.mode == "exact":
            hv = self.objective.hvp_exact(self.theta, v)
        else:
            nv = np.linalg.norm(v)
            if nv == 0.0:
                return np.zeros_like(v)
            eps = self.eps / max(1.0, nv)
            _, gp = self.objective.value_and_grad(self.theta + eps * v)
            _, gm = self.objective.value_and_grad(self.theta - eps * v)
            hv = (gp - gm) / (2.0 * eps)
        if not np.all(np.isfinite(hv)):
            raise NonFiniteError("non-finite Hessian-vector product", self.theta)
        return hv


def make_hvp(loss_fn, params, mode: str = "fd") -> HvpOracle:
    if mode not in ("fd", "exact"):
        raise ConfigurationError(f"unknown HVP mode {mode!r} (expected 'fd' or 'exact')")
    return HvpOracle(as_objective(loss_fn), np.array(_theta_of(params), dtype=np.float64), mode)


def save_checkpoint(params: NetworkParameters, path) -> None:
    """Binary record: magic, layer count, sizes (uint32), activation tag, theta (<f8)."""
    sizes = params.layer_sizes
    act = params.output_activation.encode()
    header = CHECKPOINT_MAGIC + struct.pack("<I", len(sizes)) + struct.pack(f"<{len(sizes)}I", *sizes)
    header += struct.pack("<I", len(act)) + act
    Path(path).write_bytes(header + params.theta.astype("<f8").tobytes())


def load_checkpoint(path) -> NetworkParameters:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ConfigurationError(f"{path}: not a regimescope checkpoint")
    (n,) = struct.unpack_from("<I", raw, 8)
    sizes = struct.unpack_from(f"<{n}I", raw, 12)
    off = 12 + 4 * n
    (na,) = struct.unpack_from("<I", raw, off)
    act = raw[off + 4 : off + 4 + na].decode()
    theta = np.frombuffer(raw, dtype="<f8", offset=off + 4 + na).astype(np.float64)
    return NetworkParameters(tuple(sizes), theta, act)
