"""Recipes: model + problem + optimizer pipeline, and the driver that runs them."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..benchmarks import (
    PDE_FAMILIES,
    ProblemSpec,
    node_test_error,
    pendulum_truth,
    pinn_test_error,
    sample_points,
    training_trajectory,
)
from ..diffcore import (
    ConfigurationError,
    HvpOracle,
    NetworkParameters,
    NonFiniteError,
    Objective,
    init_network,
    save_checkpoint,
)
from ..landscape.spectrum import top_eigs
from .losses import LossContext, alm_objective_builder, node_objective, pinn_objective, pinode_objective
from .optim import OptimizerConfig, adam_run, alm_loop, run_inner
from .trace import TrainingTrace, write_json

MODELS = ("pinn", "node", "pinode")
DEFAULT_LAYERS = {"pinn": (2, 50, 50, 50, 50, 1), "node": (3, 16, 16, 16, 3), "pinode": (3, 16, 16, 16, 3)}


@dataclass(frozen=True)
class Recipe:
    model: str
    problem: ProblemSpec
    pipeline: tuple[OptimizerConfig, ...] = (OptimizerConfig(),)
    layer_sizes: tuple[int, ...] | None = None
    output_activation: str = "identity"
    seed: int = 0
    physics_weight: float = 1.0
    # NODE/PINODE rollout length per observed start state; None = one rollout from x(0)
    node_window: int | None = None
    # sample lambda_max every k iterations (0 = never)
    lambda_max_every: int = 0
    lambda_max_iters: int = 30
    reference_cache: str | None = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigurationError(f"unknown model {self.model!r}; expected one of {MODELS}")
        pde = self.problem.family in PDE_FAMILIES
        if (self.model == "pinn") != pde:
            raise ConfigurationError(f"model {self.model!r} does not fit problem family {self.problem.family!r}")
        if self.layer_sizes is None:
            object.__setattr__(self, "layer_sizes", DEFAULT_LAYERS[self.model])
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        object.__setattr__(self, "pipeline", tuple(self.pipeline))
        want_in, want_out = (2, 1) if pde else (3, 3)
        if self.layer_sizes[0] != want_in or self.layer_sizes[-1] != want_out:
            raise ConfigurationError(f"{self.model} networks map {want_in} inputs to {want_out} outputs")
        if self.lambda_max_every < 0 or self.lambda_max_iters < 1:
            raise ConfigurationError("lambda_max_every must be >= 0 and lambda_max_iters >= 1")
        if self.node_window is not None and (self.model == "pinn" or self.node_window < 1):
            raise ConfigurationError("node_window applies to node/pinode and must be >= 1")
        if self.physics_weight < 0 or not math.isfinite(self.physics_weight):
            raise ConfigurationError("physics_weight must be finite and >= 0")
        for stage in self.pipeline:
            if stage.method == "alm" and self.model == "node":
                raise ConfigurationError("ALM needs a physics residual; use pinn or pinode")
            if stage.method == "curriculum" and self.model == "node":
                raise ConfigurationError("curriculum needs a physics coefficient; use pinn or pinode")


@dataclass
class TrainingSetup:
    """Everything derived from a recipe before the first optimizer step."""

    recipe: Recipe
    params: NetworkParameters
    ctx: LossContext
    objective: Objective

    def stage_objective(self, coeff: float) -> Objective:
        """The training loss with the physical coefficient replaced (same compiled program)."""
        r = self.recipe
        if r.model == "pinn":
            return self.objective.with_args(coeff, *self.objective.args[1:])
        traj = pendulum_truth(coeff, r.problem.theta0, r.problem.omega0, r.problem.horizon, r.problem.dt)
        ctx = replace(self.ctx, problem=replace(r.problem, coeff=coeff), points=traj)
        return self.objective.with_args(*pinode_objective(ctx, r.layer_sizes, r.output_activation).args)


def build(recipe: Recipe) -> TrainingSetup:
    params = init_network(recipe.layer_sizes, recipe.seed, recipe.output_activation)
    problem = recipe.problem
    if recipe.model == "pinn":
        ctx = LossContext(problem, sample_points(problem, recipe.seed))
        obj = pinn_objective(ctx, recipe.layer_sizes, recipe.output_activation)
    else:
        weight = 0.0 if recipe.model == "node" else recipe.physics_weight
        ctx = LossContext(problem, training_trajectory(problem), weight, window=recipe.node_window)
        build_obj = node_objective if recipe.model == "node" else pinode_objective
        obj = build_obj(ctx, recipe.layer_sizes, recipe.output_activation)
    return TrainingSetup(recipe, params, ctx, obj)


def minibatches(obj: Objective, batch_size: int):
    """Per-epoch objectives that each weight a random subset of observation times."""
    X, w = obj.args[0], obj.args[1]
    n = int(np.asarray(w).size)
    rest = obj.args[2:]

    def epoch(rng: np.random.Generator):
        perm = rng.permutation(n)
        out = []
        for start in range(0, n, batch_size):
            mask = np.zeros(n)
            mask[perm[start : start + batch_size]] = 1.0
            out.append(obj.with_args(X, mask, *rest))
        return out

    return epoch


def curriculum_coefficients(target: float, speed: float, n_stages: int | None = None) -> list[float]:
    """``target * min(1, speed * k)`` for ``k = 1..K``; K defaults to ``ceil(1 / speed)``."""
    if not speed > 0:
        raise ConfigurationError("curriculum speed must be positive")
    K = math.ceil(1.0 / speed - 1e-12) if n_stages is None else n_stages
    coeffs = [target * min(1.0, speed * k) for k in range(1, K + 1)]
    coeffs[-1] = target
    return coeffs


def _lambda_sampler(recipe: Recipe, base: Objective):
    every = recipe.lambda_max_every
    if not every:
        return None

    def callback(theta, trace: TrainingTrace):
        if trace.last_iter % every == 0:
            _sample_lambda(recipe, base, theta, trace)

    return callback


def _sample_lambda(recipe, base, theta, trace):
    hvp = HvpOracle(base, np.asarray(theta), "fd")
    eig = top_eigs(hvp, hvp.dim, 1, recipe.lambda_max_iters, 1e-4, recipe.seed, oversample=0)
    trace.lambda_max.append((trace.last_iter, eig[0][0]))


def _run_stage(setup: TrainingSetup, cfg: OptimizerConfig, theta, trace, tag, callback, seed):
    recipe = setup.recipe
    batches = None
    if cfg.batch_size is not None and recipe.model != "pinn":
        batches = minibatches(setup.objective, cfg.batch_size)
    if cfg.method in ("adam", "lbfgs", "nncg"):
        if cfg.method == "adam":
            return adam_run(setup.objective, theta, cfg, trace, tag, callback, batches, seed)
        return run_inner(cfg.method, setup.objective, theta, cfg, trace, tag, callback, seed)
    if cfg.method == "curriculum":
        return curriculum_stages(setup, cfg, theta, trace, callback, seed)
    alm_obj, constraints = alm_objective_builder(recipe.model, setup.ctx, recipe.layer_sizes, recipe.output_activation)
    trace, state = alm_loop(alm_obj, constraints, theta, cfg, trace, tag, callback, seed)
    return trace


def curriculum_stages(setup: TrainingSetup, cfg: OptimizerConfig, theta, trace=None, callback=None, seed=0):
    """Warm-started stages at ``C * min(1, s k)``; each stage runs the inner optimizer."""
    target = setup.recipe.problem.coeff
    inner = replace(cfg, method=cfg.inner, epochs=cfg.cl_stage_epochs)
    for k, coeff in enumerate(curriculum_coefficients(target, cfg.cl_speed, cfg.cl_stages), start=1):
        obj = setup.stage_objective(coeff)
        batches = minibatches(obj, cfg.batch_size) if cfg.batch_size and setup.recipe.model != "pinn" else None
        tag = f"cl{k}:{coeff:g}"
        if inner.method == "adam":
            trace = adam_run(obj, theta, inner, trace, tag, callback, batches, seed + k)
        else:
            trace = run_inner(inner.method, obj, theta, inner, trace, tag, callback, seed + k)
        theta = trace.theta
        trace.events.append(f"curriculum stage {k}: coefficient {coeff:g}, status {trace.status}")
    trace.status = "completed"
    return trace


def curriculum_run(recipe: Recipe) -> TrainingTrace:
    """Train a recipe whose pipeline is a single curriculum stage."""
    if [c.method for c in recipe.pipeline] != ["curriculum"]:
        recipe = replace(recipe, pipeline=(OptimizerConfig(method="curriculum"),))
    return train(recipe)


@dataclass
class TrainingResult:
    trace: TrainingTrace
    params: NetworkParameters
    summary: dict = field(default_factory=dict)


def train(recipe: Recipe, out_dir=None) -> TrainingTrace:
    """Run every pipeline stage in order; returns the trace (``trace.theta`` is final)."""
    return train_full(recipe, out_dir).trace


def train_full(recipe: Recipe, out_dir=None, evaluate: bool = True) -> TrainingResult:
    setup = build(recipe)
    theta = setup.params.theta.copy()
    trace = TrainingTrace(theta=theta)
    callback = _lambda_sampler(recipe, setup.objective)
    start = time.perf_counter()
    try:
        f0, g0 = setup.objective.value_and_grad(theta)
        trace.append(f0, np.linalg.norm(g0), 0.0, "init")
        if callback is not None:
            callback(theta, trace)
        for i, cfg in enumerate(recipe.pipeline):
            tag = cfg.method if len(recipe.pipeline) == 1 else f"{i}:{cfg.method}"
            trace = _run_stage(setup, cfg, theta, trace, tag, callback, recipe.seed)
            theta = trace.theta
        status = trace.status
    except NonFiniteError as err:
        status = "diverged"
        trace.events.append(f"diverged: {err}")
        if trace.theta is None or not np.all(np.isfinite(trace.theta)):
            trace.theta = theta
    trace.status = status
    trace.wall_seconds = time.perf_counter() - start
    params = setup.params.with_theta(trace.theta) if np.all(np.isfinite(trace.theta)) else setup.params
    summary = summarize(recipe, setup, trace, params) if evaluate else {}
    if out_dir is not None:
        persist(out_dir, trace, params, summary)
    return TrainingResult(trace, params, summary)


def summarize(recipe: Recipe, setup: TrainingSetup, trace: TrainingTrace, params: NetworkParameters) -> dict:
    """Final full-batch training loss (target coefficient, no ALM terms) and test error."""
    train_loss = float(setup.objective(params.theta))
    extra = {}
    if recipe.model == "pinn":
        test_error = pinn_test_error(params, recipe.problem, recipe.reference_cache)
    else:
        test_error = node_test_error(params, recipe.problem)
        if recipe.node_window is not None:
            full = replace(setup.ctx, window=None, physics_weight=0.0)
            extra["rollout_loss"] = float(node_objective(full, recipe.layer_sizes, recipe.output_activation)(params.theta))
    out = {
        **extra,
        "train_loss": train_loss,
        "test_error": float(test_error),
        "status": trace.status,
        "iterations": trace.last_iter,
    }
    if trace.lambda_max:
        out["lambda_max_final"] = float(trace.lambda_max[-1][1])
    return out


def persist(out_dir, trace: TrainingTrace, params: NetworkParameters, summary: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace.write_csv(out / "trace.csv")
    save_checkpoint(params, out / "ckpt.bin")
    if trace.lambda_max:
        with open(out / "lambda_max.csv", "w") as fh:
            fh.write("iter,lambda_max\n")
            for it, lam in trace.lambda_max:
                fh.write(f"{it},{lam!r}\n")
    write_json(out / "summary.json", summary)
