"""Losses, optimizers and the training driver."""

from .losses import (
    ALMState,
    LossContext,
    advance_alm,
    alm_objective,
    alm_objective_builder,
    alm_update,
    euler_rollout,
    generic_alm_objective,
    node_loss,
    node_objective,
    pinn_field_loss,
    pinn_loss,
    pinn_objective,
    pinode_loss,
    pinode_objective,
)
from .optim import (
    AdamState,
    OptimizerConfig,
    adam_run,
    adam_step,
    alm_loop,
    armijo,
    lbfgs_run,
    nncg_run,
    nystrom,
    pcg,
    strong_wolfe,
)
from .recipe import Recipe, TrainingResult, build, curriculum_coefficients, curriculum_run, train, train_full
from .trace import TrainingTrace

__all__ = [
    "ALMState",
    "AdamState",
    "LossContext",
    "OptimizerConfig",
    "Recipe",
    "TrainingResult",
    "TrainingTrace",
    "adam_run",
    "adam_step",
    "advance_alm",
    "alm_loop",
    "alm_objective",
    "alm_objective_builder",
    "alm_update",
    "armijo",
    "build",
    "curriculum_coefficients",
    "curriculum_run",
    "euler_rollout",
    "generic_alm_objective",
    "lbfgs_run",
    "nncg_run",
    "node_loss",
    "node_objective",
    "nystrom",
    "pcg",
    "pinn_field_loss",
    "pinn_loss",
    "pinn_objective",
    "pinode_loss",
    "pinode_objective",
    "strong_wolfe",
    "train",
    "train_full",
]
