"""Training-regime maps and loss-landscape diagnostics for physics-informed models."""

__version__ = "0.1.0"

from .benchmarks import ProblemSpec, node_test_error, pinn_test_error
from .config import RunConfig, load_config, parse_config
from .diffcore import (
    ConfigurationError,
    HvpOracle,
    NetworkParameters,
    NonFiniteError,
    Objective,
    init_network,
    load_checkpoint,
    make_hvp,
    save_checkpoint,
)
from .regime import RegimeMap, SweepConfig, build_regime_map, classify, run_sweep
from .training import OptimizerConfig, Recipe, TrainingTrace, train, train_full

__all__ = [
    "ConfigurationError",
    "HvpOracle",
    "NetworkParameters",
    "NonFiniteError",
    "Objective",
    "OptimizerConfig",
    "ProblemSpec",
    "Recipe",
    "RegimeMap",
    "RunConfig",
    "SweepConfig",
    "TrainingTrace",
    "build_regime_map",
    "classify",
    "init_network",
    "load_checkpoint",
    "load_config",
    "make_hvp",
    "node_test_error",
    "parse_config",
    "pinn_test_error",
    "run_sweep",
    "save_checkpoint",
    "train",
    "train_full",
]
