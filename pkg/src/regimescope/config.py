"""Run configuration: one YAML file per run or sweep.

Top-level sections (all but ``problem`` optional)::

    problem:     ProblemSpec fields (family, coeff, n_res, ...)
    model:       kind (pinn | node | pinode), layers, activation
    optimizer:   OptimizerConfig fields, or ``stages: [ {...}, ... ]``
    training:    seed, physics_weight, node_window, lambda_max_every, lambda_max_iters
    sweep:       x_field, x_values, y_field, y_values, seeds
    regime:      T_train, T_test, perturb
    diagnostics: ops, radius, grid_n, lanczos_steps, n_probes, max_probes,
                 power_iters, loss_threshold, tail_len, seed, mc_steps
    output:      directory for results (not part of the config hash)

Unknown keys anywhere are errors.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .benchmarks import PDE_FAMILIES, ProblemSpec
from .diffcore import ConfigurationError
from .regime import DEFAULT_THRESHOLDS, SweepConfig
from .training.optim import OptimizerConfig
from .training.recipe import Recipe

SECTIONS = ("problem", "model", "optimizer", "training", "sweep", "regime", "diagnostics", "output")
DIAGNOSTIC_OPS = ("lambda_max", "trace", "slq", "negative_mass", "surface", "mc", "powerlaw")


@dataclass(frozen=True)
class ModelSection:
    kind: str | None = None
    layers: tuple[int, ...] | None = None
    activation: str = "identity"


@dataclass(frozen=True)
class TrainingSection:
    seed: int = 0
    physics_weight: float = 1.0
    node_window: int | None = None
    lambda_max_every: int = 0
    lambda_max_iters: int = 30
    reference_cache: str | None = None


@dataclass(frozen=True)
class SweepSection:
    x_field: str = "coeff"
    x_values: tuple[float, ...] = ()
    y_field: str = "n_res"
    y_values: tuple[float, ...] = ()
    seeds: tuple[int, ...] = (0,)


@dataclass(frozen=True)
class RegimeSection:
    T_train: float | None = None
    T_test: float | None = None
    perturb: float = 0.2


@dataclass(frozen=True)
class DiagnosticsSection:
    ops: tuple[str, ...] = ("lambda_max",)
    power_iters: int = 200
    max_probes: int = 100
    lanczos_steps: int = 64
    n_probes: int = 8
    radius: float = 1.0
    grid_n: int = 21
    mc_steps: int = 200
    loss_threshold: float | None = None
    tail_len: int | None = None
    seed: int = 0

    def __post_init__(self):
        bad = [op for op in self.ops if op not in DIAGNOSTIC_OPS]
        if bad:
            raise ConfigurationError(f"unknown diagnostics {bad}; choose from {DIAGNOSTIC_OPS}")


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemSpec
    model: ModelSection
    pipeline: tuple[OptimizerConfig, ...]
    training: TrainingSection
    sweep: SweepSection | None
    regime: RegimeSection
    diagnostics: DiagnosticsSection
    output: str | None
    raw: dict = field(compare=False, repr=False, default_factory=dict)

    @property
    def model_kind(self) -> str:
        if self.model.kind is not None:
            return self.model.kind
        return "pinn" if self.problem.family in PDE_FAMILIES else "node"

    def recipe(self, seed: int | None = None) -> Recipe:
        t = self.training
        return Recipe(
            model=self.model_kind,
            problem=self.problem,
            pipeline=self.pipeline,
            layer_sizes=self.model.layers,
            output_activation=self.model.activation,
            seed=t.seed if seed is None else seed,
            physics_weight=t.physics_weight,
            node_window=t.node_window,
            lambda_max_every=t.lambda_max_every,
            lambda_max_iters=t.lambda_max_iters,
            reference_cache=t.reference_cache,
        )

    def sweep_config(self) -> SweepConfig:
        if self.sweep is None:
            raise ConfigurationError("config has no sweep section")
        s = self.sweep
        return SweepConfig(self.recipe(), s.x_field, tuple(s.x_values), s.y_field, tuple(s.y_values), tuple(s.seeds))

    def thresholds(self) -> tuple[float, float]:
        r = self.regime
        key = (self.model_kind, self.problem.family, self.pipeline[-1].method)
        default = DEFAULT_THRESHOLDS.get(key)
        T_train = r.T_train if r.T_train is not None else (default[0] if default else None)
        T_test = r.T_test if r.T_test is not None else (default[1] if default else None)
        if T_train is None or T_test is None:
            raise ConfigurationError(f"no default thresholds for {key}; set regime.T_train and regime.T_test")
        return T_train, T_test

    def hash(self) -> str:
        return config_hash(self.semantic())

    def semantic(self) -> dict:
        """Every section with defaults filled in, minus ``output``."""
        asdict = dataclasses.asdict
        return {
            "problem": asdict(self.problem),
            "model": {**asdict(self.model), "kind": self.model_kind},
            "pipeline": [asdict(c) for c in self.pipeline],
            "training": asdict(self.training),
            "sweep": asdict(self.sweep) if self.sweep is not None else None,
            "regime": asdict(self.regime),
            "diagnostics": asdict(self.diagnostics),
        }


def _tupled(value):
    return tuple(_tupled(v) for v in value) if isinstance(value, list) else value


def _check_type(hint, value, where):
    """Reject obviously wrong scalar types; nested containers are checked element-wise."""
    if value is None:
        if type(None) in typing.get_args(hint) or hint is type(None):
            return
        raise ConfigurationError(f"{where}: value may not be null")
    options = typing.get_args(hint) if typing.get_origin(hint) in (typing.Union, types.UnionType) else (hint,)
    for opt in options:
        if opt is type(None):
            continue
        origin = typing.get_origin(opt) or opt
        if origin is tuple and isinstance(value, tuple):
            inner = typing.get_args(opt)
            if inner:
                for k, v in enumerate(value):
                    _check_type(inner[0], v, f"{where}[{k}]")
            return
        if origin is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return
        if origin is int and isinstance(value, int) and not isinstance(value, bool):
            return
        if origin in (str, bool) and isinstance(value, origin):
            return
    raise ConfigurationError(f"{where}: {value!r} has the wrong type (expected {hint})")


def _section(cls, data, where: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)} - {"raw"}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"{where}: unknown keys {unknown}")
    hints = typing.get_type_hints(cls)
    values = {k: _tupled(v) for k, v in data.items()}
    for k, v in values.items():
        _check_type(hints[k], v, f"{where}.{k}")
    try:
        return cls(**values)
    except TypeError as err:
        raise ConfigurationError(f"{where}: {err}") from err
    except (ValueError, ConfigurationError) as err:
        raise ConfigurationError(f"{where}: {err}") from err


def parse_config(data: dict) -> RunConfig:
    """Validate a config mapping; raises ConfigurationError on any problem."""
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a mapping of sections")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigurationError(f"unknown sections {unknown}; allowed: {list(SECTIONS)}")
    if "problem" not in data:
        raise ConfigurationError("config needs a problem section")
    problem = _section(ProblemSpec, data["problem"], "problem")
    opt = data.get("optimizer") or {}
    if not isinstance(opt, dict):
        raise ConfigurationError("optimizer: expected a mapping")
    if "stages" in opt:
        if set(opt) != {"stages"} or not isinstance(opt["stages"], list) or not opt["stages"]:
            raise ConfigurationError("optimizer: 'stages' must be the only key and a non-empty list")
        pipeline = tuple(_section(OptimizerConfig, s, f"optimizer.stages[{k}]") for k, s in enumerate(opt["stages"]))
    else:
        pipeline = (_section(OptimizerConfig, opt, "optimizer"),)
    sweep = _section(SweepSection, data["sweep"], "sweep") if "sweep" in data else None
    output = data.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigurationError("output must be a path string")
    cfg = RunConfig(
        problem=problem,
        model=_section(ModelSection, data.get("model"), "model"),
        pipeline=pipeline,
        training=_section(TrainingSection, data.get("training"), "training"),
        sweep=sweep,
        regime=_section(RegimeSection, data.get("regime"), "regime"),
        diagnostics=_section(DiagnosticsSection, data.get("diagnostics"), "diagnostics"),
        output=output,
        raw=data,
    )
    # surface any recipe-level inconsistency (model vs family, layer sizes) before compute
    cfg.recipe()
    if sweep is not None:
        cfg.sweep_config()
    return cfg


def load_config(path) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as err:
        raise ConfigurationError(f"{path}: not valid YAML ({err})") from err
    except OSError as err:
        raise ConfigurationError(f"{path}: {err.strerror}") from err
    return parse_config(data)


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    """Replace the training seed (and a sweep's seed list) with ``seed``."""
    raw = json.loads(json.dumps(cfg.raw))
    raw.setdefault("training", {})["seed"] = seed
    if "sweep" in raw:
        raw["sweep"]["seeds"] = [seed]
    return parse_config(raw)


def _canonical(value):
    # 5 and 5.0 mean the same thing in a config; bools stay bools
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return value
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, dict):
        return {k: _canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return str(value)


def config_hash(semantic: dict) -> str:
    """First 16 hex digits of the sha256 of the canonical JSON form."""
    text = json.dumps(_canonical(semantic), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]
