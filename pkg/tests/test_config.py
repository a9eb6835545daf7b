import pytest
import yaml

from regimescope.config import load_config, parse_config, with_seed
from regimescope.diffcore import ConfigurationError

BASE = {
    "problem": {"family": "pendulum", "coeff": 0.5, "horizon": 1.0},
    "model": {"kind": "node", "layers": [3, 8, 3]},
    "optimizer": {"method": "adam", "lr": 1e-3, "epochs": 5},
}


def variant(**sections):
    data = {k: dict(v) for k, v in BASE.items()}
    for name, patch in sections.items():
        data[name] = {**data.get(name, {}), **patch} if isinstance(patch, dict) else patch
    return data


def test_parse_builds_recipe():
    cfg = parse_config(BASE)
    r = cfg.recipe()
    assert r.model == "node" and r.layer_sizes == (3, 8, 3)
    assert r.pipeline[0].epochs == 5 and r.problem.horizon == 1.0


def test_model_kind_defaults_from_family():
    cfg = parse_config({"problem": {"family": "wave", "coeff": 2.0}})
    assert cfg.model_kind == "pinn"
    assert cfg.thresholds() == (9.91e-3, 0.297)


def test_staged_pipeline():
    data = {**BASE, "optimizer": {"stages": [{"method": "adam", "epochs": 3}, {"method": "lbfgs", "epochs": 2}]}}
    cfg = parse_config(data)
    assert [s.method for s in cfg.pipeline] == ["adam", "lbfgs"]


@pytest.mark.parametrize(
    "data",
    [
        variant(problem={"bogus": 1}),
        variant(extra={}),
        variant(optimizer={"method": "adam", "momentum": 0.9}),
        variant(optimizer={"epochs": "ten"}),
        variant(optimizer={"epochs": 2.5}),
        variant(problem={"coeff": True}),
        variant(model={"layers": [2, 8, 1]}),
        variant(model={"kind": "pinn"}),
        variant(optimizer={"stages": []}),
        variant(optimizer={"stages": [{"method": "adam"}], "lr": 1.0}),
        variant(sweep={"x_field": "lr", "x_values": [1.0], "y_values": [1.0]}),
        variant(diagnostics={"ops": ["hessian_det"]}),
        variant(output=3),
        {"model": {"kind": "node"}},
        [1, 2],
    ],
)
def test_invalid_configs_rejected(data):
    with pytest.raises(ConfigurationError):
        parse_config(data)


def test_thresholds_needed_without_defaults():
    cfg = parse_config(variant(optimizer={"method": "nncg"}, model={"kind": "node"}))
    with pytest.raises(ConfigurationError):
        cfg.thresholds()
    cfg = parse_config(variant(regime={"T_train": 1e-3, "T_test": 0.5}))
    assert cfg.thresholds() == (1e-3, 0.5)


def test_hash_ignores_output_and_numeric_spelling():
    a = parse_config(BASE).hash()
    assert parse_config(variant(output="elsewhere")).hash() == a
    assert parse_config(variant(problem={"horizon": 1})).hash() == a
    # spelling out a default is the same semantic config
    assert parse_config(variant(training={"seed": 0})).hash() == a


@pytest.mark.parametrize(
    "patch",
    [
        {"problem": {"coeff": 0.6}},
        {"optimizer": {"lr": 2e-3}},
        {"training": {"seed": 1}},
        {"model": {"layers": [3, 9, 3]}},
        {"diagnostics": {"grid_n": 5}},
    ],
)
def test_hash_changes_with_semantics(patch):
    assert parse_config(variant(**patch)).hash() != parse_config(BASE).hash()


def test_with_seed_replaces_training_and_sweep_seeds():
    cfg = parse_config(variant(sweep={"x_field": "coeff", "x_values": [0.5], "y_field": "horizon", "y_values": [1.0], "seeds": [0, 1, 2]}))
    s = with_seed(cfg, 7)
    assert s.training.seed == 7 and s.sweep.seeds == (7,)
    assert cfg.sweep.seeds == (0, 1, 2)


def test_load_config_errors(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("problem: [unclosed\n")
    with pytest.raises(ConfigurationError):
        load_config(bad)
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.yaml")
    good = tmp_path / "good.yaml"
    good.write_text(yaml.safe_dump(BASE))
    assert load_config(good).hash() == parse_config(BASE).hash()
