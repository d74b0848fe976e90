import math

import pytest
import yaml

from apptsched.config import (
    ConfigError,
    RunConfig,
    config_from_dict,
    dump_config,
    load_config,
    validate_config,
)


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_missing_and_empty_files_give_defaults(tmp_path):
    assert load_config(None) == RunConfig()
    assert load_config(write(tmp_path, "")) == RunConfig()
    assert load_config(write(tmp_path, "run:\n  seed: 0\n")) == RunConfig()


def test_defaults_match_base_clinic():
    cfg = RunConfig()
    assert (cfg.budget.kappa, cfg.budget.eta) == (0.96, 2.8)
    assert cfg.flow.thresholds == (30.0, 45.0, 60.0) and cfg.flow.alpha == 0.85 and cfg.flow.replications == 200
    assert (cfg.policy.beta, cfg.policy.acceptance_threshold, cfg.policy.cancellation_rate) == (0.0, 0.2, 0.17)
    assert cfg.optimizer.scenario_count == 10 and cfg.recourse.epsilon == 0.1
    assert math.isinf(cfg.demand.dispersion)


def test_field_error_names_path(tmp_path):
    errs = validate_config(write(tmp_path, "budget:\n  kappa: -1\n"))
    assert isinstance(errs, list) and any(e.startswith("budget.kappa") for e in errs)


def test_all_errors_are_reported_together(tmp_path):
    text = "budget:\n  kappa: -1\nflow:\n  alpha: 2\npolicy:\n  beta: -0.5\n"
    errs = validate_config(write(tmp_path, text))
    assert {e.split(":")[0] for e in errs} >= {"budget.kappa", "flow.alpha", "policy.beta"}


def test_unknown_keys_strict_and_lenient(tmp_path):
    p = write(tmp_path, "run:\n  seeed: 3\nextras: 1\n")
    errs = validate_config(p)
    assert "run.seeed: unknown key" in errs and "extras: unknown key" in errs
    assert load_config(p, strict=False) == RunConfig()


def test_cross_field_checks():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"run": {"planning_horizon": 20, "warmup": 20}, "demand": {"weekday_weights": [0.5, 0.5]}})
    text = "\n".join(exc.value.errors)
    assert "run.warmup" in text and "demand.weekday_weights" in text
    with pytest.raises(ConfigError):
        config_from_dict({"budget": {"kappa": 3.0, "eta": 2.8}})
    with pytest.raises(ConfigError):
        config_from_dict({"run": {"max_per_type": [3, 3]}})


def test_bad_yaml_and_missing_file(tmp_path):
    assert validate_config(write(tmp_path, "run: [unclosed\n"))[0].endswith(")")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")


def test_types_block(tmp_path):
    text = yaml.safe_dump({"types": [
        {"label": "a", "complexity": 0.3, "no_show_prob": 0.1, "mix_fraction": 0.7},
        {"label": "b", "complexity": 0.4, "no_show_prob": 0.2, "mix_fraction": 0.3},
    ]})
    cfg = load_config(write(tmp_path, text))
    assert cfg.types.labels == ["a", "b"] and cfg.types.no_show.tolist() == [0.1, 0.2]
    errs = validate_config(write(tmp_path, "types:\n  - {label: a, complexity: 0.3, no_show_prob: 0.1, mix_fraction: 0.5}\n"))
    assert any(e.startswith("types") for e in errs)


def test_dump_roundtrip(tmp_path):
    cfg = RunConfig().replace(policy={"beta": 0.5}, demand={"dispersion": 12.0}, run={"seed": 9})
    again = load_config(write(tmp_path, dump_config(cfg)))
    assert again == cfg
    assert load_config(write(tmp_path, dump_config(RunConfig()))) == RunConfig()
