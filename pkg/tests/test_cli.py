import subprocess
import sys

import pytest

from apptsched.callcenter import heuristic_template
from apptsched.cli import main
from apptsched.domain import CalendarConfig, default_types, dumps_template, loads_template

SMALL = """
run: {planning_horizon: 20, warmup: 5, seed: 2}
optimizer: {scenario_count: 2}
flow: {replications: 10}
policy: {booking_horizon: 25}
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL)
    return p


def only_run(out):
    (d,) = list(out.iterdir())
    return d


def test_validate_ok_and_errors(tmp_path, cfg_file, capsys):
    assert main(["validate", str(cfg_file)]) == 0
    assert "planning_horizon: 20" in capsys.readouterr().out
    bad = tmp_path / "bad.yaml"
    bad.write_text("budget: {kappa: -1}\nrun: {sed: 1}\n")
    assert main(["validate", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "budget.kappa" in err and "run.sed: unknown key" in err
    bad.write_text("run: {sed: 1}\n")
    assert main(["validate", str(bad), "--lenient"]) == 0


def test_optimize_writes_template(tmp_path, cfg_file):
    out = tmp_path / "runs"
    assert main(["optimize", "-c", str(cfg_file), "-o", str(out)]) == 0
    d = only_run(out)
    assert d.name.endswith("-optimize-seed2")
    types, cal = default_types(), CalendarConfig()
    loads_template((d / "template.csv").read_text(), types, cal)
    assert (d / "config.yaml").exists() and (d / "certificate.csv").exists()


def test_evaluate_template_file(tmp_path, cfg_file, capsys):
    types, cal = default_types(), CalendarConfig()
    t = tmp_path / "spt.csv"
    t.write_text(dumps_template(heuristic_template("SPT", types, cal), types, cal))
    assert main(["evaluate", str(t), "-c", str(cfg_file), "-o", str(tmp_path / "r")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "weekday,direct_wait,lunch_spillover,after_hours,violates"
    assert len(lines) >= 6


def test_simulate_overrides(tmp_path, cfg_file, capsys):
    out = tmp_path / "r"
    assert main(["simulate", "-c", str(cfg_file), "-o", str(out), "--policy", "lcvb", "--beta", "0.5", "--seed", "7"]) == 0
    d = only_run(out)
    assert d.name.endswith("-simulate-seed7")
    text = (d / "config.yaml").read_text()
    assert "beta: 0.5" in text and "policy_under_test: lcvb" in text
    assert "mean_indirect_wait" in capsys.readouterr().out


def test_bad_override_is_a_config_error(tmp_path, cfg_file):
    assert main(["simulate", "-c", str(cfg_file), "-o", str(tmp_path), "--beta", "-1"]) == 2


def test_pipeline_and_compare(tmp_path, cfg_file):
    out = tmp_path / "r"
    assert main(["pipeline", "-c", str(cfg_file), "-o", str(out), "--policy", "spt"]) == 0
    d = only_run(out)
    assert (d / "booking_log.csv").exists() and (d / "templates" / "month_00.csv").exists()
    out2 = tmp_path / "c"
    assert main(["compare", "-c", str(cfg_file), "-o", str(out2), "--policies", "spt", "lcvb"]) == 0
    text = (only_run(out2) / "comparison.csv").read_text()
    assert text.startswith("metric,spt,lcvb,spt-lcvb")


def test_console_entry_point(cfg_file):
    r = subprocess.run([sys.executable, "-m", "apptsched.cli", "validate", str(cfg_file)], capture_output=True, text=True)
    assert r.returncode == 0 and "seed: 2" in r.stdout
