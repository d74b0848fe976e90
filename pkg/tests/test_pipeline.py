import numpy as np
import pytest

from apptsched.config import RunConfig
from apptsched.domain import CommitmentFloor, ComplexityBudget, validate_template
from apptsched.pipeline import (
    CutLimitExceeded,
    PipelineInfeasible,
    compare,
    run_pipeline,
    synthesize_month,
)


def small(**run):
    settings = {"planning_horizon": 40, "warmup": 10, "seed": 3, **run}
    return RunConfig().replace(
        run=settings, optimizer={"scenario_count": 3}, flow={"replications": 20},
        policy={"booking_horizon": 40},
    )


def calm(t):
    return np.zeros((5, 3))


def zero_floor(cfg):
    return CommitmentFloor(np.zeros((3, cfg.calendar.slots_per_week), dtype=int))


def test_no_violations_means_one_solve_per_month():
    art = run_pipeline(small(), evaluator=calm)
    assert sorted(art.months) == [0, 1]
    assert all(rec.optimizations == 1 for rec in art.months.values())
    assert art.cuts == []
    for t in art.templates.values():
        assert validate_template(t, ComplexityBudget(), art.config.types, art.config.calendar).ok
    # later months respect what was already booked into them
    assert (art.templates[1].counts >= art.months[1].floor.floors).all()


def test_forced_violation_replays_one_cut():
    cfg = small()
    seen = []

    def forced(t):
        seen.append(t)
        k = np.zeros((5, 3))
        if len(seen) == 1:
            k[2] = (35, 20, 35)
        return k

    rec = synthesize_month(cfg, 0, zero_floor(cfg), cuts := [], forced)
    assert len(cuts) == 1 and cuts[0].weekday == 2
    assert [h["violating_weekdays"] for h in rec.iterations] == [[2], []]
    first, second = seen
    assert not np.array_equal(first.day_counts(2, cfg.calendar), second.day_counts(2, cfg.calendar))
    assert np.array_equal(cuts[0].as_block(), first.day_counts(2, cfg.calendar))


def test_cut_limit():
    cfg = small(cut_limit=1)

    def always(t):
        k = np.zeros((5, 3))
        k[0] = (99, 0, 0)
        return k

    with pytest.raises(CutLimitExceeded) as exc:
        synthesize_month(cfg, 0, zero_floor(cfg), [], always)
    assert exc.value.month == 0 and len(exc.value.history) == 2
    assert "violating weekdays [0]" in str(exc.value)


def test_infeasible_floor_is_reported():
    cfg = small()
    f = np.zeros((3, 40), dtype=int)
    f[:, 0] = 1
    with pytest.raises(PipelineInfeasible, match="weekday 0"):
        synthesize_month(cfg, 0, CommitmentFloor(f), [], calm)


def test_same_seed_gives_identical_artifacts(tmp_path):
    a = run_pipeline(small(), evaluator=calm).files()
    b = run_pipeline(small(), evaluator=calm).files()
    assert a == b
    assert {"config.yaml", "cuts.csv", "iterations.jsonl", "booking_log.csv", "report.csv", "histograms.csv"} <= set(a)
    assert "templates/month_00.csv" in a
    art = run_pipeline(small(), evaluator=calm)
    paths = art.write(tmp_path)
    assert (tmp_path / "templates" / "month_01.csv").read_text() == a["templates/month_01.csv"]
    assert len(paths) == len(a)


def test_default_evaluator_run():
    art = run_pipeline(small(planning_horizon=20, warmup=5))
    last = art.months[0].iterations[-1]
    assert last["violating_weekdays"] == []
    assert all(k <= th for row in last["kpis"] for k, th in zip(row, (30, 45, 60)))


def test_heuristic_policies_skip_synthesis():
    for p in ("spt", "lcvb", "raw_capacity"):
        art = run_pipeline(small(policy_under_test=p))
        assert art.months == {} and art.report.requests > 0


def test_compare_shares_the_stream():
    reps = compare(small(), ("two_stage", "spt", "lcvb"), evaluator=calm)
    assert len({r.requests for r in reps.values()}) == 1
