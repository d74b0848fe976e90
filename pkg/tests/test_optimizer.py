import numpy as np
import pytest

from oracles import brute_force_catalog, brute_force_one_day, lp_recourse

from apptsched.assignment import saa_objective
from apptsched.domain import (
    CalendarConfig,
    CommitmentFloor,
    ComplexityBudget,
    ForbiddenDayConfig,
    PatientTypeSet,
    PatientTypeSpec,
    default_types,
    validate_template,
)
from apptsched.optimizer import (
    InfeasibleTemplateError,
    OptimizeParams,
    TemplateModel,
    enumerate_slot_configs,
    estimate_saa_gap,
    month_window,
    optimize_template,
    sample_month_scenarios,
)
from apptsched.scenario import DemandParams, DemandScenario

TOY_CAL = CalendarConfig(days_per_week=1, slots_per_session=1, slot_minutes=240, working_days_per_month=4)
CAPS = (2, 2, 2)


def toy_scenarios(types, count, days=4, seed=0):
    """Demand on the single weekly working day (calendar days 0, 7, ...)."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        f = np.zeros((3, 7 * days), dtype=int)
        f[:, ::7] = rng.poisson([[2.0], [1.5], [0.7]], (3, days))
        out.append(DemandScenario(f, i, 0))
    return out


def toy_model(types, caps=CAPS):
    return TemplateModel(types, TOY_CAL, ComplexityBudget(), max_per_type=caps)


@pytest.mark.parametrize("kappa", [0.2, 0.5, 0.96, 1.5])
def test_catalog_matches_enumeration(types, kappa):
    cat = enumerate_slot_configs(types, kappa, (3, 3, 3))
    assert sorted(cat.configs) == brute_force_catalog(types.complexities, kappa, (3, 3, 3))


def test_catalog_edge_cases(types):
    cat = enumerate_slot_configs(types, 0.96, (3, 3, 3))
    assert (1, 1, 1) not in cat and (0, 3, 0) in cat
    assert enumerate_slot_configs(types, 0.2, (3, 3, 3)).configs == ((0, 0, 0),)
    one = PatientTypeSet([PatientTypeSpec(0, "x", 0.5, 0.0, mix_fraction=1.0)])
    assert enumerate_slot_configs(one, 1.0, (5,)).configs == ((0,), (1,), (2,))
    with pytest.raises(ValueError):
        enumerate_slot_configs(types, 0.0, (3, 3, 3))


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("method", ["bnb", "milp"])
def test_toy_matches_brute_force(types, seed, method):
    sc = toy_scenarios(types, 3, seed=seed)
    res = optimize_template(sc, toy_model(types), params=OptimizeParams(method=method))
    best, arg = brute_force_one_day(types, 0.96, 2.8, CAPS, [s.f[:, ::7] for s in sc])
    assert res.objective == pytest.approx(best, rel=1e-6, abs=1e-9)
    block = res.template.day_counts(0, TOY_CAL)
    # any optimum is acceptable; ties are resolved by the optimizer
    assert any(np.array_equal(block.sum(axis=1), b.sum(axis=1)) for b in arg)


def test_toy_objective_is_recomputed_by_recourse(types):
    sc = toy_scenarios(types, 2, seed=4)
    res = optimize_template(sc, toy_model(types))
    tot = res.template.day_counts(0, TOY_CAL).sum(axis=1)
    direct = np.mean([lp_recourse(s.f[:, ::7], np.repeat(tot[:, None], 4, axis=1), types.no_show, types.weights, 0.1) for s in sc])
    assert res.objective == pytest.approx(direct, rel=1e-6)


def test_banned_optimum_gives_next_best(types):
    sc = toy_scenarios(types, 3, seed=7)
    first = optimize_template(sc, toy_model(types))
    cut = ForbiddenDayConfig.from_template(first.template, 0, TOY_CAL)
    second = optimize_template(sc, toy_model(types), banned=[cut])
    best, _ = brute_force_one_day(types, 0.96, 2.8, CAPS, [s.f[:, ::7] for s in sc], banned=[cut.as_block()])
    assert second.template != first.template
    assert second.objective == pytest.approx(best, rel=1e-6, abs=1e-9)
    assert second.objective >= first.objective - 1e-9


def test_floor_respected_and_matches_brute_force(types):
    sc = toy_scenarios(types, 3, seed=3)
    floor = np.array([[0, 0], [0, 0], [1, 1]])
    res = optimize_template(sc, toy_model(types), floor=CommitmentFloor(floor))
    assert (res.template.day_counts(0, TOY_CAL) >= floor).all()
    best, _ = brute_force_one_day(types, 0.96, 2.8, CAPS, [s.f[:, ::7] for s in sc], floor=floor)
    assert res.objective == pytest.approx(best, rel=1e-6, abs=1e-9)


def test_infeasible_floor_names_weekday(types):
    floor = np.zeros((3, 2), dtype=int)
    floor[:, 0] = [1, 1, 1]  # 0.97 exceeds one slot
    with pytest.raises(InfeasibleTemplateError) as exc:
        optimize_template(toy_scenarios(types, 1), toy_model(types), floor=CommitmentFloor(floor))
    assert exc.value.weekday == 0


def test_full_week_cuts_only_raise_objective(types, cal):
    model = TemplateModel(types, cal)
    demand = DemandParams.for_types(types, 90.0)
    sc = sample_month_scenarios(demand, cal, 0, 3, seed=1)
    res = optimize_template(sc, model)
    assert validate_template(res.template, model.budget, types, cal).ok
    assert res.certificate.relative_gap <= 0.01 + 1e-9
    cuts = [ForbiddenDayConfig.from_template(res.template, 2, cal)]
    res2 = optimize_template(sc, model, banned=cuts)
    assert res2.template.day_counts(2, cal).tolist() != res.template.day_counts(2, cal).tolist()
    assert res2.objective >= res.objective * (1 - 0.01) - 1e-9
    assert validate_template(res2.template, model.budget, types, cal, banned=cuts).ok


def test_methods_agree_within_tolerance(types):
    cal = CalendarConfig(days_per_week=2, slots_per_session=2, slot_minutes=120, working_days_per_month=8)
    model = TemplateModel(types, cal, max_per_type=CAPS)
    demand = DemandParams.for_types(types, 30.0, weekday_weights=(0.6, 0.4))
    for seed in range(3):
        sc = sample_month_scenarios(demand, cal, 0, 2, seed=seed)
        a = optimize_template(sc, model, params=OptimizeParams(method="bnb"))
        b = optimize_template(sc, model, params=OptimizeParams(method="milp"))
        assert a.certificate.proven and b.certificate.proven
        assert abs(a.objective - b.objective) <= 0.01 * max(a.objective, b.objective) + 1e-9
        assert a.objective == pytest.approx(saa_objective(a.template, sc, types, cal))


def test_single_repeated_scenario_has_zero_gap(types):
    sc = toy_scenarios(types, 1, seed=9)
    same = [DemandScenario(sc[0].f, i, 0) for i in range(4)]
    res = optimize_template(same, toy_model(types))
    assert res.objective == pytest.approx(optimize_template(sc, toy_model(types)).objective)


def test_deterministic_demand_gap_is_zero(types):
    demand = DemandParams.for_types(types, 0.0)
    rep = estimate_saa_gap(TemplateModel(types), demand, OptimizeParams(scenario_count=2, saa_batches=2, evaluation_sample=3))
    assert rep.relative_gap == 0.0 and rep.upper_bound == 0.0


def test_month_window_has_zero_demand_tail(types, cal):
    start, horizon, stop = month_window(cal, 1, 5)
    # working days 20..39 end on calendar day 53; five tail days reach day 60
    assert (start, horizon, stop) == (28, 33, 54)
    for sampling in ("iid", "lhs"):
        sc = sample_month_scenarios(DemandParams.for_types(types, 90.0), cal, 1, 2, seed=0, sampling=sampling)
        assert all(s.start_day == 28 and s.f.shape[1] == 33 and s.f[:, 26:].sum() == 0 for s in sc)


def test_params_validation():
    with pytest.raises(ValueError):
        OptimizeParams(method="greedy")
    with pytest.raises(ValueError):
        OptimizeParams(sampling="sobol")
    with pytest.raises(ValueError):
        optimize_template([], TemplateModel(default_types()))
