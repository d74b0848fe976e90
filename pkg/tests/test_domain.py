import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apptsched.callcenter import heuristic_template
from apptsched.domain import (
    CalendarConfig,
    CommitmentFloor,
    ComplexityBudget,
    ForbiddenDayConfig,
    PatientTypeSet,
    PatientTypeSpec,
    WeeklyTemplate,
    daily_capacity,
    dumps_template,
    format_template,
    loads_template,
    parse_day_pattern,
    slot_complexity,
    template_from_days,
    validate_template,
)


def test_default_types_match_base_clinic(types):
    assert types.labels == ["acute", "chronic", "preventive"]
    assert types.complexities.tolist() == [0.29, 0.32, 0.36]
    assert types.mix.tolist() == [0.493, 0.361, 0.146]
    assert types.no_show.tolist() == [0.1, 0.1, 0.1]


def test_type_set_rejects_bad_ids_and_mix():
    a = PatientTypeSpec(0, "a", 0.3, 0.1, mix_fraction=0.5)
    with pytest.raises(ValueError):
        PatientTypeSet([a, PatientTypeSpec(2, "b", 0.3, 0.1, mix_fraction=0.5)])
    with pytest.raises(ValueError):
        PatientTypeSet([a])
    with pytest.raises(ValueError):
        PatientTypeSpec(0, "a", 0.0, 0.1)


def test_slot_complexity_values(types):
    assert slot_complexity([1, 1, 1], types) == pytest.approx(0.97)
    assert slot_complexity([0, 3, 0], types) == pytest.approx(0.96)
    with pytest.raises(ValueError):
        slot_complexity([1, 1], types)


def test_three_chronic_fit_slot_budget_despite_rounding(types, cal):
    t = WeeklyTemplate.zeros(types, cal)
    c = np.array(t.counts)
    c[1, 0] = 3
    assert validate_template(WeeklyTemplate(c), ComplexityBudget(), types, cal).ok


def test_validate_flags_slot_session_floor_and_banned(types, cal):
    c = np.zeros((3, cal.slots_per_week), dtype=int)
    c[:, 0] = [1, 1, 1]  # 0.97 > 0.96
    t = WeeklyTemplate(c)
    rep = validate_template(t, ComplexityBudget(), types, cal)
    assert rep.kinds() == {"slot"}
    c2 = np.zeros_like(c)
    c2[0, 0:4] = 3  # 12 acute in one session = 3.48 > 2.8
    assert "session" in validate_template(WeeklyTemplate(c2), ComplexityBudget(), types, cal).kinds()
    floor = np.zeros_like(c)
    floor[2, 5] = 1
    assert "floor" in validate_template(WeeklyTemplate(c2), ComplexityBudget(10, 40), types, cal, CommitmentFloor(floor)).kinds()
    g = ForbiddenDayConfig.from_template(WeeklyTemplate(c2), 0, cal)
    assert "forbidden" in validate_template(WeeklyTemplate(c2), ComplexityBudget(10, 40), types, cal, banned=[g]).kinds()


def test_blocked_session_must_stay_empty(types):
    cal = CalendarConfig(blocked_sessions=((2, 1),))
    c = np.zeros((3, cal.slots_per_week), dtype=int)
    c[0, cal.slot_index(2, 1, 0)] = 1
    assert validate_template(WeeklyTemplate(c), ComplexityBudget(), types, cal).kinds() == {"blocked"}


def test_calendar_day_arithmetic(cal):
    assert [cal.is_working(d) for d in range(7)] == [True] * 5 + [False] * 2
    assert cal.working_index(7) == 5
    assert cal.calendar_day(5) == 7
    assert cal.next_working_day(5) == 7
    assert cal.working_days_before(9) == 7
    assert cal.month_of(cal.calendar_day(19)) == 0 and cal.month_of(cal.calendar_day(20)) == 1
    assert cal.calendar_days_for(5) == 5 and cal.calendar_days_for(6) == 8
    assert cal.slot_start(0) == 480 and cal.slot_start(4) == 780
    with pytest.raises(ValueError):
        cal.working_index(6)


def test_calendar_rejects_inconsistent_sessions():
    with pytest.raises(ValueError):
        CalendarConfig(slot_minutes=50)
    with pytest.raises(ValueError):
        CalendarConfig(blocked_sessions=((5, 0),))


def test_daily_capacity_single_and_monthly(types, cal):
    t = heuristic_template("SPT", types, cal, None)
    assert daily_capacity(t, 0, 0, cal) == 9
    assert daily_capacity(t, 2, 4, cal) == 3
    assert daily_capacity(t, 0, 5, cal) == 0  # Saturday
    t2 = WeeklyTemplate.zeros(types, cal, 1)
    assert daily_capacity([t, t2], 0, cal.calendar_day(20), cal) == 0
    with pytest.raises(ValueError):
        daily_capacity([t], 0, cal.calendar_day(20), cal)


def test_day_pattern_parsing(types):
    block = parse_day_pattern(["A,A,C", "No App", "P"], types)
    assert block.tolist() == [[2, 0, 0], [1, 0, 0], [0, 0, 1]]


def test_monday_pattern_counts(types, cal):
    monday = ["C,C", "A,A", "A,A", "A,C,C", "A,P", "A,C", "A,P", "A,A,A"]
    t = template_from_days([monday] + [["No App"] * 8] * 4, types, cal)
    assert daily_capacity(t, types.index_of("A"), 0, cal) == 11
    assert daily_capacity(t, types.index_of("C"), 0, cal) == 5


def test_template_text_roundtrip(types, cal):
    t = heuristic_template("LCVB", types, cal, month_index=3)
    assert loads_template(dumps_template(t, types, cal), types, cal) == t
    grid = format_template(t, types, cal)
    assert grid.splitlines()[1].split()[1] == "C,C,C"


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=3 * 40, max_size=3 * 40), st.integers(0, 11))
def test_template_roundtrip_property(values, month):
    types = PatientTypeSet(
        [PatientTypeSpec(i, n, 0.3, 0.1, mix_fraction=m) for i, (n, m) in enumerate([("a", 0.5), ("b", 0.3), ("c", 0.2)])]
    )
    cal = CalendarConfig()
    t = WeeklyTemplate(np.array(values).reshape(3, 40), month)
    assert loads_template(dumps_template(t, types, cal), types, cal) == t


def test_template_from_days_requires_every_slot(types, cal):
    with pytest.raises(ValueError):
        template_from_days([["A"]] * 5, types, cal)


def test_template_rejects_negative_counts():
    with pytest.raises(ValueError):
        WeeklyTemplate(np.array([[-1, 0]]))
