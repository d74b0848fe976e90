"""Rolling-horizon booking simulator.

Calls arrive day by day. Each caller is offered open slots from the desired
day up to the booking horizon, best index first, until one is accepted or
the candidates run out. Booked appointments may be cancelled before the
visit (by the patient or by the clinic), and on the visit day booked
patients show up or not; shown patients go through the clinic-flow
simulation.

Slot capacity comes from monthly weekly templates. A template source is
asked for month ``m``'s template on the first working day of that month,
with the appointments already booked into the month as commitment floors;
until then the month runs on a provisional copy of the latest template.

All randomness is keyed by request id (offers, cancellation, show-up) or by
day (clinic flow), so two policies run on the same stream and seed see
common random numbers.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .clinicflow import BookedPatient, DayDraws, DayOutcome, DaySchedule, FlowParams, day_rng, run_day
from .domain import (
    COMPLEXITY_TOL,
    CalendarConfig,
    CommitmentFloor,
    ComplexityBudget,
    PatientTypeSet,
    WeeklyTemplate,
    template_from_days,
)
from .scenario import NoShowModel, PatientRequest, show_up_probability

DISPOSITIONS = ("served", "no_show", "canceled_by_patient", "canceled_by_clinic", "no_appointment", "booked")

# stream tags for per-request generators
_OFFER, _CANCEL, _SHOW, _DAY = 1, 2, 3, 4


@dataclass(frozen=True)
class IndexPolicyParams:
    beta: float = 0.0
    acceptance_threshold: float = 0.2
    booking_horizon: int = 60  # calendar days after the call
    cancellation_rate: float = 0.17
    patient_cancel_share: float = 0.5

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not 0.0 <= self.acceptance_threshold < 1.0:
            raise ValueError("acceptance_threshold must lie in [0, 1)")
        if self.booking_horizon < 1:
            raise ValueError("booking_horizon must be >= 1")
        if not 0.0 <= self.cancellation_rate <= 1.0 or not 0.0 <= self.patient_cancel_share <= 1.0:
            raise ValueError("cancellation parameters must be probabilities")


def compute_index(remaining: float, desired_wi: int, slot_wi: int, beta: float) -> float:
    """``c * exp(beta * (DD - date))`` with both dates as working-day indices."""
    if remaining < 0:
        raise ValueError("remaining capacity must be >= 0")
    return remaining * math.exp(beta * (desired_wi - slot_wi))


def offer_order(index: np.ndarray, day: np.ndarray, slot: np.ndarray) -> np.ndarray:
    """Candidate positions by decreasing index, then earlier day, then earlier slot."""
    return np.lexsort((slot, day, -np.asarray(index, dtype=float)))


# -- heuristic templates ----------------------------------------------------------

_HEURISTIC_DAYS = {
    "SPT": ("A,A,A", "A,A", "A,A", "A,A", "C,C,C", "C,C,C", "P,P", "P"),
    "LCVB": ("C,C,C", "C,C,C", "A,A", "A,A", "A,A,A", "A,A", "P,P", "P"),
}


def _trim_to_budget(block: np.ndarray, types: PatientTypeSet, calendar: CalendarConfig, budget: ComplexityBudget):
    c = types.complexities
    block = block.copy()
    for s in range(calendar.sessions_per_day):
        ks = list(range(s * calendar.slots_per_session, (s + 1) * calendar.slots_per_session))
        while float(c @ block[:, ks].sum(axis=1)) > budget.eta + COMPLEXITY_TOL:
            loads = [float(c @ block[:, k]) for k in ks]
            k = max(range(len(ks)), key=lambda i: (loads[i], i))  # ties go to the later slot
            present = [r for r in range(len(types)) if block[r, ks[k]] > 0]
            r = max(present, key=lambda q: (c[q], q))
            block[r, ks[k]] -= 1
        for k in ks:
            while float(c @ block[:, k]) > budget.kappa + COMPLEXITY_TOL:
                r = max((q for q in range(len(types)) if block[q, k] > 0), key=lambda q: (c[q], q))
                block[r, k] -= 1
    return block


def heuristic_template(
    kind: str,
    types: PatientTypeSet,
    calendar: CalendarConfig,
    budget: ComplexityBudget | None = ComplexityBudget(),
    month_index: int = 0,
) -> WeeklyTemplate:
    """Shortest-processing-time or low-variance-first daily pattern, every weekday.

    With a budget, sessions over the session budget lose one patient at a
    time from their most loaded slot. ``budget=None`` returns the raw pattern.
    """
    key = kind.upper()
    if key not in _HEURISTIC_DAYS:
        raise ValueError(f"unknown heuristic {kind!r}; expected SPT or LCVB")
    rows = _HEURISTIC_DAYS[key]
    if len(rows) != calendar.slots_per_day:
        raise ValueError("heuristic patterns assume 8 slots per day")
    t = template_from_days([rows] * calendar.days_per_week, types, calendar, month_index)
    if budget is None:
        return t
    blocks = [_trim_to_budget(t.day_counts(w, calendar), types, calendar, budget) for w in range(calendar.days_per_week)]
    for w in range(calendar.days_per_week):
        for s in range(calendar.sessions_per_day):
            if calendar.is_blocked(w, s):
                blocks[w][:, s * calendar.slots_per_session : (s + 1) * calendar.slots_per_session] = 0
    return WeeklyTemplate(np.concatenate(blocks, axis=1), month_index)


# -- booking state --------------------------------------------------------------------

TemplateSource = Callable[[int, CommitmentFloor], WeeklyTemplate]


def static_source(t: WeeklyTemplate) -> TemplateSource:
    return lambda month, floor: t.with_month(month)


@dataclass
class Appointment:
    patient: int
    type: int
    day: int
    slot: int
    booking_day: int


class BookingState:
    """Booked counts per day and the capacity they draw on.

    ``mode="template"`` limits each (day, slot, type) to the month's template
    count; ``mode="raw"`` lets any type into any slot while the slot and
    session complexity budgets hold.
    """

    def __init__(
        self,
        types: PatientTypeSet,
        calendar: CalendarConfig,
        initial: WeeklyTemplate | None = None,
        mode: str = "template",
        budget: ComplexityBudget = ComplexityBudget(),
    ):
        if mode not in ("template", "raw"):
            raise ValueError("mode must be 'template' or 'raw'")
        if mode == "template" and initial is None:
            raise ValueError("template mode needs an initial template")
        self.types, self.calendar, self.mode, self.budget = types, calendar, mode, budget
        self.templates: dict[int, WeeklyTemplate] = {}
        self.latest = initial
        if initial is not None:
            self.templates[0] = initial.with_month(0)
        self.booked: dict[int, np.ndarray] = {}
        self.appointments: dict[int, Appointment] = {}
        self.by_day: dict[int, list[int]] = {}

    # templates

    def template_for_month(self, month: int) -> WeeklyTemplate:
        if month not in self.templates:
            # first time the month is bookable: provisional copy of the latest template
            self.templates[month] = self.latest.with_month(month)
        return self.templates[month]

    def set_template(self, month: int, t: WeeklyTemplate) -> None:
        floor = self.floor_for_month(month).floors
        if (t.counts < floor).any():
            raise ValueError(f"template for month {month} drops below booked appointments")
        self.templates[month] = t.with_month(month)
        self.latest = self.templates[month]

    def floor_for_month(self, month: int) -> CommitmentFloor:
        """Per (type, weekly slot) maximum over the month's weeks of booked counts."""
        cal = self.calendar
        R, K = len(self.types), cal.slots_per_day
        floors = np.zeros((R, cal.slots_per_week), dtype=np.int64)
        first = month * cal.working_days_per_month
        for wi in range(first, first + cal.working_days_per_month):
            day = cal.calendar_day(wi)
            if day in self.booked:
                wd = cal.weekday(day)
                sl = slice(wd * K, (wd + 1) * K)
                floors[:, sl] = np.maximum(floors[:, sl], self.booked[day])
        return CommitmentFloor(floors)

    # capacity

    def counts(self, day: int) -> np.ndarray:
        if day not in self.booked:
            self.booked[day] = np.zeros((len(self.types), self.calendar.slots_per_day), dtype=np.int64)
        return self.booked[day]

    def remaining(self, day: int) -> np.ndarray:
        """``(R, slots_per_day)`` additional patients each slot can take, per type."""
        cal = self.calendar
        booked = self.counts(day)
        if self.mode == "template":
            t = self.template_for_month(cal.month_of(day))
            return np.maximum(t.day_counts(cal.weekday(day), cal) - booked, 0)
        c = self.types.complexities
        slot_load = c @ booked
        out = np.zeros_like(booked)
        spk = cal.slots_per_session
        for s in range(cal.sessions_per_day):
            if cal.is_blocked(cal.weekday(day), s):
                continue
            sess_load = slot_load[s * spk : (s + 1) * spk].sum()
            for k in range(s * spk, (s + 1) * spk):
                room = np.minimum(self.budget.kappa - slot_load[k], self.budget.eta - sess_load)
                out[:, k] = np.floor((room + COMPLEXITY_TOL) / c).clip(min=0)
        return out

    def book(self, patient: int, r: int, day: int, slot: int, booking_day: int) -> Appointment:
        if self.remaining(day)[r, slot] < 1:
            raise ValueError(f"no room for type {r} in slot {slot} on day {day}")
        self.counts(day)[r, slot] += 1
        appt = Appointment(patient, r, day, slot, booking_day)
        self.appointments[patient] = appt
        self.by_day.setdefault(day, []).append(patient)
        return appt

    def release(self, patient: int) -> Appointment:
        appt = self.appointments.pop(patient)
        self.booked[appt.day][appt.type, appt.slot] -= 1
        self.by_day[appt.day].remove(patient)
        return appt


# -- booking log -------------------------------------------------------------------------


@dataclass
class BookingRecord:
    id: int
    type: int
    call_day: int
    desired_day: int
    time_pref: str = "none"
    actual_day: int | None = None
    slot: int | None = None
    disposition: str = "no_appointment"
    same_day: bool = False
    cancel_day: int | None = None
    direct_wait: float | None = None

    @property
    def was_booked(self) -> bool:
        return self.actual_day is not None

    def indirect_wait(self, calendar: CalendarConfig, working_days: bool = True) -> int | None:
        """Signed distance from desired to actual day."""
        if self.actual_day is None:
            return None
        if working_days:
            return calendar.working_index(self.actual_day) - calendar.working_index(self.desired_day)
        return self.actual_day - self.desired_day


LOG_HEADER = [
    "id", "type", "call_day", "desired_day", "time_pref", "actual_day", "slot",
    "disposition", "same_day", "cancel_day", "direct_wait",
]


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(round(v, 6))
    return str(v)


def dumps_log(log: Sequence[BookingRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_HEADER)
    for rec in log:
        w.writerow([_cell(getattr(rec, k)) for k in LOG_HEADER])
    return buf.getvalue()


def loads_log(text: str) -> list[BookingRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for row in rows:
        opt_int = lambda k: int(row[k]) if row[k] != "" else None  # noqa: E731
        out.append(
            BookingRecord(
                id=int(row["id"]),
                type=int(row["type"]),
                call_day=int(row["call_day"]),
                desired_day=int(row["desired_day"]),
                time_pref=row["time_pref"],
                actual_day=opt_int("actual_day"),
                slot=opt_int("slot"),
                disposition=row["disposition"],
                same_day=row["same_day"] == "1",
                cancel_day=opt_int("cancel_day"),
                direct_wait=float(row["direct_wait"]) if row["direct_wait"] != "" else None,
            )
        )
    return out


# -- offers and cancellations ---------------------------------------------------------------


def request_rng(seed: int, tag: int, request_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag, int(request_id)]))


def candidate_slots(
    req: PatientRequest, state: BookingState, p: IndexPolicyParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(day, slot, remaining) of every open slot the caller may be offered."""
    cal = state.calendar
    spk = cal.slots_per_session
    if req.desired_time_pref == "morning":
        allowed = range(0, spk)
    elif req.desired_time_pref == "afternoon":
        allowed = range(spk, 2 * spk)
    else:
        allowed = range(cal.slots_per_day)
    days, slots, rem = [], [], []
    last = req.call_day + p.booking_horizon
    day = cal.next_working_day(req.desired_day)
    while day <= last:
        left = state.remaining(day)[req.type]
        for k in allowed:
            if left[k] > 0:
                days.append(day)
                slots.append(k)
                rem.append(int(left[k]))
        day = cal.next_working_day(day + 1)
    return np.array(days, dtype=np.int64), np.array(slots, dtype=np.int64), np.array(rem, dtype=float)


def ranked_offers(req: PatientRequest, state: BookingState, p: IndexPolicyParams) -> list[tuple[int, int]]:
    days, slots, rem = candidate_slots(req, state, p)
    if len(days) == 0:
        return []
    cal = state.calendar
    dd = cal.working_index(cal.next_working_day(req.desired_day))
    wi = np.array([cal.working_index(int(d)) for d in days])
    index = rem * np.exp(p.beta * (dd - wi))
    order = offer_order(index, days, slots)
    return [(int(days[i]), int(slots[i])) for i in order]


def offer_and_book(
    req: PatientRequest, state: BookingState, p: IndexPolicyParams, rng: np.random.Generator
) -> str:
    """Offer slots until the caller accepts; returns ``same_day``, ``booked`` or ``no_appointment``."""
    for day, slot in ranked_offers(req, state, p):
        if rng.random() > p.acceptance_threshold:
            state.book(req.id, req.type, day, slot, req.call_day)
            return "same_day" if day == req.call_day else "booked"
    return "no_appointment"


def draw_cancellation(
    appt: Appointment, p: IndexPolicyParams, calendar: CalendarConfig, rng: np.random.Generator
) -> tuple[int, str] | None:
    """Cancellation day and initiator for a new booking, or None.

    Appointments at least one day ahead are cancelled with probability
    ``cancellation_rate`` on a working day drawn uniformly from
    ``(booking_day, appointment_day]``.
    """
    u, v, w = rng.random(3)
    if appt.day <= appt.booking_day or u >= p.cancellation_rate:
        return None
    days = [d for d in range(appt.booking_day + 1, appt.day + 1) if calendar.is_working(d)]
    day = days[min(int(v * len(days)), len(days) - 1)]
    who = "canceled_by_patient" if w < p.patient_cancel_share else "canceled_by_clinic"
    return day, who


def process_cancellations(state: BookingState, day: int, pending: dict[int, list[tuple[int, str]]]) -> list[tuple[int, str, Appointment]]:
    """Fire the cancellations due on ``day``; returns (patient, initiator, freed appointment)."""
    out = []
    for patient, who in pending.pop(day, []):
        if patient in state.appointments:
            out.append((patient, who, state.release(patient)))
    return out


# -- horizon run -----------------------------------------------------------------------------


@dataclass
class HorizonResult:
    log: list[BookingRecord]
    outcomes: list[tuple[int, DayOutcome]]  # (calendar day, outcome) for every simulated working day
    templates: dict[int, WeeklyTemplate]
    warmup_day: int  # first calendar day counted by metrics
    end_day: int  # first calendar day after the horizon
    max_booked_excess: int = 0  # largest overbooking seen against the template (always 0)

    def window_log(self) -> list[BookingRecord]:
        return [r for r in self.log if self.warmup_day <= r.call_day < self.end_day]

    def window_outcomes(self) -> list[tuple[int, DayOutcome]]:
        return [(d, o) for d, o in self.outcomes if self.warmup_day <= d < self.end_day]


@dataclass
class HorizonSpec:
    horizon: int = 240  # working days
    warmup: int = 60  # working days excluded from metrics
    seed: int = 0
    no_show: NoShowModel = field(default_factory=NoShowModel)
    mode: str = "template"

    def __post_init__(self) -> None:
        if not 0 <= self.warmup < self.horizon:
            raise ValueError("warmup must be shorter than the horizon")


def run_horizon(
    source: TemplateSource | WeeklyTemplate | None,
    stream: Sequence[PatientRequest],
    types: PatientTypeSet,
    calendar: CalendarConfig,
    flow: FlowParams = FlowParams(),
    policy: IndexPolicyParams = IndexPolicyParams(),
    spec: HorizonSpec = HorizonSpec(),
    budget: ComplexityBudget = ComplexityBudget(),
) -> HorizonResult:
    """Simulate calls, cancellations and clinic days over the planning horizon.

    The loop keeps running after the last call until every appointment made
    inside the horizon has taken place.
    """
    cal = calendar
    if isinstance(source, WeeklyTemplate):
        source = static_source(source)
    end_day = cal.calendar_days_for(spec.horizon)
    warmup_day = cal.calendar_days_for(spec.warmup)
    n_months = math.ceil(spec.horizon / cal.working_days_per_month)
    if spec.mode == "template":
        if source is None:
            raise ValueError("template mode needs a template source")
        state = BookingState(types, cal, source(0, CommitmentFloor(np.zeros((len(types), cal.slots_per_week), dtype=np.int64))), "template", budget)
    else:
        state = BookingState(types, cal, None, "raw", budget)
    log: dict[int, BookingRecord] = {}
    pending: dict[int, list[tuple[int, str]]] = {}
    outcomes: list[tuple[int, DayOutcome]] = []
    calls = sorted(stream, key=lambda q: (q.call_day, q.id))
    if calls and calls[-1].call_day >= end_day:
        raise ValueError("stream has calls after the horizon")
    ci = 0
    last_day = end_day + policy.booking_horizon + 1
    excess = 0
    for day in range(last_day):
        working = cal.is_working(day)
        if working and spec.mode == "template":
            wi = cal.working_index(day)
            month, first = divmod(wi, cal.working_days_per_month)
            if first == 0 and 0 < month < n_months and source is not None:
                state.set_template(month, source(month, state.floor_for_month(month)))
        while ci < len(calls) and calls[ci].call_day == day:
            req = calls[ci]
            ci += 1
            rec = BookingRecord(req.id, req.type, req.call_day, req.desired_day, req.desired_time_pref)
            log[req.id] = rec
            result = offer_and_book(req, state, policy, request_rng(spec.seed, _OFFER, req.id))
            if result == "no_appointment":
                continue
            appt = state.appointments[req.id]
            rec.actual_day, rec.slot = appt.day, appt.slot
            rec.disposition = "booked"
            rec.same_day = result == "same_day"
            cancel = draw_cancellation(appt, policy, cal, request_rng(spec.seed, _CANCEL, req.id))
            if cancel is not None:
                pending.setdefault(cancel[0], []).append((req.id, cancel[1]))
        for patient, who, _ in process_cancellations(state, day, pending):
            log[patient].disposition = who
            log[patient].cancel_day = day
        if not working:
            continue
        if spec.mode == "template":
            t = state.template_for_month(cal.month_of(day))
            excess = max(excess, int((state.counts(day) - t.day_counts(cal.weekday(day), cal)).max()))
        patients = state.by_day.get(day, [])
        slots: list[list[BookedPatient]] = [[] for _ in range(cal.slots_per_day)]
        for pid in patients:
            appt = state.appointments[pid]
            q = show_up_probability(spec.no_show, appt.day - appt.booking_day, float(types.no_show[appt.type]))
            shows = request_rng(spec.seed, _SHOW, pid).random() < q
            slots[appt.slot].append(BookedPatient(appt.type, 1.0 if shows else 0.0, pid))
        schedule = DaySchedule(tuple(tuple(s) for s in slots), cal.weekday(day))
        draws = DayDraws.sample(day_rng(spec.seed, _DAY, day), cal.slots_per_day)
        out = run_day(schedule, draws, types, cal, flow)
        outcomes.append((day, out))
        for i, pid in enumerate(out.patient_id):
            rec = log[int(pid)]
            if out.shown[i]:
                rec.disposition = "served"
                rec.direct_wait = float(out.direct_wait[i])
            else:
                rec.disposition = "no_show"
            state.appointments.pop(int(pid))
        state.by_day.pop(day, None)
    records = [log[k] for k in sorted(log)]
    return HorizonResult(records, outcomes, dict(sorted(state.templates.items())), warmup_day, end_day, excess)
