"""Discrete-event simulation of one clinic day: a nurse followed by a provider.

Both servers work first-come-first-served in order of realized arrival.
Patients target their slot's start time and arrive with a normal
unpunctuality (early arrivals are common). Service times are lognormal with
the per-type mean and standard deviation. The provider does not see an
afternoon patient before the lunch break ends nor a morning patient before
the day starts; shown patients are always served, even past closing.

Random inputs are drawn as fixed-shape arrays indexed by (slot, position in
slot), so two schedules that share a prefix see identical draws for the
shared patients (common random numbers).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .domain import CalendarConfig, ForbiddenDayConfig, PatientTypeSet, WeeklyTemplate

MAX_PER_SLOT = 16
KPI_NAMES = ("direct_wait", "lunch_spillover", "after_hours")


@dataclass(frozen=True)
class BookedPatient:
    type: int
    show_prob: float = 1.0
    patient_id: int = -1

    def __post_init__(self) -> None:
        if not 0.0 <= self.show_prob <= 1.0:
            raise ValueError("show_prob must be a probability")


@dataclass(frozen=True)
class DaySchedule:
    """Booked patients per slot of one day; each targets its slot's start time."""

    slots: tuple[tuple[BookedPatient, ...], ...]
    weekday: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "slots", tuple(tuple(s) for s in self.slots))
        for k, s in enumerate(self.slots):
            if len(s) > MAX_PER_SLOT:
                raise ValueError(f"slot {k} holds {len(s)} patients; at most {MAX_PER_SLOT} supported")

    @classmethod
    def empty(cls, calendar: CalendarConfig, weekday: int = 0) -> "DaySchedule":
        return cls(tuple(() for _ in range(calendar.slots_per_day)), weekday)

    @classmethod
    def from_template(
        cls, t: WeeklyTemplate, weekday: int, types: PatientTypeSet, calendar: CalendarConfig
    ) -> "DaySchedule":
        """Every slot booked to its template maximum; shows follow each type's constant rate."""
        block = t.day_counts(weekday, calendar)
        slots = []
        for k in range(calendar.slots_per_day):
            slots.append(
                tuple(
                    BookedPatient(r, 1.0 - float(types.no_show[r]))
                    for r in range(len(types))
                    for _ in range(int(block[r, k]))
                )
            )
        return cls(tuple(slots), weekday)

    @property
    def n_booked(self) -> int:
        return sum(len(s) for s in self.slots)

    def counts(self, n_types: int) -> np.ndarray:
        out = np.zeros((n_types, len(self.slots)), dtype=np.int64)
        for k, s in enumerate(self.slots):
            for b in s:
                out[b.type, k] += 1
        return out

    def fits(self, t: WeeklyTemplate, calendar: CalendarConfig) -> bool:
        block = t.day_counts(self.weekday, calendar)
        return bool((self.counts(block.shape[0]) <= block).all())


@dataclass(frozen=True)
class FlowParams:
    arrival_mean: float = -16.62
    arrival_sd: float = 27.07
    earliest_before_start: float = 60.0  # arrivals are clamped to day_start minus this
    replications: int = 200
    alpha: float = 0.85
    thresholds: tuple[float, float, float] = (30.0, 45.0, 60.0)  # direct wait, lunch spillover, after hours
    wait_from_scheduled: bool = False  # clock starts at max(arrival, slot start) when set

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if len(self.thresholds) != 3 or not all(x > 0 for x in self.thresholds):
            raise ValueError("three positive thresholds required")
        if self.replications < 1 or self.arrival_sd < 0 or self.earliest_before_start < 0:
            raise ValueError("invalid flow parameters")
        object.__setattr__(self, "thresholds", tuple(float(x) for x in self.thresholds))


def lognormal_params(mean: float, sd: float) -> tuple[float, float]:
    """(mu, sigma) of the lognormal with the given mean and standard deviation."""
    if mean <= 0 or sd < 0:
        raise ValueError("lognormal needs mean > 0 and sd >= 0")
    s2 = math.log1p((sd / mean) ** 2)
    return math.log(mean) - s2 / 2.0, math.sqrt(s2)


@dataclass(frozen=True, eq=False)
class DayDraws:
    """Uniform show draws and standard normals for arrival and both services."""

    show: np.ndarray
    arrival: np.ndarray
    nurse: np.ndarray
    provider: np.ndarray

    @classmethod
    def sample(cls, rng: np.random.Generator, n_slots: int) -> "DayDraws":
        shape = (n_slots, MAX_PER_SLOT)
        return cls(rng.random(shape), rng.standard_normal(shape), rng.standard_normal(shape), rng.standard_normal(shape))


@dataclass(frozen=True, eq=False)
class DayOutcome:
    """Per-patient timeline (schedule order; NaN for no-shows) and day KPIs."""

    slot: np.ndarray
    type: np.ndarray
    shown: np.ndarray
    arrival: np.ndarray
    nurse_start: np.ndarray
    nurse_end: np.ndarray
    provider_start: np.ndarray
    provider_end: np.ndarray
    direct_wait: np.ndarray
    lunch_spillover: float
    after_hours: float
    patient_id: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_shows(self) -> int:
        return int(self.shown.sum())

    @property
    def n_no_shows(self) -> int:
        return int(len(self.shown) - self.shown.sum())

    @property
    def shown_waits(self) -> np.ndarray:
        return self.direct_wait[self.shown]

    @property
    def mean_direct_wait(self) -> float:
        w = self.shown_waits
        return float(w.mean()) if len(w) else 0.0

    @property
    def provider_busy(self) -> float:
        s = self.shown
        return float((self.provider_end[s] - self.provider_start[s]).sum())

    def kpis(self) -> tuple[float, float, float]:
        return self.mean_direct_wait, self.lunch_spillover, self.after_hours

    def trace(self) -> list[tuple[float, int, str]]:
        """Event rows (time, patient index, event) sorted by time."""
        rows = []
        for i in np.nonzero(self.shown)[0]:
            for name, arr in (
                ("arrive", self.arrival),
                ("nurse_start", self.nurse_start),
                ("nurse_end", self.nurse_end),
                ("provider_start", self.provider_start),
                ("provider_end", self.provider_end),
            ):
                rows.append((float(arr[i]), int(i), name))
        rows.sort()
        return rows


def _overlap(start: np.ndarray, end: np.ndarray, lo: float, hi: float) -> float:
    return float(np.clip(np.minimum(end, hi) - np.maximum(start, lo), 0.0, None).sum())


def run_day(
    schedule: DaySchedule,
    draws: DayDraws,
    types: PatientTypeSet,
    calendar: CalendarConfig,
    p: FlowParams = FlowParams(),
) -> DayOutcome:
    """Simulate one day from explicit random inputs (pure function)."""
    slot, pos, typ, show_p, pid = [], [], [], [], []
    for k, booked in enumerate(schedule.slots):
        for j, b in enumerate(booked):
            slot.append(k)
            pos.append(j)
            typ.append(b.type)
            show_p.append(b.show_prob)
            pid.append(b.patient_id)
    n = len(slot)
    slot_a = np.array(slot, dtype=np.int64)
    pos_a = np.array(pos, dtype=np.int64)
    typ_a = np.array(typ, dtype=np.int64)
    nan = np.full(n, np.nan)
    if n == 0:
        empty = np.zeros(0)
        return DayOutcome(slot_a, typ_a, np.zeros(0, dtype=bool), *(empty,) * 6, 0.0, 0.0, np.zeros(0, dtype=np.int64))

    shown = draws.show[slot_a, pos_a] < np.array(show_p)
    scheduled = np.array([calendar.slot_start(k) for k in slot], dtype=float)
    arrival = np.maximum(
        scheduled + p.arrival_mean + p.arrival_sd * draws.arrival[slot_a, pos_a],
        calendar.day_start - p.earliest_before_start,
    )
    nurse_mu = np.array([lognormal_params(*types[r].nurse_service) for r in typ])
    prov_mu = np.array([lognormal_params(*types[r].provider_service) for r in typ])
    nurse_svc = np.exp(nurse_mu[:, 0] + nurse_mu[:, 1] * draws.nurse[slot_a, pos_a])
    prov_svc = np.exp(prov_mu[:, 0] + prov_mu[:, 1] * draws.provider[slot_a, pos_a])
    afternoon = slot_a >= calendar.slots_per_session
    release = np.where(afternoon, calendar.lunch_end, calendar.day_start).astype(float)

    ns, ne, ps, pe = nan.copy(), nan.copy(), nan.copy(), nan.copy()
    idx = np.nonzero(shown)[0]
    order = idx[np.lexsort((pos_a[idx], slot_a[idx], arrival[idx]))]
    nurse_free = prov_free = -math.inf
    for i in order:
        ns[i] = max(arrival[i], nurse_free)
        ne[i] = nurse_free = ns[i] + nurse_svc[i]
    for i in order:
        ps[i] = max(ne[i], prov_free, release[i])
        pe[i] = prov_free = ps[i] + prov_svc[i]

    clock = np.maximum(arrival, scheduled) if p.wait_from_scheduled else arrival
    # lobby wait plus exam-room wait; with the scheduled clock an early patient's lobby time is free
    wait = np.where(shown, np.maximum(ns - clock, 0.0) + (ps - ne), np.nan)
    s = shown
    lunch = _overlap(ps[s], pe[s], calendar.lunch_start, calendar.lunch_end)
    after = _overlap(ps[s], pe[s], calendar.day_end, math.inf)
    return DayOutcome(
        slot_a, typ_a, shown, np.where(shown, arrival, np.nan), ns, ne, ps, pe, wait, lunch, after,
        np.array(pid, dtype=np.int64),
    )


def day_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(k) for k in keys)]))


def simulate_day(
    schedule: DaySchedule,
    types: PatientTypeSet,
    calendar: CalendarConfig,
    p: FlowParams = FlowParams(),
    seed: int = 0,
) -> DayOutcome:
    draws = DayDraws.sample(day_rng(seed), len(schedule.slots))
    return run_day(schedule, draws, types, calendar, p)


def nearest_rank_quantile(values: Sequence[float], alpha: float) -> float:
    """Smallest value with at least ``alpha`` of the sample at or below it."""
    x = np.sort(np.asarray(values, dtype=float))
    if len(x) == 0:
        raise ValueError("quantile of an empty sample")
    rank = max(1, math.ceil(alpha * len(x) - 1e-12))
    return float(x[rank - 1])


@dataclass(frozen=True, eq=False)
class TemplateEvaluation:
    kpis: np.ndarray  # (weekdays, 3) alpha-quantiles
    replications: np.ndarray  # (weekdays, m, 3)
    violating_weekdays: tuple[int, ...]
    cuts: tuple[ForbiddenDayConfig, ...]


def _weekday_kpis(args) -> np.ndarray:
    schedule, types, calendar, p, seed = args
    out = np.zeros((p.replications, 3))
    for rep in range(p.replications):
        draws = DayDraws.sample(day_rng(seed, schedule.weekday, rep), len(schedule.slots))
        out[rep] = run_day(schedule, draws, types, calendar, p).kpis()
    return out


def violations(kpis: np.ndarray, thresholds: Sequence[float]) -> list[int]:
    """Weekdays whose KPI triple exceeds any threshold."""
    th = np.asarray(thresholds, dtype=float)
    return [w for w in range(len(kpis)) if (np.asarray(kpis[w]) > th).any()]


def cuts_for(t: WeeklyTemplate, weekdays: Sequence[int], calendar: CalendarConfig) -> tuple[ForbiddenDayConfig, ...]:
    return tuple(ForbiddenDayConfig.from_template(t, w, calendar) for w in weekdays)


def evaluate_template(
    t: WeeklyTemplate,
    types: PatientTypeSet,
    calendar: CalendarConfig,
    p: FlowParams = FlowParams(),
    seed: int = 0,
    workers: int = 1,
) -> TemplateEvaluation:
    """Alpha-quantile KPIs per weekday at full booking, plus the cuts they imply."""
    jobs = [
        (DaySchedule.from_template(t, w, types, calendar), types, calendar, p, seed)
        for w in range(calendar.days_per_week)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(_weekday_kpis, jobs))
    else:
        reps = [_weekday_kpis(j) for j in jobs]
    per_rep = np.stack(reps)
    kpis = np.array([[nearest_rank_quantile(r[:, i], p.alpha) for i in range(3)] for r in per_rep])
    bad = violations(kpis, p.thresholds)
    return TemplateEvaluation(kpis, per_rep, tuple(bad), cuts_for(t, bad, calendar))


# (template) -> per-weekday KPI triples; lets tests and replays force outcomes
KpiEvaluator = Callable[[WeeklyTemplate], np.ndarray]
