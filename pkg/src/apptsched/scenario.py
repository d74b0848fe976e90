"""Demand scenarios, call streams and show-up probability models.

Both generators share one sampler: weekly request volumes are drawn from an
over-dispersed count distribution, each request gets a desired working day
by weekday weight and a patient type by the (seasonal) mix. The call stream
then draws a lead time per request and places the call before the desired
day, so aggregating a call stream by desired day reproduces the scenario
generated from the same seed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .domain import CalendarConfig, PatientTypeSet

TIME_PREFS = ("none", "morning", "afternoon")
NO_SHOW_KINDS = ("constant", "kopach", "gallucci", "green_savin")


def default_lead_mass(max_lead: int = 28, within_week: float = 0.65) -> tuple[float, ...]:
    """Geometric-shaped lead-time mass on 0..max_lead with mass(0..7) == within_week."""
    if max_lead < 8:
        raise ValueError("max_lead must be at least 8 days")

    def share(q: float) -> float:
        w = q ** np.arange(max_lead + 1)
        return w[:8].sum() / w.sum() - within_week

    q = brentq(share, 1e-9, 1.0 - 1e-12, xtol=1e-15)
    w = q ** np.arange(max_lead + 1)
    return tuple((w / w.sum()).tolist())


# Mild seasonal swing of the acute/chronic split: more acute visits in
# winter, more chronic visits in summer. Keyed by month of year (0 = Jan).
def default_seasonal_modifiers(n_types: int = 3, swing: float = 0.15) -> tuple[tuple[float, ...], ...]:
    season = {11: 1, 0: 1, 1: 1, 5: -1, 6: -1, 7: -1}  # +1 winter, -1 summer
    rows = []
    for month in range(12):
        s = season.get(month, 0)
        row = [1.0] * n_types
        if n_types >= 2:
            row[0] = 1.0 + swing * s
            row[1] = 1.0 - swing * s
        rows.append(tuple(row))
    return tuple(rows)


@dataclass(frozen=True)
class DemandParams:
    weekly_mean: float
    mix: tuple[float, ...]
    dispersion: float = math.inf
    weekday_weights: tuple[float, ...] = (0.16, 0.20, 0.20, 0.20, 0.24)
    lead_mass: tuple[float, ...] = field(default_factory=default_lead_mass)
    time_pref: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seasonal_mix_modifiers: tuple[tuple[float, ...], ...] | None = None
    start_month: int = 0

    def __post_init__(self) -> None:
        if self.weekly_mean < 0:
            raise ValueError("weekly_mean must be >= 0")
        if not self.dispersion > 0:
            raise ValueError("dispersion must be > 0 (inf for Poisson)")
        for name in ("mix", "weekday_weights", "lead_mass", "time_pref"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.ndim != 1 or len(v) == 0 or (v < 0).any():
                raise ValueError(f"{name} must be a nonnegative vector")
            if abs(v.sum() - 1.0) > 1e-9:
                raise ValueError(f"{name} must sum to 1 (got {v.sum()!r})")
        if len(self.time_pref) != 3:
            raise ValueError("time_pref gives (none, morning, afternoon) probabilities")
        if self.seasonal_mix_modifiers is not None:
            mods = np.asarray(self.seasonal_mix_modifiers, dtype=float)
            if mods.shape != (12, len(self.mix)) or (mods < 0).any():
                raise ValueError("seasonal_mix_modifiers must be 12 x n_types nonnegative multipliers")
        if not 0 <= self.start_month < 12:
            raise ValueError("start_month is a month of year in 0..11")

    @classmethod
    def for_types(cls, types: PatientTypeSet, weekly_mean: float, **kw) -> "DemandParams":
        return cls(weekly_mean=weekly_mean, mix=tuple(types.mix.tolist()), **kw)

    @property
    def max_lead(self) -> int:
        return len(self.lead_mass) - 1

    def month_mix(self, planning_month: int) -> np.ndarray:
        mix = np.asarray(self.mix, dtype=float)
        if self.seasonal_mix_modifiers is None:
            return mix
        m = mix * np.asarray(self.seasonal_mix_modifiers[(self.start_month + planning_month) % 12])
        return m / m.sum()


@dataclass(frozen=True, eq=False)
class DemandScenario:
    """Desired-day demand ``f[r, k]`` for calendar days ``start_day + k``."""

    f: np.ndarray
    scenario_id: int = 0
    start_day: int = 0

    def __post_init__(self) -> None:
        arr = np.array(self.f, dtype=np.int64)
        if arr.ndim != 2 or (arr < 0).any():
            raise ValueError("scenario demand must be a nonnegative (types x days) matrix")
        arr.setflags(write=False)
        object.__setattr__(self, "f", arr)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, DemandScenario)
            and self.scenario_id == other.scenario_id
            and self.start_day == other.start_day
            and np.array_equal(self.f, other.f)
        )

    @property
    def horizon(self) -> int:
        return self.f.shape[1]

    def working_demand(self, calendar: CalendarConfig) -> np.ndarray:
        """Demand restricted to working days, shape ``(R, n_working_days)``."""
        days = self.start_day + np.arange(self.horizon)
        keep = (days % 7) < calendar.days_per_week
        return self.f[:, keep]


@dataclass(frozen=True)
class PatientRequest:
    id: int
    type: int
    call_day: int
    desired_day: int
    desired_time_pref: str = "none"

    def __post_init__(self) -> None:
        if self.desired_day < self.call_day:
            raise ValueError("desired_day precedes call_day")
        if self.desired_time_pref not in TIME_PREFS:
            raise ValueError(f"unknown time preference {self.desired_time_pref!r}")

    @property
    def lead(self) -> int:
        return self.desired_day - self.call_day


@dataclass(frozen=True)
class NoShowModel:
    kind: str = "constant"
    base_p: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in NO_SHOW_KINDS:
            raise ValueError(f"unknown no-show model {self.kind!r}; expected one of {NO_SHOW_KINDS}")
        if self.base_p is not None and not 0 <= self.base_p <= 1:
            raise ValueError("base_p must be a probability")


def show_up_probability(m: NoShowModel, delay_days: int, type_p: float) -> float:
    """Probability that a patient booked ``delay_days`` ahead shows up."""
    if delay_days < 0:
        raise ValueError("delay must be >= 0")
    j = float(delay_days)
    p = type_p if m.base_p is None else m.base_p
    if m.kind == "constant":
        q = 1.0 - p
    elif m.kind == "kopach":
        q = 1.0 - p * (1.0 - 0.5 * math.exp(-0.017 * j))
    elif m.kind == "gallucci":
        q = 1.0 - (0.51 - 0.36 * math.exp(-j / 9.0))
    else:
        q = 1.0 - (0.31 - 0.3 * math.exp(-j / 50.0))
    return min(1.0, max(0.0, q))


# -- sampling -----------------------------------------------------------------


def _weekly_volume(params: DemandParams, rng: np.random.Generator) -> int:
    mu = params.weekly_mean
    if mu == 0:
        return 0
    if math.isinf(params.dispersion):
        return int(rng.poisson(mu))
    k = params.dispersion
    return int(rng.negative_binomial(k, k / (k + mu)))


def _sample_desired(
    params: DemandParams, calendar: CalendarConfig, start_day: int, horizon: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Types and desired calendar days of every request desired inside the window."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1 day")
    if len(params.weekday_weights) != calendar.days_per_week:
        raise ValueError("need one weekday weight per working day of the week")
    weights = np.asarray(params.weekday_weights, dtype=float)
    types_out, days_out = [], []
    first_week, last_week = start_day // 7, (start_day + horizon - 1) // 7
    cum_cache: dict[int, np.ndarray] = {}
    for week in range(first_week, last_week + 1):
        n = _weekly_volume(params, rng)
        if n == 0:
            continue
        wd = rng.choice(calendar.days_per_week, size=n, p=weights)
        days = week * 7 + wd
        u = rng.random(n)
        kinds = np.empty(n, dtype=np.int64)
        for i, (d, ui) in enumerate(zip(days, u)):
            month = calendar.month_of(int(d))
            if month not in cum_cache:
                cum_cache[month] = np.cumsum(params.month_mix(month))
            kinds[i] = min(int(np.searchsorted(cum_cache[month], ui, side="right")), len(params.mix) - 1)
        inside = (days >= start_day) & (days < start_day + horizon)
        types_out.append(kinds[inside])
        days_out.append(days[inside])
    if not types_out:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(types_out), np.concatenate(days_out)


def generate_scenario(
    params: DemandParams,
    horizon: int,
    seed: int,
    calendar: CalendarConfig | None = None,
    start_day: int = 0,
    scenario_id: int = 0,
) -> DemandScenario:
    """Sample desired-day demand counts over ``horizon`` calendar days."""
    calendar = calendar or CalendarConfig()
    rng = np.random.default_rng(seed)
    kinds, days = _sample_desired(params, calendar, start_day, horizon, rng)
    f = np.zeros((len(params.mix), horizon), dtype=np.int64)
    np.add.at(f, (kinds, days - start_day), 1)
    return DemandScenario(f, scenario_id, start_day)


def cell_means(params: DemandParams, calendar: CalendarConfig, start_day: int, horizon: int) -> np.ndarray:
    """Expected requests per (type, calendar day) for a unit volume multiplier."""
    w = np.asarray(params.weekday_weights, dtype=float)
    mu = np.zeros((len(params.mix), horizon))
    for k in range(horizon):
        d = start_day + k
        if d % 7 < calendar.days_per_week:
            mu[:, k] = params.weekly_mean * w[d % 7] * params.month_mix(calendar.month_of(d))
    return mu


def latin_hypercube_scenarios(
    params: DemandParams,
    horizon: int,
    count: int,
    seed: int,
    calendar: CalendarConfig | None = None,
    start_day: int = 0,
) -> list[DemandScenario]:
    """A stratified batch of scenarios, each distributed exactly like ``generate_scenario``.

    A Poisson weekly volume split by weekday and type gives independent
    Poisson cell counts; the over-dispersed volume is the same with a
    gamma-distributed weekly multiplier. Every cell count and every weekly
    multiplier is drawn by inversion from uniforms that take one value per
    stratum ``[i/count, (i+1)/count)`` across the batch, so the batch covers
    each marginal evenly while any single scenario stays an exact draw.
    """
    from scipy.stats import gamma, poisson

    if horizon < 1 or count < 1:
        raise ValueError("horizon and count must be >= 1")
    calendar = calendar or CalendarConfig()
    rng = np.random.default_rng(seed)

    def strata(shape: tuple[int, ...]) -> np.ndarray:
        perm = np.argsort(rng.random((count, *shape)), axis=0)
        return (perm + rng.random((count, *shape))) / count

    mu = cell_means(params, calendar, start_day, horizon)
    days = start_day + np.arange(horizon)
    weeks = days // 7 - start_day // 7
    if math.isinf(params.dispersion):
        scale = np.ones((count, 1, horizon))
    else:
        k = params.dispersion
        g = gamma.ppf(strata((int(weeks[-1]) + 1,)), k, scale=1.0 / k)
        scale = g[:, weeks][:, None, :]
    lam = mu[None] * scale
    f = poisson.ppf(strata(mu.shape), lam)
    f[:, mu == 0] = 0
    f = f.astype(np.int64)
    return [DemandScenario(f[i], i, start_day) for i in range(count)]


def generate_call_stream(
    params: DemandParams,
    horizon: int,
    seed: int,
    calendar: CalendarConfig | None = None,
) -> list[PatientRequest]:
    """Sample every request whose desired day falls in ``[0, horizon)``.

    The call day is the desired day minus a lead drawn from
    ``params.lead_mass``, moved forward to the next working day and clamped
    to day 0, so realized leads never exceed the drawn ones.
    """
    calendar = calendar or CalendarConfig()
    rng = np.random.default_rng(seed)
    kinds, days = _sample_desired(params, calendar, 0, horizon, rng)
    n = len(kinds)
    leads = rng.choice(len(params.lead_mass), size=n, p=np.asarray(params.lead_mass))
    prefs = rng.choice(3, size=n, p=np.asarray(params.time_pref))
    raw = []
    for k, d, lead, pref in zip(kinds, days, leads, prefs):
        call = max(0, int(d) - int(lead))
        call = min(calendar.next_working_day(call), int(d))
        raw.append((call, int(d), int(k), TIME_PREFS[int(pref)]))
    raw.sort(key=lambda row: (row[0], row[1]))
    return [PatientRequest(i, k, call, d, pref) for i, (call, d, k, pref) in enumerate(raw)]


def aggregate_stream(stream: Sequence[PatientRequest], n_types: int, horizon: int) -> DemandScenario:
    f = np.zeros((n_types, horizon), dtype=np.int64)
    for req in stream:
        f[req.type, req.desired_day] += 1
    return DemandScenario(f)


# -- delimited text -------------------------------------------------------------


def dumps_scenarios(scenarios: Sequence[DemandScenario]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario_id", "start_day", "horizon", "type", "day", "count"])
    for s in scenarios:
        rows = list(zip(*np.nonzero(s.f)))
        if not rows:
            w.writerow([s.scenario_id, s.start_day, s.horizon, "", "", ""])
        for r, k in rows:
            w.writerow([s.scenario_id, s.start_day, s.horizon, int(r), s.start_day + int(k), int(s.f[r, k])])
    return buf.getvalue()


def loads_scenarios(text: str, n_types: int) -> list[DemandScenario]:
    reader = csv.DictReader(io.StringIO(text))
    acc: dict[int, tuple[int, np.ndarray]] = {}
    order: list[int] = []
    for row in reader:
        sid, start, horizon = int(row["scenario_id"]), int(row["start_day"]), int(row["horizon"])
        if sid not in acc:
            acc[sid] = (start, np.zeros((n_types, horizon), dtype=np.int64))
            order.append(sid)
        if row["type"]:
            acc[sid][1][int(row["type"]), int(row["day"]) - start] = int(row["count"])
    return [DemandScenario(acc[s][1], s, acc[s][0]) for s in order]


STREAM_HEADER = ["id", "type", "call_day", "desired_day", "time_pref"]


def dumps_stream(stream: Sequence[PatientRequest]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STREAM_HEADER)
    for q in stream:
        w.writerow([q.id, q.type, q.call_day, q.desired_day, q.desired_time_pref])
    return buf.getvalue()


def loads_stream(text: str) -> list[PatientRequest]:
    return [
        PatientRequest(int(r["id"]), int(r["type"]), int(r["call_day"]), int(r["desired_day"]), r["time_pref"])
        for r in csv.DictReader(io.StringIO(text))
    ]
