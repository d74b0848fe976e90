"""Calendar, patient-type and template types plus first-stage feasibility checks.

A weekly template is an integer matrix ``counts[r, a]``: how many patients of
type ``r`` may be booked into weekly slot ``a``. Slots are numbered
weekday-major, then session, then slot within the session.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

# Complexity sums are compared against budgets with this slack; 3 x 0.32
# is 0.9600000000000001 in binary floating point.
COMPLEXITY_TOL = 1e-9


@dataclass(frozen=True)
class PatientTypeSpec:
    id: int
    label: str
    complexity: float
    no_show_prob: float
    weight: float = 1.0
    nurse_service: tuple[float, float] = (12.0, 9.0)
    provider_service: tuple[float, float] = (18.0, 9.0)
    mix_fraction: float = 0.0

    def __post_init__(self) -> None:
        if not self.complexity > 0:
            raise ValueError(f"type {self.label!r}: complexity must be > 0")
        if not 0 <= self.no_show_prob < 1:
            raise ValueError(f"type {self.label!r}: no_show_prob must be in [0, 1)")
        if self.weight < 0:
            raise ValueError(f"type {self.label!r}: weight must be >= 0")
        for name in ("nurse_service", "provider_service"):
            mean, sd = getattr(self, name)
            if not (mean > 0 and sd > 0):
                raise ValueError(f"type {self.label!r}: {name} mean and sd must be > 0")
        if not 0 <= self.mix_fraction <= 1:
            raise ValueError(f"type {self.label!r}: mix_fraction must be in [0, 1]")

    @property
    def code(self) -> str:
        return self.label[:1].upper()


class PatientTypeSet(Sequence[PatientTypeSpec]):
    """Ordered, validated collection of patient types (index == ``spec.id``)."""

    def __init__(self, specs: Iterable[PatientTypeSpec]):
        self._specs = tuple(specs)
        if not self._specs:
            raise ValueError("a patient type set needs at least one type")
        for i, s in enumerate(self._specs):
            if s.id != i:
                raise ValueError(f"type ids must be 0..R-1 in order; got id {s.id} at position {i}")
        labels = [s.label for s in self._specs]
        if len(set(labels)) != len(labels):
            raise ValueError("type labels must be unique")
        total = sum(s.mix_fraction for s in self._specs)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mix fractions must sum to 1 (got {total!r})")
        self.complexities = np.array([s.complexity for s in self._specs], dtype=float)
        self.no_show = np.array([s.no_show_prob for s in self._specs], dtype=float)
        self.weights = np.array([s.weight for s in self._specs], dtype=float)
        self.mix = np.array([s.mix_fraction for s in self._specs], dtype=float)

    def __getitem__(self, i):  # type: ignore[override]
        return self._specs[i]

    def __len__(self) -> int:
        return len(self._specs)

    def __iter__(self) -> Iterator[PatientTypeSpec]:
        return iter(self._specs)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PatientTypeSet) and self._specs == other._specs

    def __hash__(self) -> int:
        return hash(self._specs)

    def __repr__(self) -> str:
        return f"PatientTypeSet({[s.label for s in self._specs]})"

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self._specs]

    def index_of(self, label_or_code: str) -> int:
        for s in self._specs:
            if s.label == label_or_code:
                return s.id
        matches = [s.id for s in self._specs if s.code == label_or_code.upper()]
        if len(matches) == 1:
            return matches[0]
        raise KeyError(f"unknown patient type {label_or_code!r}")


def default_types() -> PatientTypeSet:
    """Acute / chronic / preventive types of the base clinic.

    Complexities 0.29 / 0.32 / 0.36, visit mix 49.3 / 36.1 / 14.6 %, service
    times as mean (sd) minutes, 10 % no-show for every type.
    """
    return PatientTypeSet(
        [
            PatientTypeSpec(0, "acute", 0.29, 0.10, 1.0, (11.3, 8.3), (17.3, 8.7), 0.493),
            PatientTypeSpec(1, "chronic", 0.32, 0.10, 1.0, (12.6, 8.8), (19.3, 9.2), 0.361),
            PatientTypeSpec(2, "preventive", 0.36, 0.10, 1.0, (13.9, 11.3), (21.4, 11.8), 0.146),
        ]
    )


@dataclass(frozen=True)
class CalendarConfig:
    """Clinic calendar. Times are minutes after midnight.

    Calendar day 0 is a Monday; weeks have 7 calendar days of which the first
    ``days_per_week`` are working days. ``blocked_sessions`` lists
    ``(weekday, session)`` pairs reserved for non-clinical work.
    """

    days_per_week: int = 5
    sessions_per_day: int = 2
    slots_per_session: int = 4
    slot_minutes: int = 60
    day_start: int = 8 * 60
    lunch_start: int = 12 * 60
    lunch_end: int = 13 * 60
    day_end: int = 17 * 60
    working_days_per_month: int = 20
    blocked_sessions: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        if not 1 <= self.days_per_week <= 7:
            raise ValueError("days_per_week must be in 1..7")
        if self.sessions_per_day != 2:
            raise ValueError("exactly two sessions per day (morning, afternoon) are supported")
        if self.slots_per_session < 1 or self.slot_minutes < 1:
            raise ValueError("slots_per_session and slot_minutes must be positive")
        if not self.day_start < self.lunch_start < self.lunch_end < self.day_end:
            raise ValueError("lunch interval must lie strictly between the two sessions")
        length = self.slots_per_session * self.slot_minutes
        if self.lunch_start - self.day_start != length or self.day_end - self.lunch_end != length:
            raise ValueError("slots_per_session x slot_minutes must equal each session's length")
        if self.working_days_per_month < 1:
            raise ValueError("working_days_per_month must be positive")
        object.__setattr__(self, "blocked_sessions", tuple(tuple(b) for b in self.blocked_sessions))
        for wd, s in self.blocked_sessions:
            if not (0 <= wd < self.days_per_week and 0 <= s < self.sessions_per_day):
                raise ValueError(f"blocked session {(wd, s)} outside the week")

    # slot geometry

    @property
    def slots_per_day(self) -> int:
        return self.sessions_per_day * self.slots_per_session

    @property
    def slots_per_week(self) -> int:
        return self.days_per_week * self.slots_per_day

    def slot_index(self, weekday: int, session: int, slot: int) -> int:
        return (weekday * self.sessions_per_day + session) * self.slots_per_session + slot

    def slot_position(self, a: int) -> tuple[int, int, int]:
        weekday, rest = divmod(a, self.slots_per_day)
        session, slot = divmod(rest, self.slots_per_session)
        return weekday, session, slot

    def day_slots(self, weekday: int) -> range:
        start = weekday * self.slots_per_day
        return range(start, start + self.slots_per_day)

    def session_slots(self, weekday: int, session: int) -> range:
        start = self.slot_index(weekday, session, 0)
        return range(start, start + self.slots_per_session)

    def slot_start(self, slot_in_day: int) -> int:
        """Clock minute at which the given slot of a day begins."""
        session, slot = divmod(slot_in_day, self.slots_per_session)
        base = self.day_start if session == 0 else self.lunch_end
        return base + slot * self.slot_minutes

    def is_blocked(self, weekday: int, session: int) -> bool:
        return (weekday, session) in self.blocked_sessions

    # calendar days

    def is_working(self, day: int) -> bool:
        return day % 7 < self.days_per_week

    def weekday(self, day: int) -> int:
        return day % 7

    def working_index(self, day: int) -> int:
        if not self.is_working(day):
            raise ValueError(f"calendar day {day} is not a working day")
        return (day // 7) * self.days_per_week + day % 7

    def calendar_day(self, working_index: int) -> int:
        week, wd = divmod(working_index, self.days_per_week)
        return week * 7 + wd

    def next_working_day(self, day: int) -> int:
        while not self.is_working(day):
            day += 1
        return day

    def working_days_before(self, day: int) -> int:
        """Number of working days in ``[0, day)``."""
        week, rem = divmod(day, 7)
        return week * self.days_per_week + min(rem, self.days_per_week)

    def month_of(self, day: int) -> int:
        return self.working_index(day) // self.working_days_per_month

    def calendar_days_for(self, working_days: int) -> int:
        """Smallest calendar horizon containing ``working_days`` working days."""
        if working_days <= 0:
            return 0
        return self.calendar_day(working_days - 1) + 1


@dataclass(frozen=True)
class ComplexityBudget:
    kappa: float = 0.96
    eta: float = 2.8

    def __post_init__(self) -> None:
        if not 0 < self.kappa <= self.eta:
            raise ValueError("complexity budget requires 0 < kappa <= eta")


def _frozen_int_matrix(a, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.int64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-d (types x slots) matrix")
    if (arr < 0).any():
        raise ValueError(f"{name} must be nonnegative")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class WeeklyTemplate:
    counts: np.ndarray
    month_index: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "counts", _frozen_int_matrix(self.counts, "template counts"))

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, WeeklyTemplate)
            and self.month_index == other.month_index
            and self.counts.shape == other.counts.shape
            and bool((self.counts == other.counts).all())
        )

    def __hash__(self) -> int:
        return hash((self.month_index, self.counts.shape, self.counts.tobytes()))

    @classmethod
    def zeros(cls, types: Sequence, calendar: CalendarConfig, month_index: int = 0) -> "WeeklyTemplate":
        return cls(np.zeros((len(types), calendar.slots_per_week), dtype=np.int64), month_index)

    def day_counts(self, weekday: int, calendar: CalendarConfig) -> np.ndarray:
        """``(R, slots_per_day)`` block of one weekday."""
        return self.counts[:, calendar.day_slots(weekday)]

    def day_totals(self, calendar: CalendarConfig) -> np.ndarray:
        """Per-type admitted counts per weekday, shape ``(R, days_per_week)``."""
        r = self.counts.shape[0]
        return self.counts.reshape(r, calendar.days_per_week, calendar.slots_per_day).sum(axis=2)

    def with_month(self, month_index: int) -> "WeeklyTemplate":
        return WeeklyTemplate(self.counts, month_index)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True, eq=False)
class CommitmentFloor:
    floors: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "floors", _frozen_int_matrix(self.floors, "floors"))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CommitmentFloor) and np.array_equal(self.floors, other.floors)

    def __hash__(self) -> int:
        return hash((self.floors.shape, self.floors.tobytes()))


@dataclass(frozen=True)
class ForbiddenDayConfig:
    """One banned full-day slot pattern: ``per_slot_counts[slot][r]``."""

    weekday: int
    per_slot_counts: tuple[tuple[int, ...], ...]

    @classmethod
    def from_template(cls, t: WeeklyTemplate, weekday: int, calendar: CalendarConfig) -> "ForbiddenDayConfig":
        block = t.day_counts(weekday, calendar)
        return cls(weekday, tuple(tuple(int(v) for v in block[:, k]) for k in range(block.shape[1])))

    def as_block(self) -> np.ndarray:
        """``(R, slots_per_day)`` matrix form."""
        return np.array(self.per_slot_counts, dtype=np.int64).T

    def matches(self, t: WeeklyTemplate, calendar: CalendarConfig) -> bool:
        return ForbiddenDayConfig.from_template(t, self.weekday, calendar) == self


@dataclass(frozen=True)
class Violation:
    kind: str  # slot | session | floor | forbidden | blocked | shape
    location: tuple
    value: float
    limit: float


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}


def slot_complexity(counts_for_slot, types: PatientTypeSet) -> float:
    """Cumulative complexity ``sum_r c_r * x_r`` of one slot."""
    x = np.asarray(counts_for_slot, dtype=float)
    if x.shape != (len(types),):
        raise ValueError(f"expected {len(types)} per-type counts, got shape {x.shape}")
    if (x < 0).any():
        raise ValueError("slot counts must be nonnegative")
    return float(x @ types.complexities)


def validate_template(
    t: WeeklyTemplate,
    budget: ComplexityBudget,
    types: PatientTypeSet,
    calendar: CalendarConfig,
    floor: CommitmentFloor | None = None,
    banned: Iterable[ForbiddenDayConfig] = (),
) -> ValidationReport:
    """Check slot and session budgets, commitment floors and banned day patterns."""
    report = ValidationReport()
    shape = (len(types), calendar.slots_per_week)
    if t.counts.shape != shape:
        report.violations.append(Violation("shape", t.counts.shape, 0, 0))
        return report
    load = types.complexities @ t.counts
    for a in range(calendar.slots_per_week):
        if load[a] > budget.kappa + COMPLEXITY_TOL:
            report.violations.append(Violation("slot", calendar.slot_position(a), float(load[a]), budget.kappa))
    for wd in range(calendar.days_per_week):
        for s in range(calendar.sessions_per_day):
            sl = calendar.session_slots(wd, s)
            total = float(load[sl].sum())
            if total > budget.eta + COMPLEXITY_TOL:
                report.violations.append(Violation("session", (wd, s), total, budget.eta))
            if calendar.is_blocked(wd, s) and t.counts[:, sl].any():
                report.violations.append(Violation("blocked", (wd, s), float(t.counts[:, sl].sum()), 0))
    if floor is not None:
        if floor.floors.shape != shape:
            report.violations.append(Violation("shape", floor.floors.shape, 0, 0))
        else:
            for r, a in zip(*np.nonzero(t.counts < floor.floors)):
                report.violations.append(
                    Violation("floor", (int(r), *calendar.slot_position(int(a))), int(t.counts[r, a]), int(floor.floors[r, a]))
                )
    for g in banned:
        if g.matches(t, calendar):
            report.violations.append(Violation("forbidden", (g.weekday,), 1, 0))
    return report


def daily_capacity(
    t: WeeklyTemplate | Sequence[WeeklyTemplate],
    r: int,
    calendar_day: int,
    calendar: CalendarConfig,
) -> int:
    """Type-``r`` patients admitted on a calendar day by the active template.

    ``t`` is a single template (applies every month) or a sequence of
    monthly templates indexed by month.
    """
    if calendar_day < 0:
        raise ValueError("calendar day before the planning horizon")
    if not calendar.is_working(calendar_day):
        return 0
    if isinstance(t, WeeklyTemplate):
        template = t
    else:
        month = calendar.month_of(calendar_day)
        if month >= len(t):
            raise ValueError(f"calendar day {calendar_day} lies beyond the planned months")
        template = t[month]
    if not 0 <= r < template.counts.shape[0]:
        raise ValueError(f"type index {r} out of range")
    return int(template.day_counts(calendar.weekday(calendar_day), calendar)[r].sum())


# -- day patterns written as "A,A,P" / "No App" (one string per slot) --------


def parse_day_pattern(rows: Sequence[str], types: PatientTypeSet) -> np.ndarray:
    """Turn per-slot strings like ``"A,C,C"`` into an ``(R, len(rows))`` block."""
    block = np.zeros((len(types), len(rows)), dtype=np.int64)
    for k, cell in enumerate(rows):
        cell = cell.strip()
        if not cell or cell.lower() in {"no app", "-"}:
            continue
        for code in cell.split(","):
            block[types.index_of(code.strip()), k] += 1
    return block


def template_from_days(
    day_rows: Sequence[Sequence[str]], types: PatientTypeSet, calendar: CalendarConfig, month_index: int = 0
) -> WeeklyTemplate:
    """Build a template from one slot-pattern column per weekday."""
    if len(day_rows) != calendar.days_per_week:
        raise ValueError("need one pattern per weekday")
    blocks = [parse_day_pattern(rows, types) for rows in day_rows]
    for b in blocks:
        if b.shape[1] != calendar.slots_per_day:
            raise ValueError("each weekday pattern must list every slot of the day")
    return WeeklyTemplate(np.concatenate(blocks, axis=1), month_index)


# -- template file format ----------------------------------------------------

TEMPLATE_HEADER = ["weekday", "session", "slot", "type", "count"]


def dumps_template(t: WeeklyTemplate, types: PatientTypeSet, calendar: CalendarConfig) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["month_index", t.month_index])
    w.writerow(TEMPLATE_HEADER)
    for a in range(calendar.slots_per_week):
        wd, s, k = calendar.slot_position(a)
        for r, spec in enumerate(types):
            w.writerow([wd, s, k, spec.label, int(t.counts[r, a])])
    return buf.getvalue()


def loads_template(text: str, types: PatientTypeSet, calendar: CalendarConfig) -> WeeklyTemplate:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][0] != "month_index":
        raise ValueError("template file must start with a month_index row")
    month = int(rows[0][1])
    if rows[1] != TEMPLATE_HEADER:
        raise ValueError(f"expected header {TEMPLATE_HEADER}")
    counts = np.zeros((len(types), calendar.slots_per_week), dtype=np.int64)
    for row in rows[2:]:
        if not row:
            continue
        wd, s, k, label, n = row
        counts[types.index_of(label), calendar.slot_index(int(wd), int(s), int(k))] = int(n)
    return WeeklyTemplate(counts, month)


def write_template(path: str | Path, t: WeeklyTemplate, types: PatientTypeSet, calendar: CalendarConfig) -> None:
    Path(path).write_text(dumps_template(t, types, calendar))


def read_template(path: str | Path, types: PatientTypeSet, calendar: CalendarConfig) -> WeeklyTemplate:
    return loads_template(Path(path).read_text(), types, calendar)


def format_template(t: WeeklyTemplate, types: PatientTypeSet, calendar: CalendarConfig) -> str:
    """Human-readable grid, one column per weekday (``A,A,P`` / ``-``)."""
    lines = []
    names = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"][: calendar.days_per_week]
    lines.append("slot  " + "".join(f"{n:<10}" for n in names))
    for k in range(calendar.slots_per_day):
        cells = []
        for wd in range(calendar.days_per_week):
            col = t.counts[:, wd * calendar.slots_per_day + k]
            txt = ",".join(spec.code for spec in types for _ in range(int(col[spec.id])))
            cells.append(f"{txt or '-':<10}")
        lines.append(f"{k + 1:<6}" + "".join(cells))
    return "\n".join(lines)
