"""KPI tables for booking-simulation runs.

Quantiles use linear interpolation between order statistics (numpy's
default), so the median of {0, 0, 2, 5} is 1.0.
"""

from __future__ import annotations

import csv
import io
import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .callcenter import BookingRecord
from .clinicflow import DayOutcome
from .domain import CalendarConfig

SEASONS = ("winter", "spring", "summer", "fall")
# month of year (0 = January) -> season
DEFAULT_SEASON_MAP: dict[int, str] = {
    11: "winter", 0: "winter", 1: "winter",
    2: "spring", 3: "spring", 4: "spring",
    5: "summer", 6: "summer", 7: "summer",
    8: "fall", 9: "fall", 10: "fall",
}
QUANTILES = (0.5, 0.9)
DIRECT_WAIT_BIN = 5.0  # minutes


def _pct(part: int, whole: int) -> float:
    return 100.0 * part / whole if whole else 0.0


def _wait_stats(values: Sequence[float]) -> dict[str, float]:
    if len(values) == 0:
        return {"count": 0, "mean": 0.0, **{f"p{int(q * 100)}": 0.0 for q in QUANTILES}}
    x = np.asarray(values, dtype=float)
    out = {"count": len(x), "mean": float(x.mean())}
    for q in QUANTILES:
        out[f"p{int(q * 100)}"] = float(np.quantile(x, q))
    return out


@dataclass
class Report:
    requests: int
    dispositions: dict[str, int]
    indirect_hist: dict[int, int]
    indirect: dict[str, float]
    indirect_by_season: dict[str, dict[str, float]]
    same_day_pct: float
    future_booked_pct: float
    no_appointment_pct: float
    unserved_pct: float
    shown: int
    direct: dict[str, float]
    zero_direct_wait_pct: float
    direct_positive_hist: dict[float, int]
    mean_lunch_spillover: float
    mean_after_hours: float
    clinic_days: int
    mix_by_month: dict[int, list[float]] = field(default_factory=dict)

    def headline(self) -> dict[str, float]:
        """Scalar KPIs with stable names (the columns of comparison tables)."""
        return {
            "requests": float(self.requests),
            "mean_indirect_wait": self.indirect["mean"],
            "median_indirect_wait": self.indirect["p50"],
            "p90_indirect_wait": self.indirect["p90"],
            "same_day_pct": self.same_day_pct,
            "future_booked_pct": self.future_booked_pct,
            "no_appointment_pct": self.no_appointment_pct,
            "unserved_pct": self.unserved_pct,
            "mean_direct_wait": self.direct["mean"],
            "p90_direct_wait": self.direct["p90"],
            "zero_direct_wait_pct": self.zero_direct_wait_pct,
            "mean_lunch_spillover": self.mean_lunch_spillover,
            "mean_after_hours": self.mean_after_hours,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in self.headline().items():
            w.writerow([k, repr(round(v, 9))])
        for k in sorted(self.dispositions):
            w.writerow([f"count_{k}", self.dispositions[k]])
        for s in SEASONS:
            if s in self.indirect_by_season:
                st = self.indirect_by_season[s]
                w.writerow([f"{s}_count", st["count"]])
                w.writerow([f"{s}_mean_indirect_wait", repr(round(st["mean"], 9))])
        return buf.getvalue()

    def histograms_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["table", "bin", "count"])
        for k in sorted(self.indirect_hist):
            w.writerow(["indirect_wait_days", k, self.indirect_hist[k]])
        for k in sorted(self.direct_positive_hist):
            w.writerow(["direct_wait_minutes", repr(k), self.direct_positive_hist[k]])
        for m in sorted(self.mix_by_month):
            for r, share in enumerate(self.mix_by_month[m]):
                w.writerow([f"mix_month_{m}", r, repr(round(share, 9))])
        return buf.getvalue()


def season_of(planning_month: int, start_month: int = 0, season_map: Mapping[int, str] = DEFAULT_SEASON_MAP) -> str:
    return season_map[(start_month + planning_month) % 12]


def _check_linkage(log: Sequence[BookingRecord], outcomes: Sequence[tuple[int, DayOutcome]]) -> None:
    by_id = {r.id: r for r in log}
    days = {d for d, _ in outcomes}
    shown_ids: set[int] = set()
    for day, out in outcomes:
        for pid, shown in zip(out.patient_id.tolist(), out.shown.tolist()):
            rec = by_id.get(pid)
            if rec is None:
                continue
            if rec.actual_day != day:
                raise ValueError(f"patient {pid} simulated on day {day} but booked for {rec.actual_day}")
            expected = "served" if shown else "no_show"
            if rec.disposition != expected:
                raise ValueError(f"patient {pid} is {rec.disposition!r} in the log but {expected} in the clinic")
            if shown:
                shown_ids.add(pid)
    for rec in log:
        if rec.disposition == "served" and rec.actual_day in days and rec.id not in shown_ids:
            raise ValueError(f"served patient {rec.id} missing from the clinic outcome of day {rec.actual_day}")


def summarize(
    log: Sequence[BookingRecord],
    outcomes: Sequence[tuple[int, DayOutcome]],
    calendar: CalendarConfig,
    start_month: int = 0,
    season_map: Mapping[int, str] = DEFAULT_SEASON_MAP,
    working_days: bool = True,
    n_types: int | None = None,
) -> Report:
    """Aggregate a (warm-up free) booking log and its clinic days."""
    _check_linkage(log, outcomes)
    n = len(log)
    disp = Counter(r.disposition for r in log)
    booked = [r for r in log if r.was_booked]
    waits = [r.indirect_wait(calendar, working_days) for r in booked]
    hist = Counter(waits)
    by_season: dict[str, list[int]] = {}
    for r, w in zip(booked, waits):
        by_season.setdefault(season_of(calendar.month_of(r.desired_day), start_month, season_map), []).append(w)
    same = sum(1 for r in booked if r.same_day)
    no_app = disp.get("no_appointment", 0)

    direct = [float(x) for _, o in outcomes for x in o.shown_waits.tolist()]
    positive = [x for x in direct if x > 1e-9]
    dhist = Counter(float(DIRECT_WAIT_BIN * np.floor(x / DIRECT_WAIT_BIN)) for x in positive)
    lunch = [o.lunch_spillover for _, o in outcomes]
    after = [o.after_hours for _, o in outcomes]

    R = n_types if n_types is not None else (max((r.type for r in log), default=-1) + 1)
    mix: dict[int, list[float]] = {}
    per_month: dict[int, Counter] = {}
    for r in booked:
        per_month.setdefault(calendar.month_of(r.actual_day), Counter())[r.type] += 1
    for m, c in sorted(per_month.items()):
        total = sum(c.values())
        mix[m] = [c.get(t, 0) / total for t in range(R)]

    return Report(
        requests=n,
        dispositions=dict(sorted(disp.items())),
        indirect_hist=dict(sorted(hist.items())),
        indirect=_wait_stats(waits),
        indirect_by_season={s: _wait_stats(v) for s, v in sorted(by_season.items())},
        same_day_pct=_pct(same, n),
        future_booked_pct=_pct(len(booked) - same, n),
        no_appointment_pct=_pct(no_app, n),
        unserved_pct=_pct(n - disp.get("served", 0), n),
        shown=len(direct),
        direct=_wait_stats(direct),
        zero_direct_wait_pct=_pct(len(direct) - len(positive), len(direct)),
        direct_positive_hist=dict(sorted(dhist.items())),
        mean_lunch_spillover=float(np.mean(lunch)) if lunch else 0.0,
        mean_after_hours=float(np.mean(after)) if after else 0.0,
        clinic_days=len(outcomes),
        mix_by_month=mix,
    )


@dataclass
class Comparison:
    labels: list[str]
    metrics: list[str]
    values: dict[str, dict[str, float]]  # label -> metric -> value
    deltas: dict[tuple[str, str], dict[str, float]]  # (a, b) -> metric -> a - b
    common_random_numbers: bool

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        pairs = list(self.deltas)
        w.writerow(["metric", *self.labels, *(f"{a}-{b}" for a, b in pairs)])
        for m in self.metrics:
            row = [m] + [repr(round(self.values[l][m], 9)) for l in self.labels]
            row += [repr(round(self.deltas[p][m], 9)) for p in pairs]
            w.writerow(row)
        w.writerow(["common_random_numbers", *(["1" if self.common_random_numbers else "0"] * (len(self.labels) + len(pairs)))])
        return buf.getvalue()


def compare_policies(reports: Mapping[str, Report], common_random_numbers: bool = True) -> Comparison:
    """Side-by-side headline KPIs with every pairwise difference (first minus second)."""
    if len(reports) < 2:
        raise ValueError("need at least two reports to compare")
    labels = list(reports)
    values = {l: reports[l].headline() for l in labels}
    metrics = list(values[labels[0]])
    deltas = {
        (a, b): {m: values[a][m] - values[b][m] for m in metrics} for a, b in itertools.combinations(labels, 2)
    }
    return Comparison(labels, metrics, values, deltas, common_random_numbers)
