"""Monthly optimize / simulate / cut loop and the end-to-end experiment run."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .callcenter import HorizonResult, HorizonSpec, TemplateSource, dumps_log, heuristic_template, run_horizon
from .clinicflow import KpiEvaluator, cuts_for, evaluate_template, violations
from .config import RunConfig, dump_config
from .domain import CommitmentFloor, ForbiddenDayConfig, WeeklyTemplate, dumps_template, validate_template
from .metrics import Report, summarize
from .optimizer import (
    InfeasibleTemplateError,
    OptimizeResult,
    SaaGapReport,
    derive_seed,
    estimate_saa_gap,
    optimize_template,
    sample_month_scenarios,
)
from .scenario import PatientRequest, generate_call_stream

log = logging.getLogger(__name__)

# seed-derivation tags, one per random consumer
_SCENARIOS, _DES, _STREAM, _BOOKING, _GAP = 11, 12, 13, 14, 15


class CutLimitExceeded(RuntimeError):
    def __init__(self, month: int, limit: int, history: list[dict]):
        lines = [f"  iteration {h['iteration']}: violating weekdays {h['violating_weekdays']}" for h in history]
        super().__init__(f"month {month}: more than {limit} cuts needed\n" + "\n".join(lines))
        self.month, self.limit, self.history = month, limit, history


class PipelineInfeasible(RuntimeError):
    pass


@dataclass
class MonthRecord:
    month: int
    template: WeeklyTemplate
    floor: CommitmentFloor
    iterations: list[dict] = field(default_factory=list)
    cuts_added: list[ForbiddenDayConfig] = field(default_factory=list)

    @property
    def optimizations(self) -> int:
        return len(self.iterations)


def des_seed(cfg: RunConfig) -> int:
    # one seed for every month so a day pattern always gets the same verdict
    return derive_seed(cfg.run.seed, _DES)


def month_scenarios(cfg: RunConfig, month: int) -> list:
    return sample_month_scenarios(
        cfg.demand_params(), cfg.calendar, month, cfg.optimizer.scenario_count,
        derive_seed(cfg.run.seed, _SCENARIOS), cfg.optimizer.tail_days, cfg.optimizer.sampling,
    )


def saa_gap(cfg: RunConfig, month: int = 0) -> SaaGapReport:
    return estimate_saa_gap(cfg.model(), cfg.demand_params(), cfg.optimizer, derive_seed(cfg.run.seed, _GAP), month)


def default_evaluator(cfg: RunConfig) -> KpiEvaluator:
    seed = des_seed(cfg)

    def kpis(t: WeeklyTemplate) -> np.ndarray:
        return evaluate_template(t, cfg.types, cfg.calendar, cfg.flow, seed, cfg.run.workers).kpis

    return kpis


def synthesize_month(
    cfg: RunConfig,
    month: int,
    floor: CommitmentFloor,
    cuts: list[ForbiddenDayConfig],
    evaluator: KpiEvaluator,
) -> MonthRecord:
    """Optimize, check every weekday in the clinic simulation, ban violators, repeat.

    ``cuts`` is the running cut set and is extended in place.
    """
    model = cfg.model()
    scenarios = month_scenarios(cfg, month)
    history: list[dict] = []
    added: list[ForbiddenDayConfig] = []
    while True:
        try:
            res: OptimizeResult = optimize_template(scenarios, model, floor, cuts, cfg.optimizer, month)
        except InfeasibleTemplateError as exc:
            raise PipelineInfeasible(f"month {month}: {exc} (after {len(added)} new cuts)") from exc
        kpis = np.asarray(evaluator(res.template), dtype=float)
        bad = violations(kpis, cfg.flow.thresholds)
        cert = res.certificate
        history.append({
            "iteration": len(history),
            "objective": res.objective,
            "lower_bound": cert.lower_bound,
            "relative_gap": cert.relative_gap,
            "method": cert.method,
            "cuts_active": len(cuts),
            "kpis": kpis.round(9).tolist(),
            "violating_weekdays": bad,
        })
        rec = MonthRecord(month, res.template, floor, history, added)
        if not bad:
            return rec
        new = cuts_for(res.template, bad, cfg.calendar)
        if len(added) + len(new) > cfg.run.cut_limit:
            raise CutLimitExceeded(month, cfg.run.cut_limit, history)
        log.info("month %d: banning weekday patterns %s", month, bad)
        cuts.extend(new)
        added.extend(new)


@dataclass
class PipelineArtifacts:
    config: RunConfig
    months: dict[int, MonthRecord]
    cuts: list[ForbiddenDayConfig]
    horizon: HorizonResult
    report: Report
    saa_gap: SaaGapReport | None = None

    @property
    def templates(self) -> dict[int, WeeklyTemplate]:
        return self.horizon.templates

    def files(self) -> dict[str, str]:
        """Artifact name -> text content. Contains nothing time-dependent."""
        cfg = self.config
        out = {"config.yaml": dump_config(cfg)}
        for m, t in self.templates.items():
            out[f"templates/month_{m:02d}.csv"] = dumps_template(t, cfg.types, cfg.calendar)
        out["cuts.csv"] = _cuts_csv(self.cuts, self.months)
        out["iterations.jsonl"] = "".join(
            json.dumps({"month": m, **it}, sort_keys=True) + "\n"
            for m, rec in sorted(self.months.items())
            for it in rec.iterations
        )
        if self.saa_gap is not None:
            out["saa_gap.csv"] = gap_csv(self.saa_gap)
        out["booking_log.csv"] = dumps_log(self.horizon.log)
        out["report.csv"] = self.report.to_csv()
        out["histograms.csv"] = self.report.histograms_csv()
        return out

    def write(self, out_dir: str | Path) -> list[Path]:
        root = Path(out_dir)
        paths = []
        for name, text in self.files().items():
            p = root / name
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(text)
            paths.append(p)
        return paths


def _cuts_csv(cuts: Sequence[ForbiddenDayConfig], months: dict[int, MonthRecord]) -> str:
    origin = {}
    for m, rec in months.items():
        for c in rec.cuts_added:
            origin.setdefault(c, m)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cut", "month", "weekday", "slot", "type", "count"])
    for i, c in enumerate(cuts):
        for k, counts in enumerate(c.per_slot_counts):
            for r, n in enumerate(counts):
                if n:
                    w.writerow([i, origin.get(c, ""), c.weekday, k, r, n])
    return buf.getvalue()


def gap_csv(g: SaaGapReport) -> str:
    rows = [
        ("lower_bound_mean", g.lower_bound_mean),
        ("lower_bound_ci_low", g.lower_bound_ci[0]),
        ("lower_bound_ci_high", g.lower_bound_ci[1]),
        ("upper_bound", g.upper_bound),
        ("upper_bound_ci_low", g.upper_bound_ci[0]),
        ("upper_bound_ci_high", g.upper_bound_ci[1]),
        ("relative_gap", g.relative_gap),
        ("incumbent_batch", g.incumbent_batch),
        ("batch_size", g.batch_size),
        ("evaluation_sample", g.evaluation_sample),
    ]
    return "metric,value\n" + "".join(f"{k},{round(v, 9)!r}\n" for k, v in rows)


def call_stream(cfg: RunConfig) -> list[PatientRequest]:
    days = cfg.calendar.calendar_days_for(cfg.run.planning_horizon)
    return generate_call_stream(cfg.demand_params(), days, derive_seed(cfg.run.seed, _STREAM), cfg.calendar)


def policy_source(
    cfg: RunConfig,
    policy: str,
    evaluator: KpiEvaluator | None = None,
    months: dict[int, MonthRecord] | None = None,
    cuts: list[ForbiddenDayConfig] | None = None,
) -> tuple[TemplateSource | None, str]:
    """Template source and booking mode for a policy name."""
    if policy in ("spt", "lcvb"):
        t = heuristic_template(policy, cfg.types, cfg.calendar, cfg.budget)
        return (lambda month, floor: t.with_month(month)), "template"
    if policy == "raw_capacity":
        return None, "raw"
    if policy != "two_stage":
        raise ValueError(f"unknown policy {policy!r}")
    evaluator = evaluator or default_evaluator(cfg)
    months = {} if months is None else months
    cuts = [] if cuts is None else cuts

    def source(month: int, floor: CommitmentFloor) -> WeeklyTemplate:
        rec = synthesize_month(cfg, month, floor, cuts, evaluator)
        months[month] = rec
        return rec.template

    return source, "template"


def simulate_policy(
    cfg: RunConfig,
    policy: str | None = None,
    stream: Sequence[PatientRequest] | None = None,
    source: TemplateSource | WeeklyTemplate | None = None,
) -> HorizonResult:
    """Booking simulation for one policy; the same config and stream give common random numbers.

    An explicit ``source`` (template or template source) overrides the policy's own.
    """
    if source is None:
        source, mode = policy_source(cfg, policy or cfg.run.policy_under_test)
    else:
        mode = "template"
    stream = call_stream(cfg) if stream is None else stream
    spec = HorizonSpec(cfg.run.planning_horizon, cfg.run.warmup, derive_seed(cfg.run.seed, _BOOKING), cfg.no_show, mode)
    return run_horizon(source, stream, cfg.types, cfg.calendar, cfg.flow, cfg.policy, spec, cfg.budget)


def report_for(cfg: RunConfig, res: HorizonResult) -> Report:
    return summarize(
        res.window_log(), res.window_outcomes(), cfg.calendar,
        start_month=cfg.demand.start_month, n_types=len(cfg.types),
    )


def run_pipeline(
    cfg: RunConfig,
    evaluator: KpiEvaluator | None = None,
    stream: Sequence[PatientRequest] | None = None,
    estimate_gap: bool = False,
) -> PipelineArtifacts:
    """Synthesize each month's template (with clinic-simulation cuts) while the
    booking simulation runs, then summarize the post-warm-up window.

    Runs the policy named in ``cfg.run.policy_under_test``; for the heuristic
    and raw-capacity policies no template is synthesized.
    """
    months: dict[int, MonthRecord] = {}
    cuts: list[ForbiddenDayConfig] = []
    policy = cfg.run.policy_under_test
    source, mode = policy_source(cfg, policy, evaluator, months, cuts)
    res = simulate_policy(cfg, policy, stream, source)
    for m, t in res.templates.items():
        report = validate_template(t, cfg.budget, cfg.types, cfg.calendar)
        if not report.ok:
            raise AssertionError(f"month {m} template breaks the complexity budget: {report.violations}")
    gap = None
    if estimate_gap:
        gap = saa_gap(cfg)
    return PipelineArtifacts(cfg, dict(sorted(months.items())), cuts, res, report_for(cfg, res), gap)


def compare(
    cfg: RunConfig,
    policies: Sequence[str] = ("two_stage", "spt", "lcvb"),
    evaluator: KpiEvaluator | None = None,
    on_result: Callable[[str, HorizonResult], None] | None = None,
) -> dict[str, Report]:
    """Every policy on one call stream and one booking seed."""
    stream = call_stream(cfg)
    out = {}
    for p in policies:
        source, mode = policy_source(cfg, p, evaluator)
        res = simulate_policy(cfg, p, stream, source)
        if on_result:
            on_result(p, res)
        out[p] = report_for(cfg, res)
    return out
