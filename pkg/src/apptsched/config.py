"""Run configuration: YAML file -> validated dataclasses.

Every block is optional; missing keys take the documented defaults. Unknown
keys are errors in strict mode (the default). Validation collects every
problem it finds and reports each with its dotted field path.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .assignment import RecourseConfig
from .callcenter import IndexPolicyParams
from .clinicflow import FlowParams
from .domain import CalendarConfig, ComplexityBudget, PatientTypeSet, PatientTypeSpec, default_types
from .optimizer import OptimizeParams, TemplateModel
from .scenario import DemandParams, NoShowModel, default_lead_mass, default_seasonal_modifiers

POLICIES = ("two_stage", "spt", "lcvb", "raw_capacity")
DEFAULT_WEEKLY_DEMAND = 80.0


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class DemandConfig:
    weekly_mean: float = DEFAULT_WEEKLY_DEMAND
    dispersion: float = math.inf  # negative-binomial size; inf means Poisson weekly volume
    weekday_weights: tuple[float, ...] = (0.16, 0.20, 0.20, 0.20, 0.24)
    max_lead: int = 28
    within_week_share: float = 0.65
    time_pref: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seasonal_swing: float = 0.15
    start_month: int = 0  # month of year of planning month 0 (0 = January)

    def params(self, types: PatientTypeSet) -> DemandParams:
        return DemandParams(
            weekly_mean=self.weekly_mean,
            mix=tuple(types.mix.tolist()),
            dispersion=self.dispersion,
            weekday_weights=tuple(self.weekday_weights),
            lead_mass=default_lead_mass(self.max_lead, self.within_week_share),
            time_pref=tuple(self.time_pref),
            seasonal_mix_modifiers=default_seasonal_modifiers(len(types), self.seasonal_swing)
            if self.seasonal_swing
            else None,
            start_month=self.start_month,
        )


@dataclass(frozen=True)
class RunSettings:
    planning_horizon: int = 240  # working days
    warmup: int = 60  # working days
    seed: int = 0
    policy_under_test: str = "two_stage"
    cut_limit: int = 50  # per month
    workers: int = 1
    max_per_type: tuple[int, ...] | None = None  # per-slot cap per type in the optimizer


@dataclass(frozen=True)
class RunConfig:
    types: PatientTypeSet = field(default_factory=default_types)
    calendar: CalendarConfig = CalendarConfig()
    budget: ComplexityBudget = ComplexityBudget()
    demand: DemandConfig = DemandConfig()
    recourse: RecourseConfig = RecourseConfig()
    optimizer: OptimizeParams = OptimizeParams()
    flow: FlowParams = FlowParams()
    policy: IndexPolicyParams = IndexPolicyParams()
    no_show: NoShowModel = NoShowModel()
    run: RunSettings = RunSettings()

    def model(self) -> TemplateModel:
        return TemplateModel(self.types, self.calendar, self.budget, self.recourse, self.run.max_per_type)

    def demand_params(self) -> DemandParams:
        return self.demand.params(self.types)

    def replace(self, **blocks: Any) -> "RunConfig":
        """Copy with some blocks' fields overridden, e.g. ``replace(policy={"beta": 0.5})``."""
        out = {}
        for name, changes in blocks.items():
            cur = getattr(self, name)
            out[name] = dataclasses.replace(cur, **changes) if isinstance(changes, Mapping) else changes
        return dataclasses.replace(self, **out)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"types": [dataclasses.asdict(t) for t in self.types]}
        for name in ("calendar", "budget", "demand", "recourse", "optimizer", "flow", "policy", "no_show", "run"):
            d[name] = dataclasses.asdict(getattr(self, name))
        return _plain(d)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, float) and math.isinf(x):
        return ".inf"
    return x


_BLOCKS = {
    "calendar": CalendarConfig,
    "budget": ComplexityBudget,
    "demand": DemandConfig,
    "recourse": RecourseConfig,
    "optimizer": OptimizeParams,
    "flow": FlowParams,
    "policy": IndexPolicyParams,
    "no_show": NoShowModel,
    "run": RunSettings,
}


def _coerce(value: Any, default: Any) -> Any:
    if isinstance(value, str) and value.strip().lower() in (".inf", "inf", "infinity"):
        return math.inf
    if isinstance(value, list):
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _field_checks(name: str, values: Mapping[str, Any]) -> list[str]:
    """Per-field range checks that name the offending field."""
    errs = []

    def need(key: str, ok: bool, msg: str) -> None:
        if key in values and not ok:
            errs.append(f"{name}.{key}: {msg} (got {values[key]!r})")

    def num(key: str) -> float | None:
        v = values.get(key)
        if v is None:
            return None
        try:
            return float(v)
        except (TypeError, ValueError):
            errs.append(f"{name}.{key}: expected a number (got {v!r})")
            return None

    if name == "budget":
        k, e = num("kappa"), num("eta")
        need("kappa", k is None or k > 0, "must be > 0")
        need("eta", e is None or e > 0, "must be > 0")
    elif name == "demand":
        need("weekly_mean", (num("weekly_mean") or 0) >= 0, "must be >= 0")
        need("dispersion", (num("dispersion") or 1) > 0, "must be > 0")
        need("start_month", values.get("start_month") in range(12), "must be 0..11")
    elif name == "recourse":
        need("epsilon", (num("epsilon") or 0) >= 0, "must be >= 0")
    elif name == "flow":
        a = num("alpha")
        need("alpha", a is None or 0 < a < 1, "must lie in (0, 1)")
        need("replications", isinstance(values.get("replications"), int) and values["replications"] >= 1, "must be a positive integer")
    elif name == "policy":
        need("beta", (num("beta") or 0) >= 0, "must be >= 0")
        t = num("acceptance_threshold")
        need("acceptance_threshold", t is None or 0 <= t < 1, "must lie in [0, 1)")
        need("booking_horizon", isinstance(values.get("booking_horizon"), int) and values["booking_horizon"] >= 1, "must be a positive integer")
        r = num("cancellation_rate")
        need("cancellation_rate", r is None or 0 <= r <= 1, "must be a probability")
    elif name == "run":
        need("planning_horizon", isinstance(values.get("planning_horizon"), int) and values["planning_horizon"] >= 1, "must be a positive integer")
        need("warmup", isinstance(values.get("warmup"), int) and values["warmup"] >= 0, "must be a non-negative integer")
        need("policy_under_test", values.get("policy_under_test") in POLICIES, f"must be one of {POLICIES}")
        need("cut_limit", isinstance(values.get("cut_limit"), int) and values["cut_limit"] >= 0, "must be a non-negative integer")
        need("workers", isinstance(values.get("workers"), int) and values["workers"] >= 1, "must be a positive integer")
    return errs


def _build_block(name: str, cls, raw: Any, strict: bool, errors: list[str]):
    if raw is None:
        return cls()
    if not isinstance(raw, Mapping):
        errors.append(f"{name}: expected a mapping")
        return cls()
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    values = {}
    for key, v in raw.items():
        if key not in known:
            if strict:
                errors.append(f"{name}.{key}: unknown key")
            continue
        values[key] = _coerce(v, getattr(defaults, key))
    checks = _field_checks(name, values)
    if checks:
        errors.extend(checks)
        return defaults
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        errors.append(f"{name}: {exc}")
        return defaults


def _build_types(raw: Any, strict: bool, errors: list[str]) -> PatientTypeSet:
    if raw is None:
        return default_types()
    if not isinstance(raw, list) or not raw:
        errors.append("types: expected a non-empty list")
        return default_types()
    known = {f.name for f in dataclasses.fields(PatientTypeSpec)}
    specs = []
    for i, item in enumerate(raw):
        path = f"types[{i}]"
        if not isinstance(item, Mapping):
            errors.append(f"{path}: expected a mapping")
            continue
        values = {}
        for key, v in item.items():
            if key not in known:
                if strict:
                    errors.append(f"{path}.{key}: unknown key")
                continue
            values[key] = tuple(v) if isinstance(v, list) else v
        values.setdefault("id", i)
        try:
            specs.append(PatientTypeSpec(**values))
        except (TypeError, ValueError) as exc:
            errors.append(f"{path}: {exc}")
    try:
        return PatientTypeSet(specs)
    except (TypeError, ValueError) as exc:
        errors.append(f"types: {exc}")
        return default_types()


def config_from_dict(data: Mapping[str, Any] | None, strict: bool = True) -> RunConfig:
    data = data or {}
    if not isinstance(data, Mapping):
        raise ConfigError(["<root>: expected a mapping"])
    errors: list[str] = []
    for key in data:
        if key not in _BLOCKS and key != "types" and strict:
            errors.append(f"{key}: unknown key")
    types = _build_types(data.get("types"), strict, errors)
    blocks = {name: _build_block(name, cls, data.get(name), strict, errors) for name, cls in _BLOCKS.items()}
    cfg = RunConfig(types=types, **blocks)
    errors.extend(cross_checks(cfg))
    if errors:
        raise ConfigError(errors)
    return cfg


def cross_checks(cfg: RunConfig) -> list[str]:
    errs = []
    cal, run = cfg.calendar, cfg.run
    horizon_days = cal.calendar_days_for(run.planning_horizon)
    if cfg.policy.booking_horizon > horizon_days:
        errs.append("policy.booking_horizon: exceeds the planning horizon")
    if run.warmup >= run.planning_horizon:
        errs.append("run.warmup: must be shorter than run.planning_horizon")
    if len(cfg.demand.weekday_weights) != cal.days_per_week:
        errs.append("demand.weekday_weights: need one weight per working day")
    elif abs(sum(cfg.demand.weekday_weights) - 1.0) > 1e-9:
        errs.append("demand.weekday_weights: must sum to 1")
    if abs(sum(cfg.demand.time_pref) - 1.0) > 1e-9 or len(cfg.demand.time_pref) != 3:
        errs.append("demand.time_pref: three shares (none, morning, afternoon) summing to 1")
    if run.max_per_type is not None and len(run.max_per_type) != len(cfg.types):
        errs.append("run.max_per_type: one cap per patient type")
    if cfg.budget.kappa > cfg.budget.eta:
        errs.append("budget.kappa: must not exceed budget.eta")
    return errs


def load_config(path: str | Path | None, strict: bool = True) -> RunConfig:
    """Read and validate a YAML config; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read ({exc.strerror})"]) from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not valid YAML ({exc})"]) from exc
    return config_from_dict(data, strict)


def validate_config(path: str | Path, strict: bool = True) -> RunConfig | list[str]:
    """The config, or the list of problems found in it."""
    try:
        return load_config(path, strict)
    except ConfigError as exc:
        return exc.errors


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
