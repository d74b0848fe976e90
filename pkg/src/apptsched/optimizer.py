"""First-stage template search.

The recourse cost depends on a template only through its per-type daily
totals, so the search runs on two levels:

* inner: for each weekday, which per-type day totals can be packed into
  the day's slots (slot budget, session budget, commitment floors, blocked
  sessions, banned day patterns), and the lexicographically smallest slot
  arrangement realizing a chosen total;
* outer: pick one total per weekday to minimize the sample-average recourse
  cost. Because that cost never increases with capacity, only
  Pareto-maximal totals need to be considered.

The outer problem is solved either by a depth-first branch-and-bound over
weekdays (exact; bounds come from relaxing the undecided weekdays to their
per-type maximum capacity) or, for large frontiers, as a deterministic
equivalent mixed-integer program handed to HiGHS.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, milp

from .assignment import (
    RecourseConfig,
    default_denial_penalty,
    delay_costs,
    saa_objective,
    scenario_objectives,
    solve_type,
)
from .domain import (
    COMPLEXITY_TOL,
    CalendarConfig,
    CommitmentFloor,
    ComplexityBudget,
    ForbiddenDayConfig,
    PatientTypeSet,
    WeeklyTemplate,
    validate_template,
)
from .scenario import DemandParams, DemandScenario, generate_scenario, latin_hypercube_scenarios

log = logging.getLogger(__name__)


class InfeasibleTemplateError(ValueError):
    def __init__(self, weekday: int, reason: str):
        super().__init__(f"no feasible slot pattern for weekday {weekday}: {reason}")
        self.weekday = weekday


@dataclass(frozen=True)
class SlotConfigCatalog:
    configs: tuple[tuple[int, ...], ...]
    complexities: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.configs)

    def __contains__(self, v) -> bool:
        return tuple(int(x) for x in v) in set(self.configs)


def enumerate_slot_configs(types: PatientTypeSet, kappa: float, max_per_type: Sequence[int]) -> SlotConfigCatalog:
    """Every per-slot count vector within the slot budget and per-type caps."""
    if len(types) == 0:
        raise ValueError("empty type set")
    if not kappa > 0:
        raise ValueError("kappa must be > 0")
    if len(max_per_type) != len(types):
        raise ValueError("one per-slot cap per type")
    c = types.complexities
    configs, loads = [], []
    for v in itertools.product(*(range(int(m) + 1) for m in max_per_type)):
        load = float(np.dot(v, c))
        if load <= kappa + COMPLEXITY_TOL:
            configs.append(tuple(v))
            loads.append(load)
    return SlotConfigCatalog(tuple(configs), tuple(loads))


@dataclass(frozen=True)
class TemplateModel:
    """Everything the first-stage problem needs besides scenarios and cuts."""

    types: PatientTypeSet
    calendar: CalendarConfig = CalendarConfig()
    budget: ComplexityBudget = ComplexityBudget()
    recourse: RecourseConfig = RecourseConfig()
    max_per_type: tuple[int, ...] | None = None  # per-slot cap; default 3 per type

    @property
    def caps(self) -> tuple[int, ...]:
        return self.max_per_type if self.max_per_type is not None else (3,) * len(self.types)

    def catalog(self) -> SlotConfigCatalog:
        return enumerate_slot_configs(self.types, self.budget.kappa, self.caps)


@dataclass(frozen=True)
class OptimizeParams:
    scenario_count: int = 10
    optimality_gap_target: float = 0.01
    saa_batches: int = 10
    evaluation_sample: int = 100
    time_limit: float = 120.0
    method: str = "auto"  # auto | bnb | milp
    bnb_limit: int = 20000  # auto uses bnb when the frontier product is at most this
    tail_days: int = 5  # working days after the month that absorb spill-over
    sampling: str = "lhs"  # how optimization batches are drawn: lhs | iid

    def __post_init__(self) -> None:
        for name in ("scenario_count", "saa_batches", "evaluation_sample", "bnb_limit"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.optimality_gap_target > 0 or not self.time_limit > 0:
            raise ValueError("optimality_gap_target and time_limit must be positive")
        if self.method not in ("auto", "bnb", "milp"):
            raise ValueError("method must be auto, bnb or milp")
        if self.tail_days < 0:
            raise ValueError("tail_days must be >= 0")
        if self.sampling not in ("lhs", "iid"):
            raise ValueError("sampling must be lhs or iid")


@dataclass
class GapCertificate:
    method: str
    objective: float
    lower_bound: float
    relative_gap: float
    proven: bool
    nodes: int = 0
    seconds: float = 0.0
    search_log: list[dict] = field(default_factory=list)


class OptimizeResult(NamedTuple):
    template: WeeklyTemplate
    objective: float
    certificate: GapCertificate


# -- inner level: packing per weekday ---------------------------------------------


class DayPacking:
    """Feasible per-type totals of one weekday and their slot arrangements."""

    def __init__(
        self,
        weekday: int,
        model: TemplateModel,
        catalog: SlotConfigCatalog,
        floor_block: np.ndarray,
        banned: Sequence[ForbiddenDayConfig],
    ):
        cal = model.calendar
        self.weekday = weekday
        self.R = len(model.types)
        self.K = cal.slots_per_day
        self.spk = cal.slots_per_session
        self.c = model.types.complexities
        self.kappa, self.eta = model.budget.kappa, model.budget.eta
        self.caps = np.array(model.caps)
        self.lo = np.asarray(floor_block, dtype=np.int64)
        self.blocked = [cal.is_blocked(weekday, s) for s in range(cal.sessions_per_day)]
        self.allowed: list[list[tuple[int, ...]]] = []
        for k in range(self.K):
            session = k // self.spk
            lo = self.lo[:, k]
            if self.blocked[session]:
                if lo.any():
                    raise InfeasibleTemplateError(weekday, f"floor in blocked session {session}")
                opts = [(0,) * self.R]
            else:
                opts = [v for v in catalog.configs if all(v[r] >= lo[r] for r in range(self.R))]
            if not opts:
                raise InfeasibleTemplateError(weekday, f"floor of slot {k} exceeds the slot budget")
            self.allowed.append(opts)
        self.banned = {g.per_slot_counts for g in banned if g.weekday == weekday}
        self._arrangements: dict[tuple[int, ...], np.ndarray | None] = {}
        self.counts = self._count_totals()
        self.totals = self._feasible_totals()
        if not self.totals:
            raise InfeasibleTemplateError(weekday, "commitment floors and banned patterns exclude every pattern")
        self.frontier = _pareto_maximal(self.totals)

    def _session_counts(self, session: int) -> dict[tuple[int, ...], int]:
        reach = {(0,) * self.R: 1}
        for k in range(session * self.spk, (session + 1) * self.spk):
            nxt: dict[tuple[int, ...], int] = {}
            for tot, n in reach.items():
                for v in self.allowed[k]:
                    s = tuple(a + b for a, b in zip(tot, v))
                    if float(np.dot(s, self.c)) <= self.eta + COMPLEXITY_TOL:
                        nxt[s] = nxt.get(s, 0) + n
            reach = nxt
        return reach

    def _count_totals(self) -> dict[tuple[int, ...], int]:
        sessions = [self._session_counts(s) for s in range(self.K // self.spk)]
        if any(not s for s in sessions):
            raise InfeasibleTemplateError(self.weekday, "commitment floors exceed the session budget")
        day = sessions[0]
        for other in sessions[1:]:
            merged: dict[tuple[int, ...], int] = {}
            for a, na in day.items():
                for b, nb in other.items():
                    s = tuple(x + y for x, y in zip(a, b))
                    merged[s] = merged.get(s, 0) + na * nb
            day = merged
        return day

    def _is_arrangement(self, pattern: tuple[tuple[int, ...], ...]) -> bool:
        if len(pattern) != self.K:
            return False
        for k, v in enumerate(pattern):
            if v not in self.allowed[k]:
                return False
        for s in range(self.K // self.spk):
            load = sum(float(np.dot(pattern[k], self.c)) for k in range(s * self.spk, (s + 1) * self.spk))
            if load > self.eta + COMPLEXITY_TOL:
                return False
        return True

    def _feasible_totals(self) -> list[tuple[int, ...]]:
        banned_per_total: dict[tuple[int, ...], int] = {}
        for g in self.banned:
            if self._is_arrangement(g):
                tot = tuple(int(x) for x in np.sum(g, axis=0))
                banned_per_total[tot] = banned_per_total.get(tot, 0) + 1
        out = []
        for tot, n in self.counts.items():
            if n > banned_per_total.get(tot, 0) or self.arrangement(tot) is not None:
                out.append(tot)
        return sorted(out)

    def arrangement(self, total: tuple[int, ...]) -> np.ndarray | None:
        """Lexicographically smallest non-banned ``(R, K)`` block with these totals.

        Order is type-major, then slot, matching the template's flattening.
        """
        if total not in self._arrangements:
            self._arrangements[total] = self._search(tuple(int(x) for x in total))
        return self._arrangements[total]

    # Exact completion oracle: boolean reachability grids over session sums.

    def _grid_shape(self) -> tuple[int, ...]:
        return tuple(int(self.K * self.caps[r]) + 1 for r in range(self.R))

    def _eta_mask(self) -> np.ndarray:
        if not hasattr(self, "_mask"):
            axes = np.meshgrid(*(np.arange(n) for n in self._grid_shape()), indexing="ij")
            load = sum(self.c[r] * axes[r] for r in range(self.R))
            self._mask = load <= self.eta + COMPLEXITY_TOL
        return self._mask

    def _session_grid(self, session: int, x: np.ndarray, fixed: np.ndarray) -> np.ndarray:
        shape = self._grid_shape()
        grid = np.zeros(shape, dtype=bool)
        grid[(0,) * self.R] = True
        mask = self._eta_mask()
        for k in range(session * self.spk, (session + 1) * self.spk):
            out = np.zeros(shape, dtype=bool)
            fx = fixed[:, k]
            for v in self.allowed[k]:
                if any(fx[r] and v[r] != x[r, k] for r in range(self.R)):
                    continue
                dst = tuple(slice(v[r], None) for r in range(self.R))
                src = tuple(slice(0, shape[r] - v[r]) for r in range(self.R))
                out[dst] |= grid[src]
            grid = out & mask
        return grid

    def _completable(self, total: tuple[int, ...], x: np.ndarray, fixed: np.ndarray) -> bool:
        g0 = self._session_grid(0, x, fixed)
        g1 = self._session_grid(1, x, fixed)
        if any(t >= n for t, n in zip(total, g0.shape)):
            return False
        a = g0[tuple(slice(0, t + 1) for t in total)]
        b = g1[tuple(slice(t, None, -1) if t > 0 else slice(0, 1) for t in total)]
        return bool((a & b).any())

    def _search(self, total: tuple[int, ...]) -> np.ndarray | None:
        R, K = self.R, self.K
        if total not in self.counts:
            return None
        x = np.zeros((R, K), dtype=np.int64)
        fixed = np.zeros((R, K), dtype=bool)
        top = np.array([np.max(np.array(a), axis=0) for a in self.allowed]).T

        def rec(pos: int) -> bool:
            if pos == R * K:
                pattern = tuple(tuple(int(v) for v in x[:, j]) for j in range(K))
                return pattern not in self.banned
            r, k = divmod(pos, K)
            fixed[r, k] = True
            for v in range(int(self.lo[r, k]), int(top[r, k]) + 1):
                x[r, k] = v
                if self._completable(total, x, fixed) and rec(pos + 1):
                    return True
            fixed[r, k] = False
            x[r, k] = 0
            return False

        if rec(0):
            block = x.copy()
            block.setflags(write=False)
            return block
        return None


def _pareto_maximal(points: list[tuple[int, ...]]) -> list[tuple[int, ...]]:
    if not points:
        return []
    P = np.array(points, dtype=np.int64)
    keep = np.ones(len(P), dtype=bool)
    for start in range(0, len(P), 512):
        chunk = P[start : start + 512]
        ge = (P[None, :, :] >= chunk[:, None, :]).all(axis=2)
        gt = (P[None, :, :] > chunk[:, None, :]).any(axis=2)
        keep[start : start + 512] = ~(ge & gt).any(axis=1)
    return [points[i] for i in np.nonzero(keep)[0]]


def build_packings(
    model: TemplateModel,
    floor: CommitmentFloor | None = None,
    banned: Iterable[ForbiddenDayConfig] = (),
) -> list[DayPacking]:
    cal = model.calendar
    catalog = model.catalog()
    banned = list(banned)
    floors = floor.floors if floor is not None else np.zeros((len(model.types), cal.slots_per_week), dtype=np.int64)
    if floors.shape != (len(model.types), cal.slots_per_week):
        raise ValueError("floor shape does not match the template shape")
    return [
        DayPacking(wd, model, catalog, floors[:, cal.day_slots(wd)], banned) for wd in range(cal.days_per_week)
    ]


def assemble_template(packings: Sequence[DayPacking], totals: Sequence[tuple[int, ...]], month_index: int) -> WeeklyTemplate:
    blocks = []
    for pk, tot in zip(packings, totals):
        block = pk.arrangement(tot)
        if block is None:
            raise InfeasibleTemplateError(pk.weekday, f"no arrangement for totals {tot}")
        blocks.append(block)
    return WeeklyTemplate(np.concatenate(blocks, axis=1), month_index)


# -- outer level ------------------------------------------------------------------


class _RecourseOracle:
    """Memoized sample-average recourse cost per type as a function of weekday capacities."""

    def __init__(self, scenarios: Sequence[DemandScenario], model: TemplateModel):
        cal, types = model.calendar, model.types
        self.types = types
        self.demands = [s.working_demand(cal) for s in scenarios]
        self.weekdays = []
        for s in scenarios:
            days = s.start_day + np.arange(s.horizon)
            self.weekdays.append(days[(days % 7) < cal.days_per_week] % 7)
        n_days = max(d.shape[1] for d in self.demands)
        eps = model.recourse.epsilon
        self.costs = delay_costs(n_days, eps)
        self.penalty = model.recourse.denial_penalty
        self.penalties = [
            self.penalty if self.penalty is not None else default_denial_penalty(d.shape[1], eps, float(types.weights.max()))
            for d in self.demands
        ]
        self.cache: list[dict[tuple[int, ...], float]] = [dict() for _ in types]
        self.solves = 0

    def type_cost(self, r: int, day_caps: tuple[int, ...]) -> float:
        hit = self.cache[r].get(day_caps)
        if hit is not None:
            return hit
        caps = np.asarray(day_caps, dtype=float)
        p, w = self.types.no_show[r], float(self.types.weights[r])
        total = 0.0
        for f, wd, pen in zip(self.demands, self.weekdays, self.penalties):
            room = caps[wd] / (1.0 - p)
            total += solve_type(f[r], room, w, self.costs, pen)[0]
            self.solves += 1
        value = total / len(self.demands)
        self.cache[r][day_caps] = value
        return value

    def cost(self, totals: Sequence[tuple[int, ...]]) -> float:
        return float(sum(self.type_cost(r, tuple(t[r] for t in totals)) for r in range(len(self.types))))


def _flat_key(packings: Sequence[DayPacking], totals: Sequence[tuple[int, ...]]) -> tuple:
    blocks = [pk.arrangement(t) for pk, t in zip(packings, totals)]
    return tuple(np.concatenate(blocks, axis=1).reshape(-1).tolist())


def _solve_bnb(packings, oracle: _RecourseOracle, params: OptimizeParams, t0: float):
    W, R = len(packings), oracle.types.__len__()
    fronts = [pk.frontier for pk in packings]
    # relaxed capacity of an undecided weekday: per-type maximum over its frontier
    relaxed = [tuple(int(max(t[r] for t in f)) for r in range(R)) for f in fronts]
    best = {"obj": math.inf, "totals": None, "key": None}
    nodes = 0
    search_log: list[dict] = []
    timed_out = False

    def visit(depth: int, chosen: list):
        nonlocal nodes, timed_out
        nodes += 1
        if time.monotonic() - t0 > params.time_limit:
            timed_out = True
            return
        if depth == W:
            obj = oracle.cost(chosen)
            tol = 1e-12 * max(1.0, abs(best["obj"])) if best["obj"] < math.inf else 0.0
            if obj < best["obj"] - tol:
                best.update(obj=obj, totals=list(chosen), key=None)
                search_log.append({"event": "incumbent", "node": nodes, "objective": obj})
            elif abs(obj - best["obj"]) <= tol:
                key = _flat_key(packings, chosen)
                if best["key"] is None:
                    best["key"] = _flat_key(packings, best["totals"])
                if key < best["key"]:
                    best.update(obj=min(obj, best["obj"]), totals=list(chosen), key=key)
            return
        bound = oracle.cost(chosen + relaxed[depth:])
        if bound > best["obj"] + 1e-12 * max(1.0, abs(best["obj"])):
            return
        for t in fronts[depth]:
            visit(depth + 1, chosen + [t])
            if timed_out:
                return

    visit(0, [])
    lower = best["obj"] if not timed_out else oracle.cost(relaxed)
    return best["totals"], best["obj"], lower, nodes, not timed_out, search_log


def _solve_milp(packings, scenarios, model: TemplateModel, params: OptimizeParams, t0: float):
    """Deterministic-equivalent MIP: one binary per (weekday, frontier total)."""
    cal, types = model.calendar, model.types
    R, W, S = len(types), len(packings), len(scenarios)
    fronts = [pk.frontier for pk in packings]
    u_index = []
    n = 0
    for f in fronts:
        u_index.append(list(range(n, n + len(f))))
        n += len(f)
    n_u = n
    # cap[r, w] = sum_j t_j[r] u_{w,j}: one continuous column per (type, weekday)
    cap_index = np.arange(n, n + R * W).reshape(R, W)
    n += R * W
    obj: list[float] = [0.0] * n
    rows_eq, cols_eq, vals_eq, rhs_eq = [], [], [], []
    rows_le, cols_le, vals_le = [], [], []
    eq_row = le_row = 0
    for w in range(W):
        for j in u_index[w]:
            rows_eq.append(eq_row)
            cols_eq.append(j)
            vals_eq.append(1.0)
        rhs_eq.append(1.0)
        eq_row += 1
    for r in range(R):
        for w in range(W):
            for j, tot in zip(u_index[w], fronts[w]):
                if tot[r]:
                    rows_eq.append(eq_row)
                    cols_eq.append(j)
                    vals_eq.append(float(tot[r]))
            rows_eq.append(eq_row)
            cols_eq.append(int(cap_index[r, w]))
            vals_eq.append(-1.0)
            rhs_eq.append(0.0)
            eq_row += 1
    eps = model.recourse.epsilon
    for s in scenarios:
        f = s.working_demand(cal)
        days = s.start_day + np.arange(s.horizon)
        wd = days[(days % 7) < cal.days_per_week] % 7
        D = f.shape[1]
        g = delay_costs(D, eps)
        pen = model.recourse.denial_penalty
        if pen is None:
            pen = default_denial_penalty(D, eps, float(types.weights.max()))
        for r in range(R):
            src = [d for d in range(D) if f[r, d] > 0]
            if not src:
                continue
            sink_terms: dict[int, list[int]] = {e: [] for e in range(src[0], D)}
            for d in src:
                vars_d = []
                for e in range(d, D):
                    obj.append(types.weights[r] * g[e - d] / S)
                    vars_d.append(n)
                    sink_terms[e].append(n)
                    n += 1
                obj.append(pen / S)
                vars_d.append(n)
                n += 1
                for v in vars_d:
                    rows_eq.append(eq_row)
                    cols_eq.append(v)
                    vals_eq.append(1.0)
                rhs_eq.append(float(f[r, d]))
                eq_row += 1
            # booked patients times the show rate must fit the day's capacity
            for e, terms in sink_terms.items():
                for v in terms:
                    rows_le.append(le_row)
                    cols_le.append(v)
                    vals_le.append(1.0 - types.no_show[r])
                rows_le.append(le_row)
                cols_le.append(int(cap_index[r, wd[e]]))
                vals_le.append(-1.0)
                le_row += 1
    A_eq = sp.csr_matrix((vals_eq, (rows_eq, cols_eq)), shape=(eq_row, n))
    constraints = [LinearConstraint(A_eq, rhs_eq, rhs_eq)]
    if le_row:
        A_le = sp.csr_matrix((vals_le, (rows_le, cols_le)), shape=(le_row, n))
        constraints.append(LinearConstraint(A_le, -np.inf, 0.0))
    integrality = np.zeros(n)
    integrality[: n_u + R * W] = 1  # capacities are integral anyway; declaring it helps presolve
    ub = np.full(n, np.inf)
    ub[:n_u] = 1.0
    remaining = max(1.0, params.time_limit - (time.monotonic() - t0))
    res = milp(
        np.asarray(obj),
        constraints=constraints,
        integrality=integrality,
        bounds=Bounds(np.zeros(n), ub),
        options={"time_limit": remaining, "mip_rel_gap": params.optimality_gap_target, "disp": False},
    )
    if res.x is None:
        raise RuntimeError(f"MIP solve failed: {res.message}")
    totals = [fronts[w][int(np.argmax(res.x[u_index[w]]))] for w in range(W)]
    bound = getattr(res, "mip_dual_bound", None)
    bound = float(res.fun if bound is None else bound)
    info = {"event": "milp", "status": int(res.status), "message": res.message, "variables": n, "binaries": n_u,
            "objective": float(res.fun), "dual_bound": bound, "nodes": int(getattr(res, "mip_node_count", 0) or 0)}
    return totals, float(res.fun), bound, info["nodes"], res.status == 0, [info]


def optimize_template(
    scenarios: Sequence[DemandScenario],
    model: TemplateModel,
    floor: CommitmentFloor | None = None,
    banned: Iterable[ForbiddenDayConfig] = (),
    params: OptimizeParams = OptimizeParams(),
    month_index: int = 0,
) -> OptimizeResult:
    """Minimize the sample-average recourse cost over feasible weekly templates.

    Raises :class:`InfeasibleTemplateError` naming the weekday when floors and
    banned patterns leave no feasible arrangement.
    """
    if not scenarios:
        raise ValueError("optimize_template needs at least one scenario")
    t0 = time.monotonic()
    banned = list(banned)
    packings = build_packings(model, floor, banned)
    sizes = [len(pk.frontier) for pk in packings]
    combos = math.prod(sizes)
    method = params.method
    if method == "auto":
        method = "bnb" if combos <= params.bnb_limit else "milp"
    search_log: list[dict] = [{"event": "frontier", "sizes": sizes, "combinations": combos, "cuts": len(banned)}]
    if method == "bnb":
        oracle = _RecourseOracle(scenarios, model)
        totals, obj, lower, nodes, proven, extra = _solve_bnb(packings, oracle, params, t0)
        search_log += extra + [{"event": "done", "nodes": nodes, "recourse_solves": oracle.solves}]
    else:
        totals, obj, lower, nodes, proven, extra = _solve_milp(packings, scenarios, model, params, t0)
        search_log += extra
    template = assemble_template(packings, totals, month_index)
    assert validate_template(template, model.budget, model.types, model.calendar, floor, banned).ok
    objective = saa_objective(template, scenarios, model.types, model.calendar, model.recourse)
    lower = min(lower, objective)
    gap = (objective - lower) / objective if objective > 0 else 0.0
    cert = GapCertificate(
        method=method,
        objective=objective,
        lower_bound=lower,
        relative_gap=gap,
        proven=proven,
        nodes=nodes,
        seconds=time.monotonic() - t0,
        search_log=search_log,
    )
    log.debug("optimized month %d via %s: objective %.4f gap %.4g", month_index, method, objective, gap)
    return OptimizeResult(template, objective, cert)


# -- sample average approximation ---------------------------------------------------


def month_window(calendar: CalendarConfig, month_index: int, tail_days: int) -> tuple[int, int, int]:
    """(start calendar day, horizon in calendar days, calendar day where demand stops)."""
    first = month_index * calendar.working_days_per_month
    start = calendar.calendar_day(first)
    stop = calendar.calendar_day(first + calendar.working_days_per_month - 1) + 1
    end = calendar.calendar_day(first + calendar.working_days_per_month + tail_days - 1) + 1 if tail_days else stop
    return start, end - start, stop


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def sample_month_scenarios(
    demand: DemandParams,
    calendar: CalendarConfig,
    month_index: int,
    count: int,
    seed: int,
    tail_days: int = 5,
    sampling: str = "iid",
) -> list[DemandScenario]:
    """Scenarios over one planning month; the trailing days carry capacity but no demand.

    ``sampling="lhs"`` stratifies the batch (see :func:`latin_hypercube_scenarios`).
    """
    start, horizon, stop = month_window(calendar, month_index, tail_days)
    if sampling == "lhs":
        batch = latin_hypercube_scenarios(demand, horizon, count, derive_seed(seed, month_index), calendar, start)
    elif sampling == "iid":
        batch = [
            generate_scenario(demand, horizon, derive_seed(seed, month_index, i), calendar, start, scenario_id=i)
            for i in range(count)
        ]
    else:
        raise ValueError("sampling must be 'iid' or 'lhs'")
    out = []
    for i, s in enumerate(batch):
        f = np.array(s.f)
        f[:, stop - start :] = 0
        out.append(DemandScenario(f, i, start))
    return out


@dataclass
class SaaGapReport:
    lower_bound_mean: float
    lower_bound_ci: tuple[float, float]
    upper_bound: float
    upper_bound_ci: tuple[float, float]
    relative_gap: float
    batch_objectives: list[float]
    batch_lower_bounds: list[float]
    incumbent: WeeklyTemplate
    incumbent_batch: int
    batch_size: int
    evaluation_sample: int


def estimate_saa_gap(
    model: TemplateModel,
    demand: DemandParams,
    params: OptimizeParams = OptimizeParams(),
    seed: int = 0,
    month_index: int = 0,
    floor: CommitmentFloor | None = None,
    banned: Iterable[ForbiddenDayConfig] = (),
    z: float = 1.96,
) -> SaaGapReport:
    """Statistical optimality gap of the n-scenario sample-average problem.

    Lower bound: mean over ``saa_batches`` independent n-scenario solves of
    the certified bound each solve reports. Upper bound: the batch templates
    are screened on ``evaluation_sample`` fresh scenarios, and the best one
    is re-evaluated on a second fresh sample of the same size.

    All three samples follow ``params.sampling``. Latin hypercube samples keep
    every sample mean unbiased, so the lower bound stays valid in expectation
    and the upper bound stays an unbiased cost estimate of the incumbent. The
    reported confidence half-widths use the i.i.d. formula, which is
    conservative for stratified samples.
    """
    M, n = params.saa_batches, params.scenario_count
    if M < 2:
        raise ValueError("gap estimation needs at least two batches")
    banned = list(banned)
    cal = model.calendar
    results = []
    for b in range(M):
        sc = sample_month_scenarios(demand, cal, month_index, n, derive_seed(seed, 1, b), params.tail_days, params.sampling)
        results.append(optimize_template(sc, model, floor, banned, params, month_index))
    lo = np.array([r.certificate.lower_bound for r in results])
    lo_mean = float(lo.mean())
    lo_half = z * float(lo.std(ddof=1)) / math.sqrt(M)
    screen = sample_month_scenarios(demand, cal, month_index, params.evaluation_sample, derive_seed(seed, 2), params.tail_days, params.sampling)
    screened = [saa_objective(r.template, screen, model.types, cal, model.recourse) for r in results]
    best = min(range(M), key=lambda b: (screened[b], tuple(results[b].template.counts.reshape(-1).tolist())))
    incumbent = results[best].template
    ev = sample_month_scenarios(demand, cal, month_index, params.evaluation_sample, derive_seed(seed, 3), params.tail_days, params.sampling)
    vals = scenario_objectives(incumbent, ev, model.types, cal, model.recourse)
    up = float(vals.mean())
    up_half = z * float(vals.std(ddof=1)) / math.sqrt(len(vals)) if len(vals) > 1 else 0.0
    gap = (up - lo_mean) / up if up > 0 else 0.0
    return SaaGapReport(
        lower_bound_mean=lo_mean,
        lower_bound_ci=(lo_mean - lo_half, lo_mean + lo_half),
        upper_bound=up,
        upper_bound_ci=(up - up_half, up + up_half),
        relative_gap=gap,
        batch_objectives=[r.objective for r in results],
        batch_lower_bounds=lo.tolist(),
        incumbent=incumbent,
        incumbent_batch=best,
        batch_size=n,
        evaluation_sample=params.evaluation_sample,
    )
