"""Second-stage recourse: assign realized demand to template capacity.

For one scenario the recourse is a linear program over proportions
``y[r, d, d']`` (share of type-``r`` patients desiring day ``d`` that are
booked on day ``d' >= d``). It separates by patient type into independent
transportation problems:

* supply node per desired day with ``f[r, d]`` patients,
* sink node per day with room for ``cap[r, d'] / (1 - p_r)`` patients
  (capacity counts shows, so bookings are scaled up by the show rate),
* arc cost ``w_r * (d' - d) ** (1 + eps)`` per patient,
* a denial sink of unbounded size at ``denial_penalty`` per patient, which
  keeps the problem feasible when demand outruns capacity.

Each subproblem is solved exactly by successive shortest paths with node
potentials. Days are working-day indices.
"""

from __future__ import annotations

import heapq
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import CalendarConfig, PatientTypeSet, WeeklyTemplate
from .scenario import DemandScenario

_EPS = 1e-12


@dataclass(frozen=True)
class RecourseConfig:
    epsilon: float = 0.1
    denial_penalty: float | None = None  # per denied patient; None -> default_denial_penalty

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.denial_penalty is not None and self.denial_penalty <= 0:
            raise ValueError("denial_penalty must be positive")


def default_denial_penalty(n_days: int, epsilon: float, max_weight: float) -> float:
    return float(max(n_days, 1)) ** (1.0 + epsilon) * max(max_weight, 1e-9) * 10.0


def delay_costs(n_days: int, epsilon: float) -> np.ndarray:
    """``k ** (1 + eps)`` for delays ``k = 0 .. n_days - 1``."""
    return np.arange(n_days, dtype=float) ** (1.0 + epsilon)


@dataclass(frozen=True, eq=False)
class AssignmentProblem:
    demand: np.ndarray  # (R, D) patients by desired working day
    capacity: np.ndarray  # (R, D) template show capacity by working day
    no_show: np.ndarray  # (R,)
    weights: np.ndarray  # (R,)
    epsilon: float = 0.1
    denial_penalty: float | None = None

    def __post_init__(self) -> None:
        f = np.asarray(self.demand, dtype=float)
        cap = np.asarray(self.capacity, dtype=float)
        p = np.asarray(self.no_show, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if f.ndim != 2 or cap.shape != f.shape or p.shape != (f.shape[0],) or w.shape != p.shape:
            raise ValueError("demand/capacity must be (R, D); no_show and weights must be (R,)")
        if (f < 0).any() or (cap < 0).any():
            raise ValueError("demand and capacity must be nonnegative")
        if ((p < 0) | (p >= 1)).any() or (w < 0).any():
            raise ValueError("no-show probabilities must be in [0, 1) and weights >= 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        n_days = f.shape[1]
        penalty = self.denial_penalty
        if penalty is None:
            penalty = default_denial_penalty(n_days, self.epsilon, float(w.max(initial=0.0)))
        max_delay = float(max(n_days - 1, 0)) ** (1.0 + self.epsilon) * float(w.max(initial=0.0))
        if not penalty > max_delay:
            raise ValueError(f"denial_penalty {penalty} must exceed the largest delay cost {max_delay}")
        for name, arr in (("demand", f), ("capacity", cap), ("no_show", p), ("weights", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "denial_penalty", float(penalty))

    @property
    def n_types(self) -> int:
        return self.demand.shape[0]

    @property
    def n_days(self) -> int:
        return self.demand.shape[1]


@dataclass(frozen=True, eq=False)
class AssignmentResult:
    objective: float
    y: np.ndarray  # (R, D, D) proportions, zero below the diagonal
    denied: np.ndarray  # (R, D) denied proportion per desired day
    type_objectives: np.ndarray  # (R,)

    def booked_patients(self, problem: AssignmentProblem) -> np.ndarray:
        """Patients booked per (type, day), i.e. ``sum_d y * f``."""
        return np.einsum("rde,rd->re", self.y, problem.demand)


class _Network:
    """Residual graph for successive-shortest-path min-cost flow."""

    def __init__(self, n: int):
        self.n = n
        self.adj: list[list[int]] = [[] for _ in range(n)]
        self.to: list[int] = []
        self.cap: list[float] = []
        self.cost: list[float] = []

    def add(self, u: int, v: int, cap: float, cost: float) -> int:
        e = len(self.to)
        self.to += [v, u]
        self.cap += [cap, 0.0]
        self.cost += [cost, -cost]
        self.adj[u].append(e)
        self.adj[v].append(e + 1)
        return e

    def min_cost_flow(self, s: int, t: int, need: float) -> tuple[float, float]:
        """Push up to ``need`` units from s to t; returns (flow, cost)."""
        n, to, cap, cost, adj = self.n, self.to, self.cap, self.cost, self.adj
        pot = [0.0] * n  # all original costs are >= 0
        flow = total = 0.0
        inf = float("inf")
        while need - flow > _EPS:
            dist = [inf] * n
            via = [-1] * n
            dist[s] = 0.0
            heap = [(0.0, s)]
            while heap:
                d, u = heapq.heappop(heap)
                if d > dist[u]:
                    continue
                pu = pot[u]
                for e in adj[u]:
                    if cap[e] > _EPS:
                        v = to[e]
                        rc = cost[e] + pu - pot[v]
                        # rounding can leave tiny negative reduced costs; they would break Dijkstra
                        nd = d + (rc if rc > 0.0 else 0.0)
                        if nd < dist[v]:
                            dist[v] = nd
                            via[v] = e
                            heapq.heappush(heap, (nd, v))
            if dist[t] == inf:
                break
            for v in range(n):
                if dist[v] < inf:
                    pot[v] += dist[v]
            push = need - flow
            v = t
            while v != s:
                e = via[v]
                push = min(push, cap[e])
                v = to[e ^ 1]
            v = t
            while v != s:
                e = via[v]
                cap[e] -= push
                cap[e ^ 1] += push
                total += push * cost[e]
                v = to[e ^ 1]
            flow += push
        return flow, total


def solve_type(
    demand: np.ndarray, room: np.ndarray, weight: float, costs: np.ndarray, penalty: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Exact transportation solve for one patient type.

    ``room[d']`` is the number of patients day ``d'`` can take. Returns the
    optimal cost, the patient flow matrix ``q[d, d']`` and denied patients
    per desired day.
    """
    n_days = len(demand)
    q = np.zeros((n_days, n_days))
    denied = np.zeros(n_days)
    src = [d for d in range(n_days) if demand[d] > 0]
    if not src:
        return 0.0, q, denied
    first = src[0]
    dst = [d for d in range(first, n_days) if room[d] > _EPS]
    # node ids: 0 = S, 1..|src| sources, then sinks, then DEN, then T
    ns, nt = len(src), len(dst)
    den, t = 1 + ns + nt, 2 + ns + nt
    net = _Network(t + 1)
    for i, d in enumerate(src):
        net.add(0, 1 + i, float(demand[d]), 0.0)
    arcs = []
    big = float(demand.sum())
    for i, d in enumerate(src):
        for j, e_day in enumerate(dst):
            if e_day >= d:
                arcs.append((i, j, net.add(1 + i, 1 + ns + j, big, weight * costs[e_day - d])))
        arcs.append((i, -1, net.add(1 + i, den, big, penalty)))
    for j, e_day in enumerate(dst):
        net.add(1 + ns + j, t, float(room[e_day]), 0.0)
    net.add(den, t, big, 0.0)
    _, cost = net.min_cost_flow(0, t, big)
    for i, j, e in arcs:
        sent = net.cap[e ^ 1]
        if sent > _EPS:
            if j < 0:
                denied[src[i]] = sent
            else:
                q[src[i], dst[j]] = sent
    return float(cost), q, denied


def solve_second_stage(p: AssignmentProblem) -> AssignmentResult:
    """Optimal recourse assignment for one scenario."""
    R, D = p.n_types, p.n_days
    costs = delay_costs(D, p.epsilon)
    y = np.zeros((R, D, D))
    denied = np.zeros((R, D))
    per_type = np.zeros(R)
    for r in range(R):
        room = p.capacity[r] / (1.0 - p.no_show[r])
        cost, q, den = solve_type(p.demand[r], room, float(p.weights[r]), costs, p.denial_penalty)
        per_type[r] = cost
        f = p.demand[r]
        nz = f > 0
        y[r][nz] = np.minimum(q[nz] / f[nz, None], 1.0)
        denied[r][nz] = np.minimum(den[nz] / f[nz], 1.0)
    return AssignmentResult(float(per_type.sum()), y, denied, per_type)


# -- template-level evaluation ------------------------------------------------


def working_day_capacity(day_totals: np.ndarray, scenario: DemandScenario, calendar: CalendarConfig) -> np.ndarray:
    """Expand per-weekday capacities ``(R, days_per_week)`` over the scenario's working days."""
    days = scenario.start_day + np.arange(scenario.horizon)
    work = days[(days % 7) < calendar.days_per_week]
    return np.asarray(day_totals)[:, work % 7]


def scenario_problem(
    day_totals: np.ndarray,
    scenario: DemandScenario,
    types: PatientTypeSet,
    calendar: CalendarConfig,
    cfg: RecourseConfig,
) -> AssignmentProblem:
    return AssignmentProblem(
        demand=scenario.working_demand(calendar),
        capacity=working_day_capacity(day_totals, scenario, calendar),
        no_show=types.no_show,
        weights=types.weights,
        epsilon=cfg.epsilon,
        denial_penalty=cfg.denial_penalty,
    )


def _scenario_value(args) -> float:
    day_totals, scenario, types, calendar, cfg = args
    return solve_second_stage(scenario_problem(day_totals, scenario, types, calendar, cfg)).objective


def scenario_objectives(
    t: WeeklyTemplate,
    scenarios: Sequence[DemandScenario],
    types: PatientTypeSet,
    calendar: CalendarConfig,
    cfg: RecourseConfig = RecourseConfig(),
    workers: int = 1,
) -> np.ndarray:
    """Recourse optimum of every scenario, in scenario order."""
    totals = t.day_totals(calendar)
    jobs = [(totals, s, types, calendar, cfg) for s in scenarios]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(_scenario_value, jobs)))
    return np.array([_scenario_value(j) for j in jobs])


def saa_objective(
    t: WeeklyTemplate,
    scenarios: Sequence[DemandScenario],
    types: PatientTypeSet,
    calendar: CalendarConfig,
    cfg: RecourseConfig = RecourseConfig(),
    workers: int = 1,
) -> float:
    """Sample-average recourse cost of a template."""
    if len(scenarios) == 0:
        raise ValueError("saa_objective needs at least one scenario")
    values = scenario_objectives(t, scenarios, types, calendar, cfg, workers)
    # summed in scenario order regardless of worker count
    return float(sum(values.tolist()) / len(values))
