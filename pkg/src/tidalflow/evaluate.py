"""Plan evaluation shared by the optimizer and the consensus contract.

Two evaluators produce the same eight sub-indicators:

``webster_analytic``
    Per lane group delay from the Webster-style formula, stop rates from
    the deterministic queue, totals scaled to the period length.
``mesosim``
    A full point-queue simulation run.

Either way the indicators are scaled by the baseline plan's values and
combined into the performance index.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .demand import DemandProfile, Period, Schedule, to_injection_schedule
from .errors import InfeasibleDemand, InvalidGreenRatio, Oversaturated
from .mcdm import (
    EMISSION_INDICATORS,
    TRAFFIC_INDICATORS,
    IndexBreakdown,
    IndicatorTable,
    Scaler,
    WeightVector,
    entropy_weights,
    performance_index,
)
from .mesosim import (
    EmissionFactors,
    EmissionReport,
    SimConfig,
    SimMetrics,
    SimResult,
    estimate_emissions,
    run_detailed,
)
from .network import ControlPlan, LaneAllocation, Network, Timing, saturation_flow
from .webster import (
    WebsterConfig,
    MovementInput,
    green_splits,
    movement_delay,
    proportional_timing,
)

WEBSTER_ANALYTIC = "webster_analytic"
MESOSIM = "mesosim"
EVALUATORS = (WEBSTER_ANALYTIC, MESOSIM)
X_CLIP = 0.99  # delay of an oversaturated group is evaluated here and penalized


@dataclass(frozen=True)
class LaneGroup:
    intersection: str
    link: str
    phase: str
    flow: float  # veh/h
    out_links: tuple[str, ...] = ()


@dataclass(frozen=True)
class Weights:
    primary: WeightVector
    traffic: WeightVector
    emission: WeightVector


@dataclass(frozen=True)
class Evaluation:
    index: IndexBreakdown
    violations: int
    metrics: SimMetrics
    emissions: EmissionReport

    @property
    def pi(self) -> float:
        return self.index.pi


def movement_flows(net: Network, profile: DemandProfile, period: str) -> dict[tuple[str, str], float]:
    """Flow (veh/h) on each signalized movement implied by the fixed routes."""
    flows: dict[tuple[str, str], float] = defaultdict(float)
    for acc in profile.accesses:
        q = float(acc.flow_by_period.get(period, 0.0))
        for a, b in zip(acc.route, acc.route[1:]):
            if (a, b) in net.phase_of_movement:
                flows[(a, b)] += q
    return dict(flows)


def lane_groups(net: Network, profile: DemandProfile, period: str) -> list[LaneGroup]:
    flows = movement_flows(net, profile, period)
    acc: dict[tuple[str, str, str], list] = {}
    for (in_id, out_id), (xid, pid) in sorted(net.phase_of_movement.items()):
        rec = acc.setdefault((xid, in_id, pid), [0.0, []])
        q = flows.get((in_id, out_id), 0.0)
        rec[0] += q
        if q > 0:
            rec[1].append(out_id)
    return [LaneGroup(x, l, p, q, tuple(outs)) for (x, l, p), (q, outs) in acc.items()]


def phase_flow_ratios(net: Network, groups: Sequence[LaneGroup], inter_id: str,
                      alloc: LaneAllocation | None = None) -> list[float]:
    """Critical flow ratio per phase (max over the phase's lane groups)."""
    inter = net.intersection(inter_id)
    ys = {p.id: 0.0 for p in inter.phases}
    for g in groups:
        if g.intersection != inter_id or g.flow <= 0:
            continue
        s = saturation_flow(net, g.link, alloc)
        y = g.flow / s if s > 0 else float("inf")
        ys[g.phase] = max(ys[g.phase], y)
    return [ys[p.id] for p in inter.phases]


def webster_timing(net: Network, groups: Sequence[LaneGroup], inter_id: str,
                   alloc: LaneAllocation | None, cfg: WebsterConfig,
                   cycle_bounds: tuple[float, float]) -> Timing:
    """Webster-style seed timing, falling back to proportional splits at the cycle bounds."""
    inter = net.intersection(inter_id)
    ys = phase_flow_ratios(net, groups, inter_id, alloc)
    ids = inter.phase_ids()
    mins = [p.min_green for p in inter.phases]
    c_lo = max(cycle_bounds[0], inter.lost_time + sum(mins))
    c_hi = max(cycle_bounds[1], c_lo)
    finite = [y if y != float("inf") else 1.0 for y in ys]
    try:
        t = green_splits(finite, inter.lost_time, cfg, ids) if inter.lost_time > 0 else None
    except InfeasibleDemand:
        t = None
    if t is not None and c_lo <= t.cycle <= c_hi and all(t.greens[i] >= m for i, m in zip(ids, mins)):
        return t
    cycle = c_hi if t is None else min(max(t.cycle, c_lo), c_hi)
    return proportional_timing(finite, cycle, inter.lost_time, mins, ids)


def webster_plan(net: Network, groups: Sequence[LaneGroup], alloc: LaneAllocation,
                 cfg: WebsterConfig, cycle_bounds: tuple[float, float]) -> ControlPlan:
    signal = {x.id: webster_timing(net, groups, x.id, alloc, cfg, cycle_bounds) for x in net.intersections}
    return ControlPlan(signal, alloc)


def baseline_plan(net: Network, profile: DemandProfile, period: str, cfg: WebsterConfig,
                  cycle_bounds: tuple[float, float]) -> ControlPlan:
    """Balanced lanes with Webster-seeded timing for ``period``."""
    groups = lane_groups(net, profile, period)
    balanced = LaneAllocation({p.id: p.baseline_grant for p in net.pools})
    return webster_plan(net, groups, balanced, cfg, cycle_bounds)


def analytic_indicators(net: Network, plan: ControlPlan, groups: Sequence[LaneGroup],
                        profile: DemandProfile, period: Period, cfg: WebsterConfig,
                        accel_loss: float) -> tuple[SimMetrics, int]:
    """Period totals from the analytic delay model plus the oversaturation count."""
    hours = period.duration / 3600.0
    alloc = plan.lanes
    violations = 0
    stopped = 0.0
    stops = 0.0
    per_vehicle: dict[tuple[str, str], float] = {}
    for g in groups:
        if g.flow <= 0:
            continue
        if any(net.effective_lanes(o, alloc) == 0 for o in g.out_links):
            violations += 1
        timing = plan.signal[g.intersection]
        lam = timing.greens[g.phase] / timing.cycle
        s = saturation_flow(net, g.link, alloc) / 3600.0
        q = g.flow / 3600.0
        if s <= 0 or not 0 < lam < 1:
            violations += 1
            lam = min(max(lam, 1e-3), 1 - 1e-3)
            s = max(s, 1e-6)
        x = q / (lam * s)
        if x >= 1 - cfg.saturation_guard:
            violations += 1
            x = X_CLIP
            q = x * lam * s
        mv = MovementInput(q, lam, s, g.intersection, g.link, g.phase)
        try:
            d = movement_delay(mv, timing.cycle, cfg)
        except (Oversaturated, InvalidGreenRatio):  # pragma: no cover - guarded above
            violations += 1
            d = 0.0
        h = min(1.0, (1 - lam) / (1 - lam * x))
        per_vehicle[(g.intersection, g.link)] = d + accel_loss * h
        vehicles = g.flow * hours
        stopped += d * vehicles
        stops += h * vehicles
    arrivals = 0.0
    vkt = 0.0
    access_delay = {}
    for acc in profile.accesses:
        q = float(acc.flow_by_period.get(period.name, 0.0)) * hours
        arrivals += q
        vkt += q * sum(net.link(l).length for l in acc.route) / 1000.0
        node_of = (net.link(l).to_node for l in acc.route)
        access_delay[acc.access_id] = sum(per_vehicle.get((n, l), 0.0) for n, l in zip(node_of, acc.route))
    delay = stopped + accel_loss * stops
    m = SimMetrics(
        D=delay,
        D_a=delay / arrivals if arrivals else 0.0,
        D_s=stopped,
        C_s=stops / arrivals if arrivals else 0.0,
        vkt=vkt,
        idle_time=stopped,
        stops=int(round(stops)),
        arrivals=int(round(arrivals)),
        departures=int(round(arrivals)),
        access_delay=access_delay,
    )
    return m, violations


def indicator_values(m: SimMetrics, e: EmissionReport) -> dict[str, float]:
    d = {k: float(getattr(m, k)) for k in TRAFFIC_INDICATORS}
    d.update({k: float(getattr(e, k)) for k in EMISSION_INDICATORS})
    return d


def scaler_from(m: SimMetrics, e: EmissionReport) -> Scaler:
    return Scaler(indicator_values(m, e))


def entropy_sub_weights(rows: Sequence[tuple[SimMetrics, EmissionReport]]) -> tuple[WeightVector, WeightVector]:
    """Entropy sub-weights, one observation per ``(metrics, emissions)`` row; uniform below 2 rows."""
    if len(rows) < 2:
        uniform = WeightVector((0.25,) * 4)
        return (replace(uniform, labels=TRAFFIC_INDICATORS), replace(uniform, labels=EMISSION_INDICATORS))
    rows_f = [[getattr(m, k) for k in TRAFFIC_INDICATORS] for m, _ in rows]
    rows_n = [[getattr(e, k) for k in EMISSION_INDICATORS] for _, e in rows]
    wf = entropy_weights(IndicatorTable.costs(rows_f, TRAFFIC_INDICATORS))
    wn = entropy_weights(IndicatorTable.costs(rows_n, EMISSION_INDICATORS))
    return wf, wn


def interval_weights(result: SimResult, factors: EmissionFactors) -> tuple[WeightVector, WeightVector]:
    """Entropy sub-weights with evaluation intervals as observations."""
    return entropy_sub_weights([(m, estimate_emissions(m, factors)) for m in result.intervals if m.arrivals > 0])


def candidate_weights(ctx: "EvalContext", plans: Sequence[ControlPlan]) -> tuple[WeightVector, WeightVector]:
    """Entropy sub-weights with candidate plans as observations."""
    rows = []
    for plan in plans:
        m, e, _ = ctx.indicators(plan)
        rows.append((m, e))
    return entropy_sub_weights(rows)


@dataclass
class EvalContext:
    """Everything needed to score a plan for one demand period."""

    net: Network
    profile: DemandProfile
    period: Period
    weights: Weights
    scaler: Scaler | None = None
    factors: EmissionFactors = field(default_factory=EmissionFactors)
    sim: SimConfig = field(default_factory=SimConfig)
    webster: WebsterConfig = field(default_factory=WebsterConfig)
    evaluator: str = WEBSTER_ANALYTIC
    penalty: float = 1e3
    cycle_bounds: tuple[float, float] = (40.0, 180.0)
    arrival_mode: str = "uniform"
    _groups: list[LaneGroup] | None = field(default=None, repr=False)
    _schedule: Schedule | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.evaluator not in EVALUATORS:
            raise ValueError(f"unknown evaluator {self.evaluator!r}")

    @property
    def groups(self) -> list[LaneGroup]:
        if self._groups is None:
            self._groups = lane_groups(self.net, self.profile, self.period.name)
        return self._groups

    @property
    def schedule(self) -> Schedule:
        if self._schedule is None:
            self._schedule = to_injection_schedule(
                self.profile, self.sim.dt, seed=self.sim.seed, mode=self.arrival_mode,
                window=(self.period.start, self.period.end), network_version=self.net.version)
        return self._schedule

    def baseline(self) -> ControlPlan:
        return baseline_plan(self.net, self.profile, self.period.name, self.webster, self.cycle_bounds)

    def indicators(self, plan: ControlPlan, evaluator: str | None = None) -> tuple[SimMetrics, EmissionReport, int]:
        evaluator = evaluator or self.evaluator
        if evaluator == MESOSIM:
            m = run_detailed(self.net, plan, self.schedule, self.sim).metrics
            _, violations = analytic_indicators(self.net, plan, self.groups, self.profile, self.period,
                                                self.webster, self.sim.accel_loss)
        else:
            m, violations = analytic_indicators(self.net, plan, self.groups, self.profile, self.period,
                                                self.webster, self.sim.accel_loss)
        return m, estimate_emissions(m, self.factors), violations

    def evaluate(self, plan: ControlPlan) -> Evaluation:
        m, e, violations = self.indicators(plan)
        idx = performance_index(indicator_values(m, e), indicator_values(m, e), self.weights.primary,
                                self.weights.traffic, self.weights.emission, self.scaler)
        return Evaluation(idx, violations, m, e)

    def fitness(self, plan: ControlPlan) -> float:
        ev = self.evaluate(plan)
        return ev.pi + self.penalty * ev.violations

    def with_evaluator(self, evaluator: str) -> "EvalContext":
        ctx = replace(self, evaluator=evaluator, scaler=None)
        ctx.calibrate()
        return ctx

    def calibrate(self, plan: ControlPlan | None = None) -> None:
        """Set the scaler to ``plan``'s (default: the baseline's) indicators."""
        m, e, _ = self.indicators(plan or self.baseline())
        self.scaler = scaler_from(m, e)


def route_delay(metrics: SimMetrics, access_id: str) -> float:
    return float(metrics.access_delay.get(str(access_id), 0.0))


def equal_weights() -> Weights:
    return Weights(WeightVector((0.5, 0.5)), WeightVector((0.25,) * 4), WeightVector((0.25,) * 4))
