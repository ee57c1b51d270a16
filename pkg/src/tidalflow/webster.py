"""Analytic intersection delay and constraint-satisfying green splits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import (
    InfeasibleDemand,
    InvalidGreenRatio,
    NoFlow,
    NonpositiveLostTime,
    Oversaturated,
    ZeroSaturationFlow,
)
from .network import ControlPlan, Network, Timing, ValidationReport, check_allocation

AS_PRINTED = "as_printed"
CLASSICAL = "classical"
GREEN_SUM_TOL = 1e-9


@dataclass(frozen=True)
class WebsterConfig:
    variant: str = AS_PRINTED
    x_max: float = 0.9
    saturation_guard: float = 1e-6

    def __post_init__(self):
        if not 0 < self.x_max < 1:
            raise ValueError("x_max must lie in (0, 1)")
        if self.variant not in (AS_PRINTED, CLASSICAL):
            raise ValueError(f"unknown delay variant {self.variant!r}")


@dataclass(frozen=True)
class MovementInput:
    """One lane group: flow ``q`` and saturation flow ``s`` in veh/s, green ratio ``lam``."""

    q: float
    lam: float
    s: float
    intersection: str = ""
    approach: str = ""
    phase: str = ""

    @property
    def qstar(self) -> float:
        # discharge capacity during the cycle
        return self.lam * self.s

    @property
    def x(self) -> float:
        return degree_of_saturation(self.q, self.lam, self.s)


def degree_of_saturation(q: float, lam: float, s: float) -> float:
    if not 0 < lam < 1:
        raise InvalidGreenRatio(f"green ratio {lam} outside (0, 1)")
    if s <= 0:
        raise ZeroSaturationFlow("saturation flow is zero")
    return q / (lam * s)


def movement_delay(m: MovementInput, cycle: float, cfg: WebsterConfig = WebsterConfig()) -> float:
    """Per-vehicle delay of a single lane group, seconds."""
    x = m.x
    if x >= 1 - cfg.saturation_guard:
        raise Oversaturated(f"degree of saturation {x:.4f} at {m.intersection}/{m.phase}")
    lam = m.lam
    if cfg.variant == AS_PRINTED:
        uniform = cycle * (1 + lam) / (2 * (1 - lam * x))
    else:
        uniform = cycle * (1 - lam) ** 2 / (2 * (1 - lam * x))
    random_term = x * x / (2 * m.qstar * (1 - x))
    return uniform + random_term


def webster_delay(movements: Sequence[MovementInput], cycle: float,
                  cfg: WebsterConfig = WebsterConfig()) -> float:
    """Flow-weighted mean delay over ``movements``.

    Raises :class:`NoFlow` when every flow is zero and :class:`Oversaturated`
    when any lane group reaches ``1 - saturation_guard``.
    """
    total_q = sum(m.q for m in movements)
    if total_q <= 0:
        raise NoFlow("no flow on any movement")
    weighted = 0.0
    for m in movements:
        d = movement_delay(m, cycle, cfg)
        weighted += d * m.q
    return weighted / total_q


def green_splits(flow_ratios: Sequence[float], lost_time: float,
                 cfg: WebsterConfig = WebsterConfig(),
                 phase_ids: Sequence[str] | None = None) -> Timing:
    """Cycle and greens meeting both the green-sum and max-saturation constraints.

    With ``Y = sum(y)``, ``t_i = C*y_i/x_max`` and ``sum(t_i) = C - L`` hold
    simultaneously only for ``C = L / (1 - Y/x_max)``.
    """
    if lost_time <= 0:
        raise NonpositiveLostTime(f"lost time {lost_time} must be > 0")
    if any(y < 0 for y in flow_ratios):
        raise ValueError("flow ratios must be >= 0")
    y_total = sum(flow_ratios)
    if y_total >= cfg.x_max:
        raise InfeasibleDemand(f"critical flow ratio {y_total:.4f} >= x_max {cfg.x_max}")
    cycle = lost_time / (1 - y_total / cfg.x_max)
    ids = list(phase_ids) if phase_ids is not None else [f"p{i}" for i in range(len(flow_ratios))]
    greens = {pid: cycle * y / cfg.x_max for pid, y in zip(ids, flow_ratios)}
    return Timing(cycle=cycle, greens=greens)


def check_timing(inter_id: str, timing: Timing, net: Network,
                 tol: float = GREEN_SUM_TOL) -> ValidationReport:
    report = ValidationReport()
    inter = net.intersection(inter_id)
    if not timing.cycle > 0:
        report.add(inter_id, f"cycle {timing.cycle} must be > 0")
    expected = set(inter.phase_ids())
    if set(timing.greens) != expected:
        report.add(inter_id, f"greens cover {sorted(timing.greens)}, phases are {sorted(expected)}")
        return report
    total = sum(timing.greens.values())
    target = timing.cycle - inter.lost_time
    if abs(total - target) > tol:
        report.add(inter_id, f"greens sum to {total:.9f}, expected C - L = {target:.9f}")
    for phase in inter.phases:
        t = timing.greens[phase.id]
        if t < phase.min_green - tol:
            report.add(f"{inter_id}/{phase.id}", f"green {t:.6f} below min_green {phase.min_green}")
    return report


def check_plan_feasibility(plan: ControlPlan | Mapping[str, Timing], net: Network) -> ValidationReport:
    """Report green-sum, min-green and lane-allocation violations of ``plan``."""
    signal = plan.signal if isinstance(plan, ControlPlan) else plan
    report = ValidationReport()
    for inter_id in signal:
        if inter_id not in net.intersection_map:
            report.add(inter_id, "plan references unknown intersection")
    for inter in net.intersections:
        timing = signal.get(inter.id)
        if timing is None:
            report.add(inter.id, "no timing in plan")
            continue
        report.extend(check_timing(inter.id, timing, net))
    if isinstance(plan, ControlPlan):
        report.extend(check_allocation(net, plan.lanes))
    return report


def proportional_timing(flow_ratios: Iterable[float], cycle: float, lost_time: float,
                        min_greens: Sequence[float], phase_ids: Sequence[str]) -> Timing:
    """Split ``cycle - lost_time`` above min greens in proportion to flow ratios."""
    ys = [max(float(y), 0.0) for y in flow_ratios]
    spare = cycle - lost_time - sum(min_greens)
    if spare < -GREEN_SUM_TOL:
        raise InfeasibleDemand("cycle too short for minimum greens")
    spare = max(spare, 0.0)
    total = sum(ys)
    shares = [y / total for y in ys] if total > 0 else [1.0 / len(ys)] * len(ys)
    greens = {pid: g + spare * w for pid, g, w in zip(phase_ids, min_greens, shares)}
    return Timing(cycle=cycle, greens=greens)
