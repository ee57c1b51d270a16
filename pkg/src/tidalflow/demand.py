"""Time-of-day access flows and their conversion to arrival schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import NegativeFlow, ScenarioParseError, UndefinedRatio, UnknownAccess
from .network import Network, ValidationReport

MORNING = ("morning", 7 * 3600.0, 9 * 3600.0)
EVENING = ("evening", 17 * 3600.0, 19 * 3600.0)


@dataclass(frozen=True)
class Period:
    name: str
    start: float  # s since midnight
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class AccessFlow:
    access_id: str
    flow_by_period: Mapping[str, float]  # veh/h
    route: tuple[str, ...]


@dataclass(frozen=True)
class DemandProfile:
    accesses: tuple[AccessFlow, ...]
    periods: tuple[Period, ...] = (Period(*MORNING), Period(*EVENING))

    def access(self, access_id: str | int) -> AccessFlow:
        key = str(access_id)
        for acc in self.accesses:
            if acc.access_id == key:
                return acc
        raise UnknownAccess(key)

    def period(self, name: str) -> Period:
        for p in self.periods:
            if p.name == name:
                return p
        raise KeyError(f"unknown period {name!r}")


@dataclass(frozen=True)
class Schedule:
    """Integer arrivals per access and step over ``[start, start + steps*dt)``."""

    start: float
    dt: float
    counts: Mapping[str, np.ndarray]
    routes: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    network_version: int | None = None
    mode: str = "uniform"

    @property
    def steps(self) -> int:
        return len(next(iter(self.counts.values()))) if self.counts else 0

    def total(self, access_id: str) -> int:
        return int(self.counts[access_id].sum())


def load_demand(source: Mapping[str, Any], net: Network | None = None) -> DemandProfile:
    """Build a profile from the ``demand`` section of a scenario document.

    With ``net`` given, access ids must be declared by the network.
    """
    try:
        raw_periods = source.get("periods")
        if raw_periods is None:
            periods = (Period(*MORNING), Period(*EVENING))
        else:
            periods = tuple(Period(str(p["name"]), float(p["start"]), float(p["end"])) for p in raw_periods)
        accesses = []
        for item in source["accesses"]:
            access_id = str(item["id"])
            flows = {}
            for name, value in item["flows"].items():
                value = float(value)
                if not math.isfinite(value):
                    raise ScenarioParseError(f"access {access_id}: flow {value!r} is not finite")
                if value < 0:
                    raise NegativeFlow(f"access {access_id}: negative flow {value} in period {name}")
                flows[str(name)] = value
            accesses.append(AccessFlow(access_id, flows, tuple(str(x) for x in item["route"])))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioParseError(f"malformed demand section: {exc!r}") from exc

    if net is not None:
        for acc in accesses:
            if acc.access_id not in net.accesses:
                raise UnknownAccess(acc.access_id)
    return DemandProfile(tuple(accesses), periods)


def validate_demand(profile: DemandProfile, net: Network) -> ValidationReport:
    report = ValidationReport()
    ordered = sorted(profile.periods, key=lambda p: p.start)
    for a, b in zip(ordered, ordered[1:]):
        if b.start < a.end:
            report.add(f"period {b.name}", f"overlaps period {a.name}")
    for p in profile.periods:
        if not p.end > p.start:
            report.add(f"period {p.name}", "end must be after start")
    names = {p.name for p in profile.periods}
    for acc in profile.accesses:
        ent = f"access {acc.access_id}"
        if acc.access_id not in net.accesses:
            report.add(ent, "not a declared access point")
            continue
        for name, q in acc.flow_by_period.items():
            if name not in names:
                report.add(ent, f"flow for undeclared period {name!r}")
            if not (math.isfinite(q) and q >= 0):
                report.add(ent, f"flow {q} must be finite and >= 0")
        if not acc.route:
            report.add(ent, "empty route")
            continue
        links = net.link_map
        missing = [lid for lid in acc.route if lid not in links]
        if missing:
            report.add(ent, f"route references unknown links {missing}")
            continue
        if links[acc.route[0]].from_node != net.accesses[acc.access_id]:
            report.add(ent, "route does not start at the access point")
        for a, b in zip(acc.route, acc.route[1:]):
            if links[a].to_node != links[b].from_node:
                report.add(ent, f"route breaks between {a} and {b}")
            elif (a, b) not in net.phase_of_movement and links[a].to_node in net.intersection_map:
                report.add(ent, f"movement {a}->{b} is not served by any phase")
        if links[acc.route[-1]].to_node not in net.boundaries:
            report.add(ent, "route does not end at a boundary point")
    return report


def flow_at(profile: DemandProfile, access: str | int, t: float) -> float:
    """Piecewise-constant flow of ``access`` at clock time ``t`` (0 outside periods)."""
    acc = profile.access(access)
    for p in profile.periods:
        if p.start <= t < p.end:
            return float(acc.flow_by_period.get(p.name, 0.0))
    return 0.0


def tidal_ratio(profile: DemandProfile, access: str | int,
                peaks: tuple[str, str] = ("morning", "evening")) -> float:
    acc = profile.access(access)
    a = float(acc.flow_by_period.get(peaks[0], 0.0))
    b = float(acc.flow_by_period.get(peaks[1], 0.0))
    lo, hi = min(a, b), max(a, b)
    if lo <= 0:
        raise UndefinedRatio(f"access {acc.access_id}: a peak flow is zero")
    return hi / lo


def _uniform_counts(flow: float, steps: int, dt: float) -> np.ndarray:
    # cumulative floor keeps totals exact without float drift
    k = np.arange(1, steps + 1, dtype=float)
    cum = np.floor(flow * k * dt / 3600.0 + 1e-9)
    return np.diff(np.concatenate(([0.0], cum))).astype(np.int64)


def to_injection_schedule(profile: DemandProfile, dt: float, seed: int = 0,
                          mode: str = "uniform", window: tuple[float, float] | None = None,
                          network_version: int | None = None) -> Schedule:
    """Arrival counts per access and step.

    ``window`` defaults to the span of all periods. In ``uniform`` mode each
    period restarts a deterministic accumulator; ``poisson`` draws from a
    generator seeded with ``seed``.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if mode not in ("uniform", "poisson"):
        raise ValueError(f"unknown arrival mode {mode!r}")
    if window is None:
        window = (min(p.start for p in profile.periods), max(p.end for p in profile.periods))
    start, end = window
    steps = int(round((end - start) / dt))
    rng = np.random.default_rng(seed)
    counts: dict[str, np.ndarray] = {}
    for acc in profile.accesses:
        arr = np.zeros(steps, dtype=np.int64)
        for p in profile.periods:
            q = float(acc.flow_by_period.get(p.name, 0.0))
            lo = int(round((max(p.start, start) - start) / dt))
            hi = int(round((min(p.end, end) - start) / dt))
            if hi <= lo:
                continue
            if mode == "uniform":
                if q > 0:
                    arr[lo:hi] = _uniform_counts(q, hi - lo, dt)
            else:
                arr[lo:hi] = rng.poisson(q * dt / 3600.0, hi - lo)
        counts[acc.access_id] = arr
    routes = {acc.access_id: acc.route for acc in profile.accesses}
    return Schedule(start, dt, counts, routes, network_version, mode)
