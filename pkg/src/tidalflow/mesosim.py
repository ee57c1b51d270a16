"""Deterministic point-queue (store-and-forward) network simulation.

Vehicles enter at their access link, traverse each link at free-flow
speed and then join the vertical queue of their lane group at the stop
line. A lane group is the set of movements of one inbound link served by
one signal phase; it discharges at the link's saturation flow while its
phase is green, using a fractional credit so that ``s * dt = 0.5`` releases
exactly one vehicle every second step. Links ending at a boundary point
discharge continuously at their saturation flow.

Delay is actual minus free-flow travel time: queue waiting plus a fixed
acceleration loss after each stop, which also postpones arrival at the
next stop line. Only vehicles injected after ``warmup`` enter the metrics.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

from .demand import Schedule
from .errors import AllocationOutOfRange, InfeasiblePlan, ScheduleMismatch, UnknownPool
from .network import ControlPlan, Network, apply_lane_allocation, saturation_flow
from .webster import check_plan_feasibility

POLLUTANTS = ("CO2", "NOx", "VOC", "fuel")
EMISSION_FIELDS = ("E_CO2", "E_NOx", "E_VOC", "E_f")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1.0
    horizon: float | None = None  # s; None runs the whole schedule
    warmup: float = 300.0
    stop_speed_threshold: float = 5.0  # km/h
    accel_loss: float = 2.0  # s lost re-accelerating after a stop
    interval: float = 900.0  # s, bucket width of per-interval metrics
    jam_spacing: float | None = None  # m per vehicle per lane; enables storage caps
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.horizon is not None and not self.warmup < self.horizon:
            raise ValueError("warmup must be shorter than the horizon")
        if self.warmup < 0 or self.accel_loss < 0 or not self.interval > 0:
            raise ValueError("warmup and accel_loss must be >= 0, interval > 0")


@dataclass(frozen=True)
class Factor:
    per_km: float = 0.0
    per_idle_s: float = 0.0
    per_stop: float = 0.0
    unit: str = ""


@dataclass(frozen=True)
class EmissionFactors:
    """Linear surrogate coefficients per pollutant.

    The bundled defaults are illustrative surrogates, not calibrated
    ground truth.
    """

    CO2: Factor = Factor(180.0, 0.45, 12.0, "g")
    NOx: Factor = Factor(0.35, 0.0015, 0.02, "g")
    VOC: Factor = Factor(0.30, 0.004, 0.015, "g")
    fuel: Factor = Factor(75.0, 0.25, 5.0, "mL")

    def __post_init__(self):
        for p in POLLUTANTS:
            f = getattr(self, p)
            if min(f.per_km, f.per_idle_s, f.per_stop) < 0:
                raise ValueError(f"negative emission coefficient for {p}")

    @classmethod
    def from_dict(cls, raw: Mapping[str, Mapping]) -> "EmissionFactors":
        kw = {}
        for p in POLLUTANTS:
            if p in raw:
                r = raw[p]
                kw[p] = Factor(float(r.get("per_km", 0)), float(r.get("per_idle_s", 0)),
                               float(r.get("per_stop", 0)), str(r.get("unit", "")))
        return cls(**kw)


@dataclass(frozen=True)
class SimMetrics:
    D: float = 0.0  # total delay, veh*s
    D_a: float = 0.0  # mean delay per departed vehicle, s
    D_s: float = 0.0  # stopped delay, veh*s
    C_s: float = 0.0  # stops per vehicle
    vkt: float = 0.0
    idle_time: float = 0.0  # veh*s
    stops: int = 0
    arrivals: int = 0
    departures: int = 0
    access_delay: Mapping[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        d = asdict(self)
        d.pop("access_delay")
        return d


@dataclass(frozen=True)
class EmissionReport:
    E_CO2: float = 0.0
    E_NOx: float = 0.0
    E_VOC: float = 0.0
    E_f: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class SimResult:
    metrics: SimMetrics
    intervals: tuple[SimMetrics, ...]


def estimate_emissions(m: SimMetrics, f: EmissionFactors = EmissionFactors()) -> EmissionReport:
    """E_p = per_km * vkt + per_idle_s * idle_time + per_stop * stops."""
    vals = []
    for p in POLLUTANTS:
        c = getattr(f, p)
        vals.append(c.per_km * m.vkt + c.per_idle_s * m.idle_time + c.per_stop * m.stops)
    return EmissionReport(*vals)


class _Group:
    __slots__ = ("link", "rate", "queue", "credit", "inter", "phase", "cap")

    def __init__(self, link: int, rate: float, inter: int, phase: int):
        self.link = link
        self.rate = rate  # vehicles per step at saturation
        self.queue: deque[int] = deque()
        self.credit = 0.0
        self.inter = inter  # -1 for boundary exits
        self.phase = phase
        self.cap = max(rate, 1.0)


class SimState:
    """Mutable simulation state; advance it with :func:`step`."""

    def __init__(self, net: Network, plan: ControlPlan, schedule: Schedule, cfg: SimConfig):
        self.cfg = cfg
        self.schedule = schedule
        self.net = net
        dt = cfg.dt
        if abs(schedule.dt - dt) > 1e-12:
            raise ScheduleMismatch(f"schedule dt {schedule.dt} differs from sim dt {dt}")
        horizon = cfg.horizon if cfg.horizon is not None else schedule.steps * dt
        self.n_steps = int(round(horizon / dt))
        self.k = 0

        links = list(net.links)
        self.link_index = {link.id: i for i, link in enumerate(links)}
        self.link_len = [link.length for link in links]
        self.link_ft = [int(round(link.free_flow_time / dt)) for link in links]
        self.accel_steps = int(round(cfg.accel_loss / dt))
        lanes = [net.effective_lanes(link.id) for link in links]
        if cfg.jam_spacing:
            self.storage = [max(1, int(lanes[i] * links[i].length / cfg.jam_spacing)) if lanes[i] else 0
                            for i in range(len(links))]
        else:
            self.storage = None
        self.occupancy = [0] * len(links)
        self.closed = [n == 0 for n in lanes]

        inters = list(net.intersections)
        phase_index = {}
        for ii, x in enumerate(inters):
            for pi, p in enumerate(x.phases):
                phase_index[(x.id, p.id)] = (ii, pi)

        # lane groups
        self.groups: list[_Group] = []
        group_key: dict[tuple, int] = {}
        self.group_of: dict[tuple[int, int], int] = {}  # (link, next link or -1) -> group
        for (in_id, out_id), (xid, pid) in sorted(net.phase_of_movement.items()):
            li = self.link_index[in_id]
            key = (li, xid, pid)
            if key not in group_key:
                ii, pi = phase_index[(xid, pid)]
                rate = saturation_flow(net, in_id) * dt / 3600.0
                group_key[key] = len(self.groups)
                self.groups.append(_Group(li, rate, ii, pi))
            self.group_of[(li, self.link_index[out_id])] = group_key[key]
        for li, link in enumerate(links):
            if link.to_node in net.boundaries:
                rate = saturation_flow(net, link.id) * dt / 3600.0
                self.group_of[(li, -1)] = len(self.groups)
                self.groups.append(_Group(li, rate, -1, -1))

        # phase active at each step, per intersection (-1 = intergreen)
        self.active = np.full((len(inters), self.n_steps), -1, dtype=np.int64)
        t = np.arange(self.n_steps) * dt
        for ii, x in enumerate(inters):
            timing = plan.signal[x.id]
            tau = np.mod(t - timing.offset, timing.cycle)
            inter_green = x.lost_time / len(x.phases)
            start = 0.0
            for pi, p in enumerate(x.phases):
                g = timing.greens[p.id]
                self.active[ii, (tau >= start - 1e-9) & (tau < start + g - 1e-9)] = pi
                start += g + inter_green

        # routes per access, as link indices
        self.access_ids = list(schedule.counts)
        self.routes = [tuple(self.link_index[l] for l in schedule.routes[a]) for a in self.access_ids]
        self.counts = [np.asarray(schedule.counts[a]) for a in self.access_ids]

        # vehicle records
        self.v_acc: list[int] = []
        self.v_pos: list[int] = []
        self.v_inj: list[int] = []
        self.v_join: list[int] = []
        self.v_delay: list[float] = []
        self.v_stopped: list[float] = []
        self.v_stops: list[int] = []
        self.v_dist: list[float] = []
        self.v_done: list[int] = []  # departure step or -1
        self.pending: dict[int, list[int]] = {}  # step -> vehicles reaching a stop line
        self.injected = 0
        self.departed = 0
        self.trace: list[tuple[int, int, int, int]] | None = None  # (group, vehicle, joined, left)

    @property
    def clock(self) -> float:
        return self.k * self.cfg.dt

    def in_network(self) -> int:
        return sum(len(v) for v in self.pending.values()) + sum(len(g.queue) for g in self.groups)

    def queue_delay(self) -> float:
        """Waiting time accrued so far by vehicles still standing in a queue."""
        return sum((self.k - self.v_join[v]) * self.cfg.dt for g in self.groups for v in g.queue)

    def _enter(self, vid: int, link: int, k: int, extra: int = 0) -> None:
        ready = k + self.link_ft[link] + extra
        self.pending.setdefault(ready, []).append(vid)
        self.occupancy[link] += 1

    def step(self) -> "SimState":
        k = self.k
        dt = self.cfg.dt
        if k >= self.n_steps:
            return self
        # inject
        if self.counts and k < len(self.counts[0]):
            for ai, arr in enumerate(self.counts):
                n = int(arr[k])
                route = self.routes[ai]
                for _ in range(n):
                    vid = len(self.v_acc)
                    self.v_acc.append(ai)
                    self.v_pos.append(0)
                    self.v_inj.append(k)
                    self.v_join.append(-1)
                    self.v_delay.append(0.0)
                    self.v_stopped.append(0.0)
                    self.v_stops.append(0)
                    self.v_dist.append(0.0)
                    self.v_done.append(-1)
                    self._enter(vid, route[0], k)
                    self.injected += 1
        # arrivals at stop lines
        ready = self.pending.pop(k, None)
        if ready:
            for vid in ready:
                route = self.routes[self.v_acc[vid]]
                pos = self.v_pos[vid]
                nxt = route[pos + 1] if pos + 1 < len(route) else -1
                self.v_join[vid] = k
                self.groups[self.group_of[(route[pos], nxt)]].queue.append(vid)
        # discharge
        active = self.active[:, k]
        accel = self.accel_steps
        for gi, g in enumerate(self.groups):
            if g.inter >= 0 and active[g.inter] != g.phase:
                g.credit = 0.0
                continue
            q = g.queue
            if not q:
                g.credit = g.cap if g.credit + g.rate > g.cap else g.credit + g.rate
                continue
            g.credit += g.rate
            n = min(int(g.credit + 1e-9), len(q))
            released = 0
            while released < n:
                vid = q[0]
                route = self.routes[self.v_acc[vid]]
                pos = self.v_pos[vid]
                nxt = route[pos + 1] if pos + 1 < len(route) else -1
                if nxt >= 0 and (self.closed[nxt] or (
                        self.storage is not None and self.occupancy[nxt] >= self.storage[nxt])):
                    break
                q.popleft()
                released += 1
                joined = self.v_join[vid]
                wait = k - joined
                extra = 0
                if wait > 0:
                    self.v_stopped[vid] += wait * dt
                    self.v_stops[vid] += 1
                    self.v_delay[vid] += wait * dt + accel * dt
                    extra = accel
                link = route[pos]
                self.occupancy[link] -= 1
                self.v_dist[vid] += self.link_len[link]
                if self.trace is not None:
                    self.trace.append((gi, vid, joined, k))
                if nxt < 0:
                    self.v_done[vid] = k
                    self.departed += 1
                else:
                    self.v_pos[vid] = pos + 1
                    self._enter(vid, nxt, k, extra)
            g.credit -= released
            if not q and g.credit > g.cap:
                g.credit = g.cap
        self.k = k + 1
        return self

    def result(self) -> SimResult:
        cfg = self.cfg
        dt = cfg.dt
        k_end = self.k
        warm = int(round(cfg.warmup / dt))
        width = max(1, int(round(cfg.interval / dt)))
        n_int = max(1, math.ceil(max(k_end - warm, 1) / width))
        queued = set()
        for g in self.groups:
            queued.update(g.queue)

        tot = np.zeros((n_int, 6))  # delay, stopped, stops, dist, arrivals, departures
        acc_delay = {a: [0.0, 0] for a in self.access_ids}
        for vid in range(len(self.v_acc)):
            inj = self.v_inj[vid]
            if inj < warm:
                continue
            delay = self.v_delay[vid]
            stopped = self.v_stopped[vid]
            stops = self.v_stops[vid]
            if vid in queued:
                wait = k_end - self.v_join[vid]
                if wait > 0:
                    delay += wait * dt
                    stopped += wait * dt
                    stops += 1
            done = self.v_done[vid] >= 0
            row = tot[min((inj - warm) // width, n_int - 1)]
            row[0] += delay
            row[1] += stopped
            row[2] += stops
            row[3] += self.v_dist[vid]
            row[4] += 1
            row[5] += done
            if done:
                rec = acc_delay[self.access_ids[self.v_acc[vid]]]
                rec[0] += delay
                rec[1] += 1

        access_delay = {a: (d / n if n else 0.0) for a, (d, n) in acc_delay.items()}
        total = _metrics(tot.sum(axis=0), access_delay)
        intervals = tuple(_metrics(r, {}) for r in tot)
        return SimResult(total, intervals)


def _metrics(row: np.ndarray, access_delay: Mapping[str, float]) -> SimMetrics:
    delay, stopped, stops, dist, arrivals, departures = (float(x) for x in row)
    return SimMetrics(
        D=delay,
        D_a=delay / departures if departures > 0 else 0.0,
        D_s=stopped,
        C_s=stops / arrivals if arrivals > 0 else 0.0,
        vkt=dist / 1000.0,
        idle_time=stopped,
        stops=int(stops),
        arrivals=int(arrivals),
        departures=int(departures),
        access_delay=access_delay,
    )


def init(net: Network, plan: ControlPlan, schedule: Schedule, cfg: SimConfig = SimConfig()) -> SimState:
    """Empty state at clock 0 with signals positioned by the plan offsets."""
    if schedule.network_version is not None and schedule.network_version != net.version:
        raise ScheduleMismatch(
            f"schedule built for network version {schedule.network_version}, got {net.version}")
    report = check_plan_feasibility(plan, net)
    if not report.ok:
        raise InfeasiblePlan("; ".join(str(v) for v in report))
    try:
        loaded = apply_lane_allocation(net, plan.lanes) if plan.lanes.assignments else net
    except (UnknownPool, AllocationOutOfRange) as exc:
        raise InfeasiblePlan(str(exc)) from exc
    return SimState(loaded, plan, schedule, cfg)


def step(state: SimState) -> SimState:
    return state.step()


def run_detailed(net: Network, plan: ControlPlan, schedule: Schedule,
                 cfg: SimConfig = SimConfig()) -> SimResult:
    state = init(net, plan, schedule, cfg)
    for _ in range(state.n_steps):
        state.step()
    return state.result()


def run(net: Network, plan: ControlPlan, schedule: Schedule, cfg: SimConfig = SimConfig()) -> SimMetrics:
    return run_detailed(net, plan, schedule, cfg).metrics


METRIC_COLUMNS = tuple(f.name for f in fields(SimMetrics) if f.name != "access_delay")


def metrics_csv(rows: Sequence[tuple[SimMetrics, EmissionReport]], extra: Sequence[Mapping] = ()) -> str:
    """One CSV row per run; column order is fixed."""
    buf = io.StringIO()
    extra_cols = list(extra[0].keys()) if extra else []
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(extra_cols + list(METRIC_COLUMNS) + list(EMISSION_FIELDS))
    for i, (m, e) in enumerate(rows):
        ex = [extra[i][c] for c in extra_cols] if extra else []
        md = m.as_dict()
        writer.writerow(ex + [_fmt(md[c]) for c in METRIC_COLUMNS] + [_fmt(getattr(e, c)) for c in EMISSION_FIELDS])
    return buf.getvalue()


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)
