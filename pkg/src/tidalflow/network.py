"""Road network, signal phases and reversible-lane pools.

All values here are immutable. Changing the lane split goes through
:func:`apply_lane_allocation`, which returns a new :class:`Network` with a
bumped ``version``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterator, Mapping

from .errors import (
    AllocationOutOfRange,
    SearchSpaceTooLarge,
    UnknownPool,
    ZeroSaturationFlow,
)

DEFAULT_SATURATION_FLOW = 1800.0
ENUMERATION_CAP = 10**6


@dataclass(frozen=True)
class Link:
    id: str
    from_node: str
    to_node: str
    length: float  # m
    lanes_total: int  # lanes in this direction under the balanced split
    reversible_lanes: int = 0  # size of the shared pool (0 when not reversible)
    per_lane_saturation_flow: float = DEFAULT_SATURATION_FLOW  # veh/h/lane
    free_flow_speed: float = 50.0  # km/h
    paired_link: str | None = None
    name: str = ""

    @property
    def free_flow_time(self) -> float:
        """Seconds to traverse the link at free-flow speed."""
        return self.length / (self.free_flow_speed / 3.6)


@dataclass(frozen=True)
class ReversiblePool:
    """Lanes shared by a link pair; ``grant`` lanes go to ``forward``.

    ``baseline_grant`` is the grant that reproduces each link's
    ``lanes_total``. Directions listed in ``closable`` may drop to zero lanes
    (one-way conversion); every other direction keeps at least one.
    """

    id: str
    forward: str
    reverse: str
    baseline_grant: int
    closable: tuple[str, ...] = ()


@dataclass(frozen=True)
class Phase:
    id: str
    movements: tuple[tuple[str, str], ...]
    min_green: float = 0.0


@dataclass(frozen=True)
class Intersection:
    id: str
    phases: tuple[Phase, ...]
    lost_time: float = 0.0
    name: str = ""

    @property
    def min_green_total(self) -> float:
        return sum(p.min_green for p in self.phases)

    def phase_ids(self) -> list[str]:
        return [p.id for p in self.phases]


@dataclass(frozen=True)
class LaneAllocation:
    """Pool id -> lanes granted to the pool's forward link."""

    assignments: Mapping[str, int] = field(default_factory=dict)

    def get(self, pool_id: str, default: int) -> int:
        return int(self.assignments.get(pool_id, default))

    def key(self) -> tuple[tuple[str, int], ...]:
        return tuple(sorted((k, int(v)) for k, v in self.assignments.items()))


@dataclass(frozen=True)
class Timing:
    """Signal timing of one intersection: cycle length, phase greens, offset."""

    cycle: float
    greens: Mapping[str, float]
    offset: float = 0.0


@dataclass(frozen=True)
class ControlPlan:
    signal: Mapping[str, Timing]
    lanes: LaneAllocation = field(default_factory=LaneAllocation)


@dataclass(frozen=True)
class Violation:
    entity: str
    message: str

    def __str__(self) -> str:
        return f"{self.entity}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, entity: str, message: str) -> None:
        self.violations.append(Violation(entity, message))

    def extend(self, other: "ValidationReport") -> None:
        self.violations.extend(other.violations)

    def __iter__(self) -> Iterator[Violation]:
        return iter(self.violations)

    def __len__(self) -> int:
        return len(self.violations)


@dataclass(frozen=True)
class Network:
    intersections: tuple[Intersection, ...]
    links: tuple[Link, ...]
    boundaries: tuple[str, ...] = ()
    accesses: Mapping[str, str] = field(default_factory=dict)  # access id -> boundary node
    pools: tuple[ReversiblePool, ...] = ()
    allocation: LaneAllocation = field(default_factory=LaneAllocation)
    version: int = 0

    @cached_property
    def link_map(self) -> dict[str, Link]:
        return {link.id: link for link in self.links}

    @cached_property
    def intersection_map(self) -> dict[str, Intersection]:
        return {i.id: i for i in self.intersections}

    @cached_property
    def pool_map(self) -> dict[str, ReversiblePool]:
        return {p.id: p for p in self.pools}

    @cached_property
    def pool_of_link(self) -> dict[str, ReversiblePool]:
        out = {}
        for pool in self.pools:
            out[pool.forward] = pool
            out[pool.reverse] = pool
        return out

    @cached_property
    def phase_of_movement(self) -> dict[tuple[str, str], tuple[str, str]]:
        """(in_link, out_link) -> (intersection id, phase id)."""
        out = {}
        for inter in self.intersections:
            for phase in inter.phases:
                for mv in phase.movements:
                    out[tuple(mv)] = (inter.id, phase.id)
        return out

    def link(self, link_id: str) -> Link:
        return self.link_map[link_id]

    def intersection(self, inter_id: str) -> Intersection:
        return self.intersection_map[inter_id]

    def pool_size(self, pool: ReversiblePool) -> int:
        return self.link_map[pool.forward].reversible_lanes

    def fixed_lanes(self, link_id: str) -> int:
        """Lanes of ``link_id`` that never change direction."""
        link = self.link_map[link_id]
        pool = self.pool_of_link.get(link_id)
        if pool is None:
            return link.lanes_total
        size = self.pool_size(pool)
        if link_id == pool.forward:
            return link.lanes_total - pool.baseline_grant
        return link.lanes_total - (size - pool.baseline_grant)

    def effective_lanes(self, link_id: str, alloc: LaneAllocation | None = None) -> int:
        """Lanes serving ``link_id`` under ``alloc`` (default: the network's own split)."""
        alloc = self.allocation if alloc is None else alloc
        pool = self.pool_of_link.get(link_id)
        if pool is None:
            return self.link_map[link_id].lanes_total
        grant = alloc.get(pool.id, self.allocation.get(pool.id, pool.baseline_grant))
        if link_id == pool.forward:
            return self.fixed_lanes(link_id) + grant
        return self.fixed_lanes(link_id) + self.pool_size(pool) - grant

    def current_grants(self) -> dict[str, int]:
        return {p.id: self.allocation.get(p.id, p.baseline_grant) for p in self.pools}

    def inbound_links(self, inter_id: str) -> list[Link]:
        return [link for link in self.links if link.to_node == inter_id]

    def pools_touching(self, inter_id: str) -> list[ReversiblePool]:
        out = []
        for pool in self.pools:
            ends = set()
            for lid in (pool.forward, pool.reverse):
                link = self.link_map[lid]
                ends.update((link.from_node, link.to_node))
            if inter_id in ends:
                out.append(pool)
        return out


def validate_network(net: Network) -> ValidationReport:
    """Collect every structural violation; never raises."""
    report = ValidationReport()

    seen: set[str] = set()
    for link in net.links:
        if link.id in seen:
            report.add(link.id, "duplicate link id")
        seen.add(link.id)
    seen = set()
    for inter in net.intersections:
        if inter.id in seen:
            report.add(inter.id, "duplicate intersection id")
        seen.add(inter.id)

    nodes = set(net.intersection_map) | set(net.boundaries)
    links = net.link_map
    for link in net.links:
        for end in (link.from_node, link.to_node):
            if end not in nodes:
                report.add(link.id, f"references unknown node {end!r}")
        if not link.length > 0:
            report.add(link.id, "length must be > 0")
        if link.lanes_total < 1:
            report.add(link.id, "lanes_total must be >= 1")
        if link.reversible_lanes < 0:
            report.add(link.id, "reversible_lanes must be >= 0")
        if link.reversible_lanes > link.lanes_total:
            report.add(
                link.id,
                f"reversible_lanes {link.reversible_lanes} exceeds lanes_total {link.lanes_total}",
            )
        if not link.per_lane_saturation_flow > 0:
            report.add(link.id, "per_lane_saturation_flow must be > 0")
        if not link.free_flow_speed > 0:
            report.add(link.id, "free_flow_speed must be > 0")
        if link.paired_link is not None:
            other = links.get(link.paired_link)
            if other is None:
                report.add(link.id, f"paired_link {link.paired_link!r} does not exist")
            elif other.paired_link != link.id:
                report.add(link.id, f"pairing with {other.id!r} is not symmetric")
            elif other.reversible_lanes != link.reversible_lanes:
                report.add(link.id, f"reversible pool size differs from {other.id!r}")

    seen = set()
    for pool in net.pools:
        if pool.id in seen:
            report.add(pool.id, "duplicate pool id")
        seen.add(pool.id)
        fwd, rev = links.get(pool.forward), links.get(pool.reverse)
        if fwd is None or rev is None:
            report.add(pool.id, "pool references unknown link")
            continue
        if fwd.paired_link != rev.id or rev.paired_link != fwd.id:
            report.add(pool.id, f"links {fwd.id!r} and {rev.id!r} are not declared as a pair")
        size = fwd.reversible_lanes
        if size < 1:
            report.add(pool.id, "pool size must be >= 1")
        if not 0 <= pool.baseline_grant <= size:
            report.add(pool.id, f"baseline_grant {pool.baseline_grant} outside [0, {size}]")
        if fwd.lanes_total - pool.baseline_grant < 0 or rev.lanes_total - (size - pool.baseline_grant) < 0:
            report.add(pool.id, "baseline split leaves negative fixed lanes")
        for lid in pool.closable:
            if lid not in (pool.forward, pool.reverse):
                report.add(pool.id, f"closable link {lid!r} is not a pool member")

    for inter in net.intersections:
        if inter.lost_time < 0:
            report.add(inter.id, "lost_time must be >= 0")
        if not inter.phases:
            report.add(inter.id, "intersection has no phases")
        served: dict[tuple[str, str], str] = {}
        for phase in inter.phases:
            if not phase.movements:
                report.add(f"{inter.id}/{phase.id}", "phase has no movements")
            if phase.min_green < 0:
                report.add(f"{inter.id}/{phase.id}", "min_green must be >= 0")
            for in_id, out_id in phase.movements:
                mv = (in_id, out_id)
                if mv in served:
                    report.add(
                        f"{inter.id}/{phase.id}",
                        f"movement {in_id}->{out_id} already served by phase {served[mv]}",
                    )
                served[mv] = phase.id
                if in_id not in links or links[in_id].to_node != inter.id:
                    report.add(f"{inter.id}/{phase.id}", f"movement in_link {in_id!r} does not enter {inter.id}")
                if out_id not in links or links[out_id].from_node != inter.id:
                    report.add(f"{inter.id}/{phase.id}", f"movement out_link {out_id!r} does not leave {inter.id}")
        referenced = {mv[0] for mv in served}
        for link in net.links:
            if link.to_node == inter.id and link.id not in referenced:
                report.add(link.id, f"approach to {inter.id} is not served by any phase")

    for access, node in net.accesses.items():
        if node not in net.boundaries:
            report.add(f"access {access}", f"node {node!r} is not a boundary point")

    report.extend(check_allocation(net, net.allocation))
    return report


def check_allocation(net: Network, alloc: LaneAllocation) -> ValidationReport:
    report = ValidationReport()
    for pool_id, grant in alloc.assignments.items():
        pool = net.pool_map.get(pool_id)
        if pool is None:
            report.add(pool_id, "unknown reversible pool")
            continue
        if pool.forward not in net.link_map or pool.reverse not in net.link_map:
            continue
        size = net.pool_size(pool)
        if not 0 <= grant <= size:
            report.add(pool_id, f"grant {grant} outside [0, {size}]")
            continue
        for lid in (pool.forward, pool.reverse):
            lanes = net.effective_lanes(lid, alloc)
            if lanes < 0:
                report.add(pool_id, f"{lid} would have {lanes} lanes")
            elif lanes == 0 and lid not in pool.closable:
                report.add(pool_id, f"{lid} would be closed but is not closable")
    return report


def apply_lane_allocation(net: Network, alloc: LaneAllocation) -> Network:
    """Return a copy of ``net`` carrying ``alloc`` merged over its current split."""
    for pool_id, grant in alloc.assignments.items():
        if pool_id not in net.pool_map:
            raise UnknownPool(pool_id)
    report = check_allocation(net, alloc)
    if not report.ok:
        raise AllocationOutOfRange("; ".join(str(v) for v in report))
    merged = dict(net.current_grants())
    merged.update({k: int(v) for k, v in alloc.assignments.items()})
    return replace(net, allocation=LaneAllocation(merged), version=net.version + 1)


def saturation_flow(net: Network, link_id: str, alloc: LaneAllocation | None = None) -> float:
    """Effective lanes times per-lane saturation flow, veh/h."""
    link = net.link(link_id)
    return net.effective_lanes(link_id, alloc) * link.per_lane_saturation_flow


def flow_ratio(q: float, s: float) -> float:
    if s == 0:
        raise ZeroSaturationFlow("saturation flow is zero")
    return q / s


def pool_grant_range(net: Network, pool: ReversiblePool) -> list[int]:
    """Grants for one pool that keep both directions admissible."""
    out = []
    for grant in range(net.pool_size(pool) + 1):
        if check_allocation(net, LaneAllocation({pool.id: grant})).ok:
            out.append(grant)
    return out


def enumerate_allocations(net: Network, cap: int = ENUMERATION_CAP) -> list[LaneAllocation]:
    """Every feasible lane allocation, pools in declaration order."""
    sizes = [net.pool_size(p) + 1 for p in net.pools]
    if math.prod(sizes) > cap:
        raise SearchSpaceTooLarge(f"{math.prod(sizes)} allocations exceed cap {cap}")
    choices = [pool_grant_range(net, p) for p in net.pools]
    ids = [p.id for p in net.pools]
    return [LaneAllocation(dict(zip(ids, combo))) for combo in itertools.product(*choices)]
