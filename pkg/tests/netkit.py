"""Small hand-built networks shared by the tests."""

from __future__ import annotations

from tidalflow.demand import AccessFlow, DemandProfile, Period
from tidalflow.evaluate import EvalContext, Weights, equal_weights
from tidalflow.network import Intersection, Link, Network, Phase, ReversiblePool

HOUR = Period("peak", 0.0, 3600.0)


def cross(min_green: float = 5.0, lost_time: float = 10.0, pool: bool = True, sat: float = 1800.0,
          lanes: int = 3, length: float = 300.0, side_lanes: int = 2) -> Network:
    """One intersection X with W/E/N/S arms; optional reversible pool on the west arm."""
    links = [
        Link("W_in", "W", "X", length, lanes, 2 if pool else 0, sat, 50.0, "W_out" if pool else None),
        Link("W_out", "X", "W", length, lanes, 2 if pool else 0, sat, 50.0, "W_in" if pool else None),
        Link("E_in", "E", "X", length, lanes, 0, sat, 50.0),
        Link("E_out", "X", "E", length, lanes, 0, sat, 50.0),
        Link("N_in", "N", "X", length, side_lanes, 0, sat, 50.0),
        Link("S_out", "X", "S", length, side_lanes, 0, sat, 50.0),
    ]
    phases = (
        Phase("EW", (("W_in", "E_out"), ("E_in", "W_out")), min_green),
        Phase("NS", (("N_in", "S_out"),), min_green),
    )
    pools = (ReversiblePool("west", "W_in", "W_out", 1),) if pool else ()
    return Network((Intersection("X", phases, lost_time),), tuple(links), ("W", "E", "N", "S"),
                   {"w": "W", "e": "E", "n": "N"}, pools)


def cross_demand(w: float = 1500.0, e: float = 300.0, n: float = 500.0,
                 period: Period = HOUR) -> DemandProfile:
    return DemandProfile((
        AccessFlow("w", {period.name: w}, ("W_in", "E_out")),
        AccessFlow("e", {period.name: e}, ("E_in", "W_out")),
        AccessFlow("n", {period.name: n}, ("N_in", "S_out")),
    ), (period,))


def cross_context(net: Network | None = None, profile: DemandProfile | None = None,
                  weights: Weights | None = None, **kw) -> EvalContext:
    ctx = EvalContext(net or cross(), profile or cross_demand(), HOUR, weights or equal_weights(), **kw)
    ctx.calibrate()
    return ctx
