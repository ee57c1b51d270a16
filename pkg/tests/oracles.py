"""Independent reference computations.

Each oracle re-derives a value from first principles with plain loops (or a
different numerical route) so the package is never checked against itself.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from tidalflow.evaluate import EvalContext
from tidalflow.network import ControlPlan, LaneAllocation, Timing

SAATY_RI_3 = 0.58


def ahp_oracle(rows):
    n = len(rows)
    prods = []
    for row in rows:
        p = 1.0
        for v in row:
            p *= v
        prods.append(p ** (1.0 / n))
    total = sum(prods)
    return [p / total for p in prods]


def cr_oracle_3x3(rows):
    """CR from the eigenvalues computed by LAPACK rather than power iteration."""
    lam = max(np.linalg.eigvals(np.asarray(rows, dtype=float)).real)
    return (lam - 3) / 2 / SAATY_RI_3


def entropy_oracle(table, directions):
    n = len(table)
    m = len(table[0])
    d = []
    for j in range(m):
        col = [table[i][j] for i in range(n)]
        hi, lo = max(col), min(col)
        if hi == lo:
            d.append(0.0)
            continue
        if directions[j] == "cost":
            norm = [(hi - v) / (hi - lo) for v in col]
        else:
            norm = [(v - lo) / (hi - lo) for v in col]
        s = sum(norm)
        e = 0.0
        for v in norm:
            p = v / s
            if p > 0:
                e -= p * math.log(p)
        d.append(1.0 - e / math.log(n))
    total = sum(d)
    return [x / total for x in d]


def webster_oracle(q, lam, s, cycle, variant):
    x = q / (lam * s)
    if variant == "as_printed":
        first = cycle * (1 + lam) / (2 * (1 - lam * x))
    else:
        first = cycle * (1 - lam) ** 2 / (2 * (1 - lam * x))
    second = x * x / (2 * (lam * s) * (1 - x))
    return first + second


def grid_search(ctx: EvalContext, inter_id: str, step: float = 1.0):
    """Exhaustive search over cycle and first-phase green (``step`` s grid) and every lane grant.

    Only for a single intersection with two phases. Returns ``(best fitness, plan)``.
    """
    net = ctx.net
    inter = net.intersection(inter_id)
    (p1, p2) = inter.phases
    L = inter.lost_time
    lo = max(ctx.cycle_bounds[0], L + p1.min_green + p2.min_green)
    hi = ctx.cycle_bounds[1]
    pools = [p.id for p in net.pools]
    ranges = [range(net.pool_size(p) + 1) for p in net.pools]
    best = (math.inf, None)
    for grants in itertools.product(*ranges):
        alloc = LaneAllocation(dict(zip(pools, grants)))
        cycle = lo
        while cycle <= hi + 1e-9:
            t1 = p1.min_green
            while t1 <= cycle - L - p2.min_green + 1e-9:
                t2 = cycle - L - t1
                plan = ControlPlan({inter_id: Timing(cycle, {p1.id: t1, p2.id: t2})}, alloc)
                try:
                    f = ctx.fitness(plan)
                except Exception:  # infeasible lane split
                    f = math.inf
                if f < best[0]:
                    best = (f, plan)
                t1 += step
            cycle += step
    return best
