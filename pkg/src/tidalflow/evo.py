"""Real-coded genetic algorithm over joint signal timing and lane allocation.

Genes per intersection are ``[cycle, share_1 .. share_p, offset]``; each
reversible pool adds one integer gene holding the forward grant. Decoding
projects shares onto greens that satisfy the green-sum constraint exactly,
so every chromosome maps to a feasible plan and penalties are reserved for
oversaturation.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeMismatch
from .evaluate import EvalContext, webster_plan
from .network import ControlPlan, LaneAllocation, Network, Timing, pool_grant_range

THREADS_ENV = "TIDALFLOW_THREADS"


@dataclass(frozen=True)
class GAConfig:
    population_size: int = 50
    generations: int = 100
    tournament_size: int = 3
    crossover_rate: float = 0.9
    blend_alpha: float = 0.5
    mutation_rate: float = 0.1
    mutation_scale: float = 0.1  # Gaussian sigma as a fraction of gene range
    elitism: int = 2
    seed: int = 0
    evaluator: str = "webster_analytic"
    oversaturation_penalty: float = 1e3
    seeded_fraction: float = 0.5

    def __post_init__(self):
        for name in ("crossover_rate", "mutation_rate", "seeded_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.generations < 0 or self.tournament_size < 1 or self.elitism < 0:
            raise ValueError("generations, tournament_size and elitism must be non-negative")


@dataclass(frozen=True)
class Chromosome:
    real: np.ndarray
    lanes: np.ndarray

    def key(self) -> bytes:
        return self.real.tobytes() + b"|" + self.lanes.tobytes()


@dataclass
class Individual:
    chromosome: Chromosome
    fitness: float


@dataclass(frozen=True)
class Layout:
    """Gene positions and bounds derived from a network."""

    inter_ids: tuple[str, ...]
    slices: tuple[slice, ...]  # per intersection, within ``real``
    lower: np.ndarray
    upper: np.ndarray
    pool_ids: tuple[str, ...]
    lane_lower: np.ndarray
    lane_upper: np.ndarray
    cycle_max: float

    @classmethod
    def build(cls, net: Network, cycle_bounds: tuple[float, float]) -> "Layout":
        c_min, c_max = cycle_bounds
        lower, upper, slices = [], [], []
        for x in net.intersections:
            start = len(lower)
            lo_c = max(c_min, x.lost_time + x.min_green_total)
            hi_c = max(c_max, lo_c)
            lower.append(lo_c)
            upper.append(hi_c)
            lower.extend([0.0] * len(x.phases))
            upper.extend([1.0] * len(x.phases))
            lower.append(0.0)
            upper.append(hi_c)
            slices.append(slice(start, len(lower)))
        lane_lo, lane_hi = [], []
        for pool in net.pools:
            grants = pool_grant_range(net, pool)
            lane_lo.append(min(grants))
            lane_hi.append(max(grants))
        return cls(
            tuple(x.id for x in net.intersections), tuple(slices),
            np.asarray(lower, float), np.asarray(upper, float),
            tuple(p.id for p in net.pools),
            np.asarray(lane_lo, np.int64), np.asarray(lane_hi, np.int64),
            float(max(upper) if upper else c_max),
        )

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower


def _check_shape(ch: Chromosome, layout: Layout) -> None:
    if ch.real.shape != layout.lower.shape or ch.lanes.shape != layout.lane_lower.shape:
        raise ShapeMismatch(
            f"chromosome has {ch.real.size}+{ch.lanes.size} genes, network needs "
            f"{layout.lower.size}+{layout.lane_lower.size}")


def wrap_offset(value: float, period: float) -> float:
    """``value mod period`` in ``[0, period)``; float rounding can otherwise land on ``period``."""
    if period <= 0:
        return 0.0
    out = float(np.mod(value, period))
    return 0.0 if out >= period else out


def repair(ch: Chromosome, net: Network, layout: Layout) -> Chromosome:
    """Project genes into bounds. Idempotent."""
    _check_shape(ch, layout)
    real = ch.real.astype(float).copy()
    for sl in layout.slices:
        lo, hi = layout.lower[sl], layout.upper[sl]
        body = real[sl]
        body[0] = min(max(body[0], lo[0]), hi[0])
        body[1:-1] = np.clip(body[1:-1], 0.0, 1.0)
        if not 0.0 <= body[-1] < hi[-1]:
            body[-1] = wrap_offset(body[-1], hi[-1])
        real[sl] = body
    lanes = np.clip(ch.lanes.astype(np.int64), layout.lane_lower, layout.lane_upper)
    return Chromosome(real, lanes)


def decode(ch: Chromosome, net: Network, layout: Layout) -> ControlPlan:
    """Map genes to a plan; greens are min_green plus a share of the spare time."""
    _check_shape(ch, layout)
    signal = {}
    for x, sl in zip(net.intersections, layout.slices):
        body = ch.real[sl]
        cycle = float(body[0])
        shares = np.maximum(body[1:-1], 0.0)
        spare = cycle - x.lost_time - x.min_green_total
        total = float(shares.sum())
        if total <= 0:
            frac = np.full(len(shares), 1.0 / len(shares))
        else:
            frac = shares / total
        greens = {p.id: p.min_green + spare * float(f) for p, f in zip(x.phases, frac)}
        # absorb rounding so the green sum is exact
        last = x.phases[-1].id
        greens[last] = cycle - x.lost_time - sum(v for k, v in greens.items() if k != last)
        signal[x.id] = Timing(cycle, greens, wrap_offset(body[-1], cycle))
    lanes = LaneAllocation({pid: int(g) for pid, g in zip(layout.pool_ids, ch.lanes)})
    return ControlPlan(signal, lanes)


def encode(plan: ControlPlan, net: Network, layout: Layout) -> Chromosome:
    """Inverse of :func:`decode` for feasible plans (up to share scaling)."""
    real = np.zeros_like(layout.lower)
    for x, sl in zip(net.intersections, layout.slices):
        t = plan.signal[x.id]
        spare = t.cycle - x.lost_time - x.min_green_total
        shares = [(t.greens[p.id] - p.min_green) / spare if spare > 0 else 1.0 for p in x.phases]
        real[sl] = [t.cycle, *shares, t.offset]
    lanes = np.asarray([plan.lanes.get(pid, net.pool_map[pid].baseline_grant) for pid in layout.pool_ids],
                       dtype=np.int64)
    return Chromosome(real, lanes)


def fitness(ch: Chromosome, ctx: EvalContext, layout: Layout | None = None) -> float:
    layout = layout or Layout.build(ctx.net, ctx.cycle_bounds)
    return ctx.fitness(decode(ch, ctx.net, layout))


def _threads() -> int:
    try:
        return max(0, int(os.environ.get(THREADS_ENV, "0")))
    except ValueError:
        return 0


class Evaluator:
    """Cached, optionally threaded fitness evaluation with index-ordered results."""

    def __init__(self, ctx: EvalContext, layout: Layout):
        self.ctx = ctx
        self.layout = layout
        self.cache: dict[bytes, float] = {}
        self.calls = 0

    def _one(self, ch: Chromosome) -> float:
        return self.ctx.fitness(decode(ch, self.ctx.net, self.layout))

    def __call__(self, chromosomes: Sequence[Chromosome]) -> list[float]:
        todo = []
        for ch in chromosomes:
            k = ch.key()
            if k not in self.cache and k not in {c.key() for c in todo}:
                todo.append(ch)
        threads = _threads()
        if threads > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                values = list(pool.map(self._one, todo))
        else:
            values = [self._one(ch) for ch in todo]
        self.calls += len(todo)
        for ch, v in zip(todo, values):
            self.cache[ch.key()] = v
        return [self.cache[ch.key()] for ch in chromosomes]


def random_chromosome(layout: Layout, rng: np.random.Generator) -> Chromosome:
    real = layout.lower + rng.random(layout.lower.size) * layout.span
    lanes = rng.integers(layout.lane_lower, layout.lane_upper + 1) if layout.lane_lower.size else \
        np.zeros(0, dtype=np.int64)
    return Chromosome(real, np.asarray(lanes, dtype=np.int64))


def initial_population(ctx: EvalContext, layout: Layout, cfg: GAConfig,
                       rng: np.random.Generator) -> list[Chromosome]:
    """Half Webster-seeded under random lane grants (first one balanced), half uniform random."""
    net = ctx.net
    n_seeded = int(round(cfg.population_size * cfg.seeded_fraction))
    out = []
    for i in range(n_seeded):
        if i == 0:
            alloc = LaneAllocation({p.id: p.baseline_grant for p in net.pools})
        else:
            lanes = random_chromosome(layout, rng).lanes
            alloc = LaneAllocation({pid: int(g) for pid, g in zip(layout.pool_ids, lanes)})
        plan = webster_plan(net, ctx.groups, alloc, ctx.webster, ctx.cycle_bounds)
        ch = encode(plan, net, layout)
        if i > 0:
            offsets = [sl.stop - 1 for sl in layout.slices]
            ch.real[offsets] = rng.random(len(offsets)) * layout.upper[offsets]
        out.append(repair(ch, net, layout))
    while len(out) < cfg.population_size:
        out.append(repair(random_chromosome(layout, rng), net, layout))
    return out


def _tournament(pop: Sequence[Individual], k: int, rng: np.random.Generator) -> Individual:
    idx = rng.integers(0, len(pop), size=k)
    best = min(idx, key=lambda i: (pop[i].fitness, i))
    return pop[int(best)]


def _mutate(ch: Chromosome, layout: Layout, cfg: GAConfig, rng: np.random.Generator) -> Chromosome:
    real = ch.real.copy()
    mask = rng.random(real.size) < cfg.mutation_rate
    real[mask] += rng.normal(0.0, 1.0, int(mask.sum())) * cfg.mutation_scale * layout.span[mask]
    lanes = ch.lanes.copy()
    lmask = rng.random(lanes.size) < cfg.mutation_rate
    lanes[lmask] += rng.choice(np.array([-1, 1]), int(lmask.sum()))
    return Chromosome(real, lanes)


def _crossover(a: Chromosome, b: Chromosome, cfg: GAConfig,
               rng: np.random.Generator) -> tuple[Chromosome, Chromosome]:
    u = rng.uniform(-cfg.blend_alpha, 1 + cfg.blend_alpha, a.real.size)
    r1 = a.real + u * (b.real - a.real)
    r2 = b.real + u * (a.real - b.real)
    swap = rng.random(a.lanes.size) < 0.5
    l1 = np.where(swap, b.lanes, a.lanes)
    l2 = np.where(swap, a.lanes, b.lanes)
    return Chromosome(r1, l1), Chromosome(r2, l2)


def step_generation(pop: Sequence[Individual], cfg: GAConfig, net: Network, layout: Layout,
                    evaluate: Callable[[Sequence[Chromosome]], list[float]],
                    rng: np.random.Generator) -> list[Individual]:
    """Elitism, tournament selection, blend/uniform crossover, mutation, repair."""
    order = sorted(range(len(pop)), key=lambda i: (pop[i].fitness, i))
    elites = [pop[i] for i in order[: min(cfg.elitism, len(pop))]]
    children: list[Chromosome] = []
    need = len(pop) - len(elites)
    while len(children) < need:
        p1 = _tournament(pop, cfg.tournament_size, rng).chromosome
        p2 = _tournament(pop, cfg.tournament_size, rng).chromosome
        if rng.random() < cfg.crossover_rate:
            c1, c2 = _crossover(p1, p2, cfg, rng)
        else:
            c1, c2 = p1, p2
        for c in (c1, c2):
            if cfg.mutation_rate > 0:
                c = _mutate(c, layout, cfg, rng)
            children.append(repair(c, net, layout))
    children = children[:need]
    scores = evaluate(children)
    return list(elites) + [Individual(c, f) for c, f in zip(children, scores)]


@dataclass
class OptimizeResult:
    plan: ControlPlan
    chromosome: Chromosome
    fitness: float
    history: list[tuple[int, float, float]] = field(default_factory=list)  # gen, best, mean
    evaluations: int = 0


def optimize(ctx: EvalContext, cfg: GAConfig = GAConfig(),
             seeds: Sequence[ControlPlan] = ()) -> OptimizeResult:
    """Run the GA; the history's best column is non-increasing when elitism >= 1.

    ``seeds`` are encoded (and repaired into bounds) at the head of the
    initial population, displacing its tail.
    """
    rng = np.random.default_rng(cfg.seed)
    layout = Layout.build(ctx.net, ctx.cycle_bounds)
    evaluate = Evaluator(ctx, layout)
    chroms = initial_population(ctx, layout, cfg, rng)
    if seeds:
        head = [repair(encode(p, ctx.net, layout), ctx.net, layout) for p in seeds][: cfg.population_size]
        chroms = head + chroms[: cfg.population_size - len(head)]
    pop = [Individual(c, f) for c, f in zip(chroms, evaluate(chroms))]
    history = []

    def record(gen: int) -> None:
        fits = [ind.fitness for ind in pop]
        history.append((gen, min(fits), float(np.mean(fits))))

    record(0)
    best = min(pop, key=lambda ind: ind.fitness)
    for gen in range(1, cfg.generations + 1):
        pop = step_generation(pop, cfg, ctx.net, layout, evaluate, rng)
        record(gen)
        cand = min(pop, key=lambda ind: ind.fitness)
        if cand.fitness < best.fitness:
            best = cand
    return OptimizeResult(decode(best.chromosome, ctx.net, layout), best.chromosome, best.fitness,
                          history, evaluate.calls)


def history_csv(history: Sequence[tuple[int, float, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["generation", "best_PI", "mean_PI"])
    for gen, best, mean in history:
        w.writerow([gen, repr(float(best)), repr(float(mean))])
    return buf.getvalue()
