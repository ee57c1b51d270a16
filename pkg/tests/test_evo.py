import math
from dataclasses import replace

import numpy as np
import pytest

from netkit import cross, cross_context
from tidalflow.errors import ShapeMismatch
from tidalflow.evo import (
    THREADS_ENV,
    Chromosome,
    Evaluator,
    GAConfig,
    Individual,
    Layout,
    decode,
    encode,
    fitness,
    history_csv,
    initial_population,
    optimize,
    repair,
    step_generation,
)
from tidalflow.network import ControlPlan, Timing
from tidalflow.webster import check_plan_feasibility

NET0 = cross(min_green=0.0)
LAYOUT0 = Layout.build(NET0, (40.0, 180.0))


def chrom(cycle, shares, offset=0.0, grant=1):
    return Chromosome(np.array([cycle, *shares, offset], dtype=float), np.array([grant], dtype=np.int64))


def test_decode_equal_and_proportional_shares():
    assert decode(chrom(70, (1, 1)), NET0, LAYOUT0).signal["X"].greens == pytest.approx({"EW": 30, "NS": 30})
    assert decode(chrom(70, (3, 1)), NET0, LAYOUT0).signal["X"].greens == pytest.approx({"EW": 45, "NS": 15})
    assert decode(chrom(70, (0, 0)), NET0, LAYOUT0).signal["X"].greens == pytest.approx({"EW": 30, "NS": 30})


def test_decode_respects_min_green():
    net = cross(min_green=7.0)
    layout = Layout.build(net, (40.0, 180.0))
    t = decode(chrom(70, (1, 0)), net, layout).signal["X"]
    assert t.greens == pytest.approx({"EW": 53, "NS": 7})


def test_repair_clamps():
    fixed = repair(chrom(70, (-0.5, 2.0), grant=5), NET0, LAYOUT0)
    assert fixed.lanes[0] == 2
    assert list(fixed.real[1:3]) == [0.0, 1.0]
    low = repair(chrom(10, (0.5, 0.5)), NET0, LAYOUT0)
    assert low.real[0] == 40


def test_repair_idempotent_on_feasible():
    ch = chrom(90, (0.25, 0.75), offset=12.0, grant=0)
    once = repair(ch, NET0, LAYOUT0)
    assert np.array_equal(once.real, ch.real) and np.array_equal(once.lanes, ch.lanes)
    assert once.key() == repair(once, NET0, LAYOUT0).key()


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        decode(Chromosome(np.zeros(3), np.zeros(1, dtype=np.int64)), NET0, LAYOUT0)


def test_encode_roundtrip():
    plan = ControlPlan({"X": Timing(80, {"EW": 50, "NS": 20}, 5.0)}, decode(chrom(80, (1, 1)), NET0, LAYOUT0).lanes)
    back = decode(encode(plan, NET0, LAYOUT0), NET0, LAYOUT0)
    assert back.signal["X"].greens == pytest.approx(plan.signal["X"].greens)
    assert back.signal["X"].offset == pytest.approx(5.0)


def test_fitness_on_bundled_scenario(morning_analytic):
    ctx = morning_analytic
    net = ctx.net
    layout = Layout.build(net, ctx.cycle_bounds)
    base = ctx.baseline()
    f = fitness(encode(base, net, layout), ctx, layout)
    assert math.isfinite(f) and f > 0
    ch = encode(base, net, layout)
    assert fitness(ch, ctx, layout) == fitness(Chromosome(ch.real.copy(), ch.lanes.copy()), ctx, layout)


def test_starving_the_heavy_access_is_worse(morning_analytic):
    ctx = morning_analytic
    base = ctx.baseline()
    t = base.signal["I1"]  # access 1 (1900 veh/h) enters on W_in, served by EW
    starve = dict(t.greens)
    starve["EW"] = 7.0
    starve["NS"] = t.cycle - 10.0 - 7.0
    plan = ControlPlan({**base.signal, "I1": Timing(t.cycle, starve)}, base.lanes)
    assert ctx.fitness(plan) > ctx.fitness(base)


def _population(ctx, cfg, rng):
    layout = Layout.build(ctx.net, ctx.cycle_bounds)
    evaluate = Evaluator(ctx, layout)
    chroms = initial_population(ctx, layout, cfg, rng)
    return layout, evaluate, [Individual(c, f) for c, f in zip(chroms, evaluate(chroms))]


def test_step_generation_elitism_and_size():
    ctx = cross_context()
    cfg = GAConfig(population_size=50, elitism=2)
    rng = np.random.default_rng(1)
    layout, evaluate, pop = _population(ctx, cfg, rng)
    best2 = sorted(ind.fitness for ind in pop)[:2]
    nxt = step_generation(pop, cfg, ctx.net, layout, evaluate, rng)
    assert len(nxt) == 50
    assert all(f in [ind.fitness for ind in nxt] for f in best2)


def test_step_generation_without_variation_copies_parents():
    ctx = cross_context()
    cfg = GAConfig(population_size=20, crossover_rate=0.0, mutation_rate=0.0)
    rng = np.random.default_rng(2)
    layout, evaluate, pop = _population(ctx, cfg, rng)
    parents = {ind.chromosome.key() for ind in pop}
    nxt = step_generation(pop, cfg, ctx.net, layout, evaluate, rng)
    assert {ind.chromosome.key() for ind in nxt} <= parents


def test_zero_generations_is_best_initial():
    ctx = cross_context()
    cfg = GAConfig(population_size=16, generations=0, seed=5)
    res = optimize(ctx, cfg)
    layout, evaluate, pop = _population(ctx, cfg, np.random.default_rng(5))
    assert res.fitness == min(ind.fitness for ind in pop)
    assert len(res.history) == 1


def test_seeded_determinism_and_monotone_history():
    ctx = cross_context()
    cfg = GAConfig(population_size=20, generations=15, seed=9)
    a, b = optimize(ctx, cfg), optimize(ctx, cfg)
    assert a.history == b.history and a.plan == b.plan
    bests = [h[1] for h in a.history]
    assert all(y <= x for x, y in zip(bests, bests[1:]))
    assert check_plan_feasibility(a.plan, ctx.net).ok


def test_threads_do_not_change_results(monkeypatch):
    ctx = cross_context()
    cfg = GAConfig(population_size=20, generations=5, seed=3)
    seq = optimize(ctx, cfg)
    monkeypatch.setenv(THREADS_ENV, "4")
    par = optimize(ctx, cfg)
    assert seq.history == par.history and seq.plan == par.plan


def test_seeds_never_lose(morning_analytic):
    ctx = morning_analytic
    cfg = GAConfig(population_size=10, generations=2, seed=0)
    base = ctx.baseline()
    res = optimize(ctx, cfg, seeds=[base])
    assert res.fitness <= ctx.fitness(base) + 1e-12


def test_history_csv_header():
    text = history_csv([(0, 1.5, 2.0), (1, 1.25, 1.75)])
    assert text.splitlines() == ["generation,best_PI,mean_PI", "0,1.5,2.0", "1,1.25,1.75"]


def test_config_validation():
    with pytest.raises(ValueError):
        GAConfig(crossover_rate=1.5)
    with pytest.raises(ValueError):
        GAConfig(population_size=1)
    assert replace(GAConfig(), generations=0).generations == 0
