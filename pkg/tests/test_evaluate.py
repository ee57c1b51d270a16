import math
from dataclasses import replace

import pytest

from netkit import cross, cross_context
from tidalflow.evaluate import (
    MESOSIM,
    WEBSTER_ANALYTIC,
    EvalContext,
    entropy_sub_weights,
    equal_weights,
    lane_groups,
    movement_flows,
    phase_flow_ratios,
    route_delay,
)
from tidalflow.network import ControlPlan, LaneAllocation, Timing
from tidalflow.scenario import build_context
from tidalflow.webster import check_plan_feasibility


def test_movement_flows_sum_routes(linkong):
    flows = movement_flows(linkong.net, linkong.profile, "morning")
    # W_in -> A12 carries access 1 only; A12 -> A23 carries accesses 1 and 2
    assert flows[("W_in", "A12")] == 1900
    assert flows[("A12", "A23")] == 1900 + 440
    assert flows[("A12", "N2_out")] == 690


def test_lane_groups_merge_movements(linkong):
    groups = lane_groups(linkong.net, linkong.profile, "morning")
    a32 = [g for g in groups if g.link == "A32"]
    assert len(a32) == 1 and a32[0].flow == 440 + 600 + 550
    assert set(a32[0].out_links) == {"A21", "S2_out"}


def test_phase_flow_ratios_respond_to_lanes():
    ctx = cross_context()
    lo = phase_flow_ratios(ctx.net, ctx.groups, "X", LaneAllocation({"west": 0}))
    hi = phase_flow_ratios(ctx.net, ctx.groups, "X", LaneAllocation({"west": 2}))
    assert lo[0] == pytest.approx(1500 / 3600) and hi[0] == pytest.approx(1500 / 7200)
    assert lo[1] == hi[1] == pytest.approx(500 / 3600)


@pytest.mark.parametrize("period", ["morning", "evening"])
def test_baseline_plan_feasible(linkong, period):
    ctx = linkong.context(period, WEBSTER_ANALYTIC)
    base = ctx.baseline()
    assert check_plan_feasibility(base, linkong.net).ok
    assert base.lanes.assignments == {p.id: p.baseline_grant for p in linkong.net.pools}


@pytest.mark.parametrize("evaluator", [WEBSTER_ANALYTIC, MESOSIM])
def test_baseline_scores_one(linkong, evaluator):
    ctx = linkong.context("morning", evaluator)
    ev = ctx.evaluate(ctx.baseline())
    assert ev.pi == pytest.approx(1.0, abs=1e-12)
    assert ev.index.z_f == pytest.approx(1.0) and ev.index.z_n == pytest.approx(1.0)


def test_analytic_totals_identity(morning_analytic):
    m, e, _ = morning_analytic.indicators(morning_analytic.baseline())
    assert m.D == pytest.approx(m.D_s + morning_analytic.sim.accel_loss * m.stops, rel=1e-3)
    assert m.D_a == pytest.approx(m.D / m.arrivals)
    assert route_delay(m, "1") > route_delay(m, "3") > 0


def test_oversaturation_is_penalized():
    ctx = cross_context(cross(lanes=3), penalty=1e3)
    bad = ControlPlan({"X": Timing(40, {"EW": 5, "NS": 25})}, LaneAllocation({"west": 0}))
    ev = ctx.evaluate(bad)
    assert ev.violations >= 1
    assert ctx.fitness(bad) == pytest.approx(ev.pi + 1e3 * ev.violations)


def test_with_evaluator_recalibrates(morning_analytic):
    meso = morning_analytic.with_evaluator(MESOSIM)
    assert meso.evaluator == MESOSIM
    assert meso.evaluate(meso.baseline()).pi == pytest.approx(1.0)


def test_unknown_evaluator():
    with pytest.raises(ValueError):
        EvalContext(cross(), None, None, equal_weights(), evaluator="vissim")


def test_sub_weights_are_probability_vectors(linkong):
    w = linkong.context("morning", WEBSTER_ANALYTIC).weights
    for vec in (w.primary, w.traffic, w.emission):
        assert math.isclose(sum(vec.weights), 1.0, abs_tol=1e-12) and min(vec.weights) >= 0
    assert w.primary.weights == pytest.approx((0.8, 0.2))


def test_candidate_plan_sub_weights(linkong):
    sc = replace(linkong, objectives=replace(linkong.objectives, sub_weights="candidates"), _contexts={})
    ctx = build_context(sc, "morning", WEBSTER_ANALYTIC)
    assert sum(ctx.weights.traffic.weights) == pytest.approx(1.0)
    assert ctx.weights.traffic.weights != linkong.context("morning", WEBSTER_ANALYTIC).weights.traffic.weights
    assert ctx.evaluate(ctx.baseline()).pi == pytest.approx(1.0)


def test_single_observation_gives_uniform_sub_weights(morning_analytic):
    m, e, _ = morning_analytic.indicators(morning_analytic.baseline())
    wf, wn = entropy_sub_weights([(m, e)])
    assert wf.weights == wn.weights == (0.25,) * 4
