import pytest

from oracles import webster_oracle
from tidalflow.errors import InfeasibleDemand, InvalidGreenRatio, NoFlow, NonpositiveLostTime, Oversaturated
from tidalflow.network import Intersection, Link, Network, Phase, Timing
from tidalflow.webster import (
    MovementInput,
    WebsterConfig,
    check_plan_feasibility,
    degree_of_saturation,
    green_splits,
    proportional_timing,
    webster_delay,
)

AS_PRINTED = WebsterConfig("as_printed")
CLASSICAL = WebsterConfig("classical")
EXAMPLE = MovementInput(q=0.2, lam=0.5, s=0.5)


def test_degree_of_saturation():
    assert degree_of_saturation(0.2, 0.5, 0.5) == pytest.approx(0.8)
    assert degree_of_saturation(0.0, 0.5, 0.5) == 0
    with pytest.raises(InvalidGreenRatio):
        degree_of_saturation(0.2, 0.0, 0.5)


def test_frozen_delays_match_hand_evaluation():
    # 60*1.5/(2*0.6) = 75 and 0.64/(2*0.25*0.2) = 6.4; classical first term 60*0.25/1.2 = 12.5
    assert webster_delay([EXAMPLE], 60, AS_PRINTED) == pytest.approx(81.4, abs=1e-9)
    assert webster_delay([EXAMPLE], 60, CLASSICAL) == pytest.approx(18.9, abs=1e-9)
    assert webster_oracle(0.2, 0.5, 0.5, 60, "as_printed") == pytest.approx(81.4, abs=1e-12)
    assert webster_oracle(0.2, 0.5, 0.5, 60, "classical") == pytest.approx(18.9, abs=1e-12)


def test_default_variant_is_as_printed():
    assert webster_delay([EXAMPLE], 60) == pytest.approx(81.4, abs=1e-9)


def test_no_flow_and_oversaturation():
    with pytest.raises(NoFlow):
        webster_delay([MovementInput(0.0, 0.5, 0.5)], 60)
    with pytest.raises(Oversaturated):
        webster_delay([MovementInput(0.3, 0.5, 0.5)], 60)  # x = 1.2


def test_flow_weighted_average():
    a = MovementInput(0.2, 0.5, 0.5)
    b = MovementInput(0.1, 0.4, 0.5)
    da = webster_oracle(0.2, 0.5, 0.5, 80, "classical")
    db = webster_oracle(0.1, 0.4, 0.5, 80, "classical")
    expected = (0.2 * da + 0.1 * db) / 0.3
    assert webster_delay([a, b], 80, CLASSICAL) == pytest.approx(expected, rel=1e-12)


def test_green_splits_example():
    t = green_splits([0.3, 0.1], 10, WebsterConfig(x_max=0.9))
    assert t.cycle == pytest.approx(18, abs=1e-9)
    assert [t.greens["p0"], t.greens["p1"]] == pytest.approx([6, 2], abs=1e-9)
    assert sum(t.greens.values()) == pytest.approx(t.cycle - 10, abs=1e-9)
    for y, g in zip((0.3, 0.1), t.greens.values()):
        assert g == pytest.approx(t.cycle * y / 0.9, abs=1e-9)


def test_green_splits_symmetric():
    t = green_splits([0.2, 0.2], 8, WebsterConfig(x_max=0.8), ["a", "b"])
    assert t.cycle == pytest.approx(16)
    assert t.greens == pytest.approx({"a": 4, "b": 4})


def test_green_splits_infeasible_and_bad_lost_time():
    with pytest.raises(InfeasibleDemand):
        green_splits([0.45, 0.45], 10, WebsterConfig(x_max=0.9))
    with pytest.raises(NonpositiveLostTime):
        green_splits([0.1, 0.1], 0)


def single(min_green=0.0, lost=10.0):
    links = (Link("in1", "W", "X", 100, 1), Link("in2", "N", "X", 100, 1),
             Link("out", "X", "E", 100, 1))
    phases = (Phase("p0", (("in1", "out"),), min_green), Phase("p1", (("in2", "out"),), min_green))
    return Network((Intersection("X", phases, lost),), links, ("W", "N", "E"), {})


def test_green_splits_output_is_feasible():
    t = green_splits([0.3, 0.1], 10)
    assert check_plan_feasibility({"X": t}, single()).ok


def test_feasibility_catches_bad_sum_and_min_green():
    net = single(min_green=3.0)
    assert not check_plan_feasibility({"X": Timing(18, {"p0": 6, "p1": 3})}, net).ok  # sums to C-L+1
    report = check_plan_feasibility({"X": Timing(18, {"p0": 6, "p1": 2})}, net)
    assert any("min_green" in v.message for v in report)
    assert not check_plan_feasibility({}, net).ok


def test_proportional_timing_respects_minimums():
    t = proportional_timing([0.3, 0.0], 40, 10, [7, 7], ["a", "b"])
    assert t.greens == pytest.approx({"a": 23, "b": 7})
    with pytest.raises(InfeasibleDemand):
        proportional_timing([0.3, 0.1], 20, 10, [7, 7], ["a", "b"])
