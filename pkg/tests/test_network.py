from dataclasses import replace

import pytest

from tidalflow.errors import AllocationOutOfRange, SearchSpaceTooLarge, UnknownPool, ZeroSaturationFlow
from tidalflow.network import (
    Intersection,
    LaneAllocation,
    Link,
    Network,
    Phase,
    ReversiblePool,
    apply_lane_allocation,
    check_allocation,
    enumerate_allocations,
    flow_ratio,
    saturation_flow,
    validate_network,
)


def two_node(pool_size=2, lanes=3, baseline=1, closable=()):
    links = (
        Link("AB", "A", "B", 400, lanes, pool_size, paired_link="BA"),
        Link("BA", "B", "A", 400, lanes, pool_size, paired_link="AB"),
        Link("WA", "W", "A", 200, 2),
        Link("AW", "A", "W", 200, 2),
        Link("BE", "B", "E", 200, 2),
        Link("EB", "E", "B", 200, 2),
    )
    inters = (
        Intersection("A", (Phase("main", (("WA", "AB"), ("BA", "AW"))),), 4.0),
        Intersection("B", (Phase("main", (("AB", "BE"), ("EB", "BA"))),), 4.0),
    )
    pools = (ReversiblePool("ab", "AB", "BA", baseline, tuple(closable)),)
    return Network(inters, links, ("W", "E"), {"1": "W", "2": "E"}, pools)


def test_well_formed_two_intersection_net_is_clean():
    assert validate_network(two_node()).ok


def test_link_to_missing_node_reports_that_link():
    net = two_node()
    bad = replace(net, links=net.links + (Link("ghost", "B", "Nowhere", 100, 1),))
    errors = [v for v in validate_network(bad) if "Nowhere" in v.message]
    assert len(errors) == 1 and errors[0].entity == "ghost"


def test_reversible_lanes_above_total_is_one_error():
    net = two_node()
    links = list(net.links)
    links[2] = replace(links[2], reversible_lanes=4)  # WA has 2 lanes
    report = validate_network(replace(net, links=tuple(links)))
    assert len(report) == 1
    assert "exceeds lanes_total" in next(iter(report)).message


def test_asymmetric_pairing_is_reported():
    net = two_node()
    links = list(net.links)
    links[1] = replace(links[1], paired_link=None, reversible_lanes=0)
    assert not validate_network(replace(net, links=tuple(links))).ok


def test_duplicate_ids_reported():
    net = two_node()
    assert not validate_network(replace(net, links=net.links + (net.links[0],))).ok
    assert not validate_network(replace(net, intersections=net.intersections * 2)).ok


def test_unserved_approach_reported():
    net = two_node()
    extra = (Link("NA", "W", "A", 100, 1),)
    report = validate_network(replace(net, links=net.links + extra))
    assert any(v.entity == "NA" for v in report)


def test_pool_grant_two_gives_four_and_two():
    net = apply_lane_allocation(two_node(), LaneAllocation({"ab": 2}))
    assert (net.effective_lanes("AB"), net.effective_lanes("BA")) == (4, 2)


def test_half_pool_grant_keeps_balanced_capacity():
    base = two_node()
    net = apply_lane_allocation(base, LaneAllocation({"ab": 1}))
    assert saturation_flow(net, "AB") == saturation_flow(base, "AB") == 5400
    assert saturation_flow(net, "BA") == saturation_flow(base, "BA")


def test_grant_beyond_pool_is_out_of_range():
    with pytest.raises(AllocationOutOfRange):
        apply_lane_allocation(two_node(), LaneAllocation({"ab": 3}))


def test_unknown_pool():
    with pytest.raises(UnknownPool):
        apply_lane_allocation(two_node(), LaneAllocation({"nope": 1}))


def test_apply_returns_new_value_and_bumps_version():
    base = two_node()
    net = apply_lane_allocation(base, LaneAllocation({"ab": 0}))
    assert base.effective_lanes("AB") == 3 and net.effective_lanes("AB") == 2
    assert net.version == base.version + 1


def test_saturation_flow_examples():
    net = two_node()
    assert saturation_flow(net, "AB") == 5400
    assert saturation_flow(net, "AB", LaneAllocation({"ab": 0})) == 3600
    assert saturation_flow(net, "AB", LaneAllocation({"ab": 1})) == 5400
    closing = two_node(pool_size=1, lanes=1, baseline=0, closable=("BA",))
    assert saturation_flow(closing, "BA", LaneAllocation({"ab": 1})) == 0


def test_closing_requires_closable_flag():
    net = two_node(pool_size=1, lanes=1, baseline=0)
    assert not check_allocation(net, LaneAllocation({"ab": 1})).ok
    ok = two_node(pool_size=1, lanes=1, baseline=0, closable=("BA",))
    assert check_allocation(ok, LaneAllocation({"ab": 1})).ok


def test_flow_ratio():
    assert flow_ratio(540, 1800) == pytest.approx(0.3)
    assert flow_ratio(0, 1800) == 0
    with pytest.raises(ZeroSaturationFlow):
        flow_ratio(100, 0)


def test_enumerate_single_pool_keeps_one_lane_each_way():
    # (1,1) fixed lanes plus a pool of 2 -> grants 0, 1, 2
    net = two_node(pool_size=2, lanes=2, baseline=1)
    allocs = enumerate_allocations(net)
    assert [a.assignments["ab"] for a in allocs] == [0, 1, 2]


def test_enumerate_product_of_independent_pools():
    net = two_node()
    links = net.links + (
        Link("X1", "W", "E", 100, 2, 1, paired_link="X2"),
        Link("X2", "E", "W", 100, 2, 1, paired_link="X1"),
    )
    net = replace(net, links=links, pools=net.pools + (ReversiblePool("x", "X1", "X2", 0),))
    assert len(enumerate_allocations(net)) == 3 * 2


def test_search_space_cap():
    links, pools = [], []
    for i in range(25):
        links += [Link(f"f{i}", "W", "E", 100, 4, 3, paired_link=f"r{i}"),
                  Link(f"r{i}", "E", "W", 100, 4, 3, paired_link=f"f{i}")]
        pools.append(ReversiblePool(f"p{i}", f"f{i}", f"r{i}", 1))
    net = Network((), tuple(links), ("W", "E"), {}, tuple(pools))
    with pytest.raises(SearchSpaceTooLarge):
        enumerate_allocations(net)
