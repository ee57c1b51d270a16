import json
from dataclasses import replace
from pathlib import Path

import pytest

from tidalflow.errors import ScenarioParseError
from tidalflow.network import ControlPlan, LaneAllocation, Timing
from tidalflow.scenario import (
    dump_plan,
    load_plan,
    load_scenario,
    parse_scenario,
    plan_from_dict,
    plan_to_dict,
    resolve_path,
    validate_plan,
    validate_scenario,
)


def bundled_doc():
    path = resolve_path("linkong")
    return json.loads(Path(path).read_text()), path.parent


def test_bundled_scenario_loads_and_validates(linkong):
    assert validate_scenario(linkong).ok
    assert [p.name for p in linkong.profile.periods] == ["morning", "evening"]
    assert len(linkong.net.intersections) == 4
    assert {p.id for p in linkong.net.pools} == {"linkong_12", "linkong_23", "linkong_34", "guangshun_n"}
    assert "RECONSTRUCTION" in linkong.notes


def test_table_flows_are_verbatim(linkong):
    flows = {a.access_id: (a.flow_by_period["morning"], a.flow_by_period["evening"])
             for a in linkong.profile.accesses}
    assert flows == {"1": (1900, 850), "2": (440, 400), "3": (440, 1000), "4": (0, 190), "5": (550, 190),
                     "6": (0, 60), "7": (690, 60), "8": (550, 650), "9": (600, 850)}


def test_plan_round_trip(tmp_path, morning_analytic):
    plan = morning_analytic.baseline()
    assert plan_from_dict(plan_to_dict(plan)) == plan
    path = tmp_path / "plan.json"
    path.write_text(dump_plan(plan))
    assert load_plan(path) == plan


def test_plan_validation_reports(linkong):
    bad = ControlPlan({"I1": Timing(60, {"EW": 40, "NS": 40})}, LaneAllocation({"linkong_12": 9}))
    report = validate_plan(bad, linkong)
    assert not report.ok and len(report) >= 3  # green sum, lane grant, missing intersections


def test_bad_format_and_malformed():
    doc, base = bundled_doc()
    with pytest.raises(ScenarioParseError):
        parse_scenario({**doc, "format": 2}, base)
    with pytest.raises(ScenarioParseError):
        parse_scenario({**doc, "ga": {"population_size": 1}}, base)
    with pytest.raises(ScenarioParseError):
        parse_scenario({k: v for k, v in doc.items() if k != "network"}, base)
    with pytest.raises(ScenarioParseError):
        load_scenario("/nonexistent/x.scenario")
    with pytest.raises(ScenarioParseError):
        plan_from_dict({"signals": {"I1": {"greens": {}}}})


def test_validation_catches_domain_errors(linkong):
    doc, base = bundled_doc()
    doc["dao"] = {**doc["dao"], "policies": {"I9": "webster", "I1": "bribe"}}
    doc["objectives"] = {**doc["objectives"], "primary_matrix": [[1, 9], [1 / 9, 1]], "scaler": {"mode": "fixed"}}
    report = validate_scenario(parse_scenario(doc, base))
    text = "\n".join(str(v) for v in report)
    assert "I9" in text and "bribe" in text and "fixed scaler" in text
    cyc = replace(linkong, cycle_bounds=(90.0, 60.0), _contexts={})
    assert not validate_scenario(cyc).ok


def test_context_cache(linkong):
    assert linkong.context("morning", "webster_analytic") is linkong.context("morning", "webster_analytic")
    with pytest.raises(KeyError):
        linkong.context("midnight", "webster_analytic")
