"""Scenario documents (JSON, ``format: 1``) and plan files.

The schema is described in ``docs/scenario.md``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .demand import DemandProfile, load_demand, validate_demand
from .errors import ScenarioParseError, TidalflowError
from .evaluate import (
    EVALUATORS,
    MESOSIM,
    EvalContext,
    Weights,
    candidate_weights,
    indicator_values,
    interval_weights,
    scaler_from,
    webster_plan,
)
from .evo import GAConfig
from .mcdm import (
    CR_THRESHOLD,
    EMISSION_INDICATORS,
    TRAFFIC_INDICATORS,
    ImportanceMatrix,
    Scaler,
    WeightVector,
    ahp_weights,
    consistency_ratio,
)
from .mesosim import EmissionFactors, SimConfig, estimate_emissions, run_detailed
from .network import (
    ControlPlan,
    Intersection,
    LaneAllocation,
    Link,
    Network,
    Phase,
    ReversiblePool,
    Timing,
    ValidationReport,
    enumerate_allocations,
    validate_network,
)
from .webster import WebsterConfig, check_plan_feasibility

FORMAT = 1
AGENT_POLICIES = ("webster", "tidal", "incumbent", "contract")
BUNDLED = {"linkong": "linkong.scenario"}

SUB_WEIGHT_MODES = ("intervals", "candidates", "fixed")


@dataclass(frozen=True)
class Objectives:
    primary: ImportanceMatrix
    cr_threshold: float = CR_THRESHOLD
    sub_weights: str = "intervals"  # or "candidates" or "fixed"
    traffic_weights: tuple[float, ...] | None = None
    emission_weights: tuple[float, ...] | None = None
    scaler: str = "baseline"  # or "fixed"
    reference: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class DAOConfig:
    rounds: int = 20
    eta: float = 1.0
    floor: float = 1e-6
    evaluator: str = "webster_analytic"
    period: str = "morning"
    include_incumbent: bool = True
    contract_generations: int = 40
    contract_population: int = 30
    policies: Mapping[str, str] = field(default_factory=dict)  # intersection id -> agent policy


@dataclass
class Scenario:
    name: str
    net: Network
    profile: DemandProfile
    objectives: Objectives
    sim: SimConfig = field(default_factory=SimConfig)
    webster: WebsterConfig = field(default_factory=WebsterConfig)
    ga: GAConfig = field(default_factory=GAConfig)
    dao: DAOConfig = field(default_factory=DAOConfig)
    factors: EmissionFactors = field(default_factory=EmissionFactors)
    cycle_bounds: tuple[float, float] = (40.0, 180.0)
    arrival_mode: str = "uniform"
    notes: str = ""
    _contexts: dict = field(default_factory=dict, repr=False)

    def context(self, period: str, evaluator: str | None = None) -> EvalContext:
        key = (period, evaluator or self.ga.evaluator)
        if key not in self._contexts:
            self._contexts[key] = build_context(self, period, key[1])
        return self._contexts[key]


def resolve_path(path: str | Path) -> Path:
    """Existing file path, or the bundled scenario of that name."""
    p = Path(path)
    if p.exists():
        return p
    name = p.name.removesuffix(".scenario")
    if name in BUNDLED and len(p.parts) == 1:
        return Path(str(resources.files("tidalflow") / "data" / BUNDLED[name]))
    return p


def load_scenario(path: str | Path) -> Scenario:
    p = resolve_path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read {p}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{p}: invalid JSON: {exc}") from exc
    return parse_scenario(doc, p.parent)


def _network(raw: Mapping[str, Any]) -> Network:
    links = tuple(
        Link(
            id=str(l["id"]), from_node=str(l["from"]), to_node=str(l["to"]),
            length=float(l["length"]), lanes_total=int(l["lanes_total"]),
            reversible_lanes=int(l.get("reversible_lanes", 0)),
            per_lane_saturation_flow=float(l.get("saturation_flow", 1800.0)),
            free_flow_speed=float(l.get("free_flow_speed", 50.0)),
            paired_link=l.get("paired_link"), name=str(l.get("name", "")),
        )
        for l in raw["links"]
    )
    inters = tuple(
        Intersection(
            id=str(x["id"]), lost_time=float(x.get("lost_time", 0.0)), name=str(x.get("name", "")),
            phases=tuple(
                Phase(str(p["id"]), tuple((str(a), str(b)) for a, b in p["movements"]),
                      float(p.get("min_green", 0.0)))
                for p in x["phases"]
            ),
        )
        for x in raw["intersections"]
    )
    pools = tuple(
        ReversiblePool(str(p["id"]), str(p["forward"]), str(p["reverse"]), int(p["baseline_grant"]),
                       tuple(str(c) for c in p.get("closable", ())))
        for p in raw.get("pools", ())
    )
    return Network(inters, links, tuple(str(b) for b in raw.get("boundaries", ())),
                   {str(k): str(v) for k, v in raw.get("accesses", {}).items()}, pools)


def _matrix(raw: Any, base: Path) -> ImportanceMatrix:
    if isinstance(raw, str):
        path = base / raw
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioParseError(f"cannot load importance matrix {path}: {exc}") from exc
        return ImportanceMatrix.of(doc["matrix"], doc.get("labels", ()))
    return ImportanceMatrix.of(raw)


def parse_scenario(doc: Mapping[str, Any], base: Path = Path(".")) -> Scenario:
    """Build a scenario; structural problems raise, domain checks are left to :func:`validate_scenario`."""
    if not isinstance(doc, Mapping):
        raise ScenarioParseError("scenario must be a JSON object")
    if doc.get("format") != FORMAT:
        raise ScenarioParseError(f"unsupported scenario format {doc.get('format')!r}")
    try:
        net = _network(doc["network"])
        obj = doc.get("objectives", {})
        sub = obj.get("sub_weights", {"mode": "intervals"})
        scal = obj.get("scaler", {"mode": "baseline"})
        objectives = Objectives(
            primary=_matrix(obj.get("primary_matrix", [[1, 4], [0.25, 1]]), base),
            cr_threshold=float(obj.get("cr_threshold", CR_THRESHOLD)),
            sub_weights=str(sub.get("mode", "intervals")),
            traffic_weights=tuple(sub["traffic"]) if "traffic" in sub else None,
            emission_weights=tuple(sub["emission"]) if "emission" in sub else None,
            scaler=str(scal.get("mode", "baseline")),
            reference={str(k): float(v) for k, v in scal.get("reference", {}).items()},
        )
        sim_raw = dict(doc.get("sim", {}))
        arrival_mode = str(sim_raw.pop("arrivals", "uniform"))
        sim = SimConfig(**sim_raw)
        sig = dict(doc.get("signal", {}))
        bounds = (float(sig.pop("cycle_min", 40.0)), float(sig.pop("cycle_max", 180.0)))
        webster = WebsterConfig(**sig)
        ga = GAConfig(**doc.get("ga", {}))
        dao = DAOConfig(**doc.get("dao", {}))
        factors = EmissionFactors.from_dict(doc.get("emission_factors", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioParseError(f"malformed scenario: {exc!r}") from exc
    profile = load_demand(doc.get("demand", {}), None)
    return Scenario(str(doc.get("name", "scenario")), net, profile, objectives, sim, webster, ga, dao,
                    factors, bounds, arrival_mode, str(doc.get("notes", "")))


def validate_scenario(sc: Scenario) -> ValidationReport:
    report = validate_network(sc.net)
    report.extend(validate_demand(sc.profile, sc.net))
    try:
        cr = consistency_ratio(sc.objectives.primary)
        if cr > sc.objectives.cr_threshold:
            report.add("objectives", f"importance matrix CR {cr:.4f} exceeds {sc.objectives.cr_threshold}")
        if sc.objectives.primary.n != 2:
            report.add("objectives", "primary importance matrix must be 2x2 (efficiency, emissions)")
    except TidalflowError as exc:
        report.add("objectives", str(exc))
    ob = sc.objectives
    if ob.sub_weights not in SUB_WEIGHT_MODES:
        report.add("objectives", f"unknown sub_weights mode {ob.sub_weights!r}")
    if ob.sub_weights == "fixed":
        for name, w in (("traffic", ob.traffic_weights), ("emission", ob.emission_weights)):
            if w is None or len(w) != 4 or abs(sum(w) - 1) > 1e-9 or min(w) < 0:
                report.add("objectives", f"fixed {name} weights must be 4 non-negative values summing to 1")
    if ob.scaler == "fixed":
        missing = [k for k in TRAFFIC_INDICATORS + EMISSION_INDICATORS if k not in ob.reference]
        if missing:
            report.add("objectives", f"fixed scaler lacks references for {missing}")
    elif ob.scaler != "baseline":
        report.add("objectives", f"unknown scaler mode {ob.scaler!r}")
    if sc.arrival_mode not in ("uniform", "poisson"):
        report.add("sim", f"unknown arrival mode {sc.arrival_mode!r}")
    for ev in (sc.ga.evaluator, sc.dao.evaluator):
        if ev not in EVALUATORS:
            report.add("evaluator", f"unknown evaluator {ev!r}")
    lo, hi = sc.cycle_bounds
    if not 0 < lo <= hi:
        report.add("signal", "cycle bounds must satisfy 0 < cycle_min <= cycle_max")
    for iid, pol in sc.dao.policies.items():
        if iid not in sc.net.intersection_map:
            report.add("dao", f"policy for unknown intersection {iid!r}")
        if pol not in AGENT_POLICIES:
            report.add("dao", f"unknown agent policy {pol!r}")
    names = {p.name for p in sc.profile.periods}
    if sc.dao.period not in names:
        report.add("dao", f"period {sc.dao.period!r} is not declared")
    return report


def build_context(sc: Scenario, period: str, evaluator: str | None = None) -> EvalContext:
    """Evaluation context with AHP primary weights, sub-weights and a baseline scaler."""
    evaluator = evaluator or sc.ga.evaluator
    per = sc.profile.period(period)
    primary = ahp_weights(sc.objectives.primary)
    ctx = EvalContext(sc.net, sc.profile, per, Weights(primary, WeightVector((0.25,) * 4), WeightVector((0.25,) * 4)),
                      None, sc.factors, sc.sim, sc.webster, evaluator, sc.ga.oversaturation_penalty,
                      sc.cycle_bounds, sc.arrival_mode)
    baseline = ctx.baseline()
    ob = sc.objectives
    if ob.sub_weights == "fixed":
        wf = WeightVector(tuple(ob.traffic_weights), TRAFFIC_INDICATORS)
        wn = WeightVector(tuple(ob.emission_weights), EMISSION_INDICATORS)
        sim_result = None
    elif ob.sub_weights == "candidates":
        # one Webster-timed plan per lane allocation
        plans = [webster_plan(sc.net, ctx.groups, a, sc.webster, sc.cycle_bounds) for a in enumerate_allocations(sc.net)]
        wf, wn = candidate_weights(ctx, plans)
        sim_result = None
    else:
        sim_result = run_detailed(sc.net, baseline, ctx.schedule, sc.sim)
        wf, wn = interval_weights(sim_result, sc.factors)
    ctx.weights = Weights(primary, wf, wn)
    if ob.scaler == "fixed":
        ctx.scaler = Scaler(dict(ob.reference))
    elif evaluator == MESOSIM and sim_result is not None:
        m = sim_result.metrics
        ctx.scaler = scaler_from(m, estimate_emissions(m, sc.factors))
    else:
        ctx.calibrate(baseline)
    return ctx


# plan files


def plan_to_dict(plan: ControlPlan) -> dict:
    return {
        "format": FORMAT,
        "signals": {
            iid: {"cycle": t.cycle, "greens": dict(t.greens), "offset": t.offset}
            for iid, t in sorted(plan.signal.items())
        },
        "lanes": dict(sorted(plan.lanes.assignments.items())),
    }


def plan_from_dict(doc: Mapping[str, Any]) -> ControlPlan:
    try:
        signal = {
            str(iid): Timing(float(t["cycle"]), {str(k): float(v) for k, v in t["greens"].items()},
                             float(t.get("offset", 0.0)))
            for iid, t in doc["signals"].items()
        }
        lanes = LaneAllocation({str(k): int(v) for k, v in doc.get("lanes", {}).items()})
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ScenarioParseError(f"malformed plan: {exc!r}") from exc
    return ControlPlan(signal, lanes)


def dump_plan(plan: ControlPlan) -> str:
    return json.dumps(plan_to_dict(plan), indent=2, sort_keys=True) + "\n"


def load_plan(path: str | Path) -> ControlPlan:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioParseError(f"cannot read plan {path}: {exc}") from exc
    return plan_from_dict(doc)


def validate_plan(plan: ControlPlan, sc: Scenario) -> ValidationReport:
    return check_plan_feasibility(plan, sc.net)


def evaluation_row(ctx: EvalContext, plan: ControlPlan) -> dict[str, float]:
    ev = ctx.evaluate(plan)
    row = {k: v for k, v in ev.metrics.as_dict().items()}
    row.update(indicator_values(ev.metrics, ev.emissions))
    row.update({"z_f": ev.index.z_f, "z_n": ev.index.z_n, "PI": ev.index.pi})
    return row
