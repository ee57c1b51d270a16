"""Proposal, vote and incentive rounds among intersection agents.

Each round every agent submits a plan, a contract optimizer produces its
own plan, all candidates are scored under one shared evaluator, agents vote
with their weights, the winner is applied, and voting power is updated
multiplicatively. Rounds are recorded in a hash-linked ledger.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import InfeasibleDemand, InfeasibleLocalPlan, LedgerError, NoCandidates, ScenarioParseError
from .evaluate import EvalContext, LaneGroup, phase_flow_ratios
from .evo import GAConfig, _threads, optimize, wrap_offset
from .network import ControlPlan, LaneAllocation, Network, Timing, check_allocation
from .scenario import DAOConfig, Scenario, plan_from_dict, plan_to_dict
from .webster import WebsterConfig, check_timing, green_splits, proportional_timing

GENESIS = "0" * 64
WEIGHT_TOL = 1e-9
LOCAL = "local"
GLOBAL = "global"


@dataclass(frozen=True)
class Observations:
    """What an agent sees: the incumbent plan, lane groups and the timing limits."""

    net: Network
    plan: ControlPlan
    groups: Sequence[LaneGroup]
    webster: WebsterConfig = field(default_factory=WebsterConfig)
    cycle_bounds: tuple[float, float] | None = None


@dataclass(frozen=True)
class Delegate:
    """Policy output meaning "use whatever the contract produces"."""

    rationale: str = "contract"


PolicyOutput = ControlPlan | Timing | Delegate
Policy = Callable[["Agent", Observations], PolicyOutput]


def local_timing(inter_id: str, obs: Observations, alloc: LaneAllocation | None = None) -> Timing | None:
    """Webster green splits for one intersection, or None when it has no demand."""
    inter = obs.net.intersection(inter_id)
    alloc = alloc if alloc is not None else obs.plan.lanes
    ys = phase_flow_ratios(obs.net, obs.groups, inter_id, alloc)
    if sum(ys) <= 0:
        return None
    ids = inter.phase_ids()
    finite = [min(y, 1.0) for y in ys]
    try:
        t = green_splits(finite, inter.lost_time, obs.webster, ids)
    except InfeasibleDemand:
        hi = obs.cycle_bounds[1] if obs.cycle_bounds else max(obs.plan.signal[inter_id].cycle, 1.0)
        return Timing(hi, {i: y for i, y in zip(ids, finite)})  # repaired to a proportional split
    if obs.cycle_bounds is not None:
        lo, hi = obs.cycle_bounds
        cycle = min(max(t.cycle, lo), hi)
        if cycle != t.cycle:
            t = Timing(cycle, t.greens)  # green sum repaired downstream
    return t


def webster_policy(agent: "Agent", obs: Observations) -> PolicyOutput:
    t = local_timing(agent.intersection, obs)
    return obs.plan if t is None else t


def tidal_policy(agent: "Agent", obs: Observations) -> PolicyOutput:
    """Webster timing plus the adjacent pool grants that minimize local critical load."""
    net = obs.net
    pools = net.pools_touching(agent.intersection)
    best_alloc, best_y = obs.plan.lanes, math.inf
    grants = dict(obs.plan.lanes.assignments)
    options = [[g for g in range(net.pool_size(p) + 1)] for p in pools]
    for combo in itertools.product(*options):
        trial = dict(grants)
        trial.update({p.id: g for p, g in zip(pools, combo)})
        alloc = LaneAllocation(trial)
        if not check_allocation(net, alloc).ok:
            continue
        y = sum(phase_flow_ratios(net, obs.groups, agent.intersection, alloc))
        current = all(trial.get(p.id) == grants.get(p.id, p.baseline_grant) for p in pools)
        if y < best_y - 1e-12 or (abs(y - best_y) <= 1e-12 and current):
            best_alloc, best_y = alloc, y
    t = local_timing(agent.intersection, obs, best_alloc)
    if t is None:
        return obs.plan
    signal = dict(obs.plan.signal)
    signal[agent.intersection] = t
    return ControlPlan(signal, best_alloc)


def incumbent_policy(agent: "Agent", obs: Observations) -> PolicyOutput:
    return obs.plan


def contract_policy(agent: "Agent", obs: Observations) -> PolicyOutput:
    return Delegate()


POLICIES: dict[str, tuple[Policy, str]] = {
    "webster": (webster_policy, LOCAL),
    "tidal": (tidal_policy, LOCAL),
    "incumbent": (incumbent_policy, LOCAL),
    "contract": (contract_policy, GLOBAL),
}


@dataclass(frozen=True)
class Agent:
    id: str
    intersection: str | None
    policy: Policy = webster_policy
    scope: str = LOCAL  # local proposals may only touch their intersection and adjacent pools
    tag: str = "webster"

    @classmethod
    def named(cls, agent_id: str, intersection: str | None, policy: str) -> "Agent":
        if policy not in POLICIES:
            raise ValueError(f"unknown agent policy {policy!r}")
        fn, scope = POLICIES[policy]
        return cls(agent_id, intersection, fn, scope, policy)


@dataclass(frozen=True)
class Proposal:
    agent_id: str
    plan: ControlPlan | None  # None until a delegating proposal is resolved
    rationale: str
    rejected: str = ""

    @property
    def delegated(self) -> bool:
        return self.plan is None and not self.rejected


def _repair_timing(net: Network, inter_id: str, t: Timing) -> Timing:
    inter = net.intersection(inter_id)
    ids = inter.phase_ids()
    if set(t.greens) != set(ids):
        raise InfeasibleLocalPlan(f"{inter_id}: policy greens {sorted(t.greens)} do not match phases {ids}")
    mins = [p.min_green for p in inter.phases]
    raw = [t.greens[i] for i in ids]
    if not all(math.isfinite(g) for g in raw) or not math.isfinite(t.cycle):
        raise InfeasibleLocalPlan(f"{inter_id}: non-finite timing")
    cycle = max(t.cycle, inter.lost_time + sum(mins))
    fixed = Timing(cycle, dict(t.greens), wrap_offset(t.offset, cycle))
    if check_timing(inter_id, fixed, net).ok:
        return fixed
    # rescale the policy's greens onto C - L above the minimum greens
    weights = [max(g - m, 0.0) for g, m in zip(raw, mins)]
    if sum(weights) <= 0:
        weights = [max(g, 0.0) for g in raw]
    try:
        out = proportional_timing(weights, cycle, inter.lost_time, mins, ids)
    except InfeasibleDemand as exc:
        raise InfeasibleLocalPlan(f"{inter_id}: {exc}") from exc
    out = Timing(out.cycle, out.greens, fixed.offset)
    if not check_timing(inter_id, out, net).ok:
        raise InfeasibleLocalPlan(f"{inter_id}: timing could not be repaired")
    return out


def _touched(net: Network, old: ControlPlan, new: ControlPlan) -> tuple[set[str], set[str]]:
    inters = {i for i in new.signal if new.signal[i] != old.signal.get(i)}
    pools = {p.id for p in net.pools
             if new.lanes.get(p.id, p.baseline_grant) != old.lanes.get(p.id, p.baseline_grant)}
    return inters, pools


def submit_proposal(agent: Agent, obs: Observations) -> Proposal:
    """Run the agent's policy and gate its output through repair and scope checks."""
    out = agent.policy(agent, obs)
    if isinstance(out, Delegate):
        return Proposal(agent.id, None, out.rationale)
    net = obs.net
    if isinstance(out, Timing):
        if agent.intersection is None:
            raise InfeasibleLocalPlan(f"agent {agent.id} returned a timing but has no intersection")
        signal = dict(obs.plan.signal)
        signal[agent.intersection] = out
        out = ControlPlan(signal, obs.plan.lanes)
    if not isinstance(out, ControlPlan):
        raise InfeasibleLocalPlan(f"agent {agent.id}: policy returned {type(out).__name__}")
    if agent.scope == LOCAL:
        inters, pools = _touched(net, obs.plan, out)
        allowed = {p.id for p in net.pools_touching(agent.intersection)} if agent.intersection else set()
        if inters - {agent.intersection} or pools - allowed:
            raise InfeasibleLocalPlan(
                f"agent {agent.id} changed {sorted(inters - {agent.intersection})} "
                f"{sorted(pools - allowed)} outside its scope")
    signal = {}
    for iid, t in out.signal.items():
        signal[iid] = t if t == obs.plan.signal.get(iid) else _repair_timing(net, iid, t)
    plan = ControlPlan(signal, out.lanes)
    lane_report = check_allocation(net, plan.lanes)
    if not lane_report.ok:
        raise InfeasibleLocalPlan(f"agent {agent.id}: " + "; ".join(str(v) for v in lane_report))
    return Proposal(agent.id, plan, agent.tag)


# scoring and voting


@dataclass(frozen=True)
class Candidate:
    label: str
    plan: ControlPlan


def candidate_list(proposals: Sequence[Proposal], contract_plan: ControlPlan,
                   incumbent: ControlPlan | None = None) -> list[Candidate]:
    """Contract plan first, then resolved proposals in agent order, then the incumbent."""
    out = [Candidate("contract", contract_plan)]
    for p in proposals:
        if p.rejected:
            continue
        out.append(Candidate(f"agent:{p.agent_id}", p.plan if p.plan is not None else contract_plan))
    if incumbent is not None:
        out.append(Candidate("incumbent", incumbent))
    return out


def score(ctx: EvalContext, plan: ControlPlan) -> float:
    """Penalized PI: the contract's scalar for every candidate."""
    return ctx.fitness(plan)


def evaluate_candidates(proposals: Sequence[Proposal], contract_plan: ControlPlan, ctx: EvalContext,
                        incumbent: ControlPlan | None = None) -> tuple[list[Candidate], list[float]]:
    cands = candidate_list(proposals, contract_plan, incumbent)
    threads = _threads()
    plans = [c.plan for c in cands]
    if threads > 1 and len(plans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(lambda p: score(ctx, p), plans))
    else:
        scores = [score(ctx, p) for p in plans]
    return cands, scores


def _check_weights(weights: Sequence[float]) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ValueError("weights must be a non-negative vector summing to 1")
    return w


@dataclass(frozen=True)
class Tally:
    chosen: int
    ballots: tuple[int, ...]
    support: tuple[float, ...]


def tally(scores: Sequence[float] | Sequence[Sequence[float]], weights: Sequence[float]) -> Tally:
    """Weighted plurality of each agent's lowest-score candidate.

    ``scores`` is either one shared row or one row per agent. Ties go to the
    lowest candidate index, both within a ballot and in the final count.
    """
    w = _check_weights(weights)
    s = np.asarray(scores, dtype=float)
    if s.size == 0 or s.shape[-1] == 0:
        raise NoCandidates("no candidates to vote on")
    rows = np.broadcast_to(s, (len(w), s.shape[-1])) if s.ndim == 1 else s
    if rows.shape[0] != len(w):
        raise ValueError("need one score row per agent")
    ballots = tuple(int(np.argmin(r)) for r in rows)
    support = np.zeros(rows.shape[1])
    for b, wa in zip(ballots, w):
        support[b] += wa
    return Tally(int(np.argmax(support)), ballots, tuple(float(x) for x in support))


def update_weights(weights: Sequence[float], scores: Sequence[float], best: float | None = None,
                   eta: float = 1.0, floor: float = 1e-6) -> np.ndarray:
    """``w_a * exp(-eta * (PI_a - PI_best) / PI_best)``, floored, renormalized.

    ``scores`` holds each agent's proposal score; ``best`` defaults to their
    minimum and should be the round minimum over all candidates.
    """
    w = _check_weights(weights)
    pi = np.asarray(scores, dtype=float)
    if pi.shape != w.shape:
        raise ValueError("need one score per agent")
    best = float(pi.min()) if best is None else float(best)
    scale = abs(best) if best != 0 else 1.0
    new = w * np.exp(-eta * (pi - best) / scale)
    new = np.maximum(new, floor)
    return new / new.sum()


# ledger


def _canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def entry_hash(body: Mapping[str, Any]) -> str:
    return hashlib.sha256(_canonical({k: v for k, v in body.items() if k != "hash"}).encode()).hexdigest()


@dataclass(frozen=True)
class LedgerEntry:
    round: int
    proposals: tuple[dict, ...]
    contract: dict
    candidates: tuple[str, ...]
    scores: tuple[float, ...]
    ballots: tuple[int, ...]
    chosen: int
    chosen_label: str
    applied_pi: float
    weights: tuple[float, ...]
    prev_hash: str
    hash: str = ""

    def body(self) -> dict:
        return {
            "round": self.round,
            "proposals": [dict(p) for p in self.proposals],
            "contract": self.contract,
            "candidates": list(self.candidates),
            "scores": list(self.scores),
            "ballots": list(self.ballots),
            "chosen": self.chosen,
            "chosen_label": self.chosen_label,
            "applied_pi": self.applied_pi,
            "weights": list(self.weights),
            "prev_hash": self.prev_hash,
        }

    def sealed(self) -> "LedgerEntry":
        return replace(self, hash=entry_hash(self.body()))

    def to_dict(self) -> dict:
        d = self.body()
        d["hash"] = self.hash
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LedgerEntry":
        try:
            return cls(int(d["round"]), tuple(dict(p) for p in d["proposals"]), dict(d["contract"]),
                       tuple(d["candidates"]), tuple(float(x) for x in d["scores"]),
                       tuple(int(x) for x in d["ballots"]), int(d["chosen"]), str(d["chosen_label"]),
                       float(d["applied_pi"]), tuple(float(x) for x in d["weights"]),
                       str(d["prev_hash"]), str(d["hash"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise LedgerError(f"malformed ledger entry: {exc!r}") from exc


def verify_chain(entries: Sequence[LedgerEntry]) -> None:
    """Raise :class:`LedgerError` unless rounds, links and hashes are consistent."""
    prev = GENESIS
    for k, e in enumerate(entries):
        if e.round != k + 1:
            raise LedgerError(f"entry {k}: round {e.round}, expected {k + 1}")
        if e.prev_hash != prev:
            raise LedgerError(f"round {e.round}: broken link to previous entry")
        if entry_hash(e.body()) != e.hash:
            raise LedgerError(f"round {e.round}: hash does not match contents")
        prev = e.hash


def ledger_text(entries: Sequence[LedgerEntry]) -> str:
    return "".join(_canonical(e.to_dict()) + "\n" for e in entries)


def write_ledger(path: str | Path, entries: Sequence[LedgerEntry]) -> None:
    Path(path).write_text(ledger_text(entries))


def read_ledger(path: str | Path) -> list[LedgerEntry]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read ledger {path}: {exc}") from exc
    out = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.append(LedgerEntry.from_dict(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise LedgerError(f"line {n}: {exc}") from exc
    return out


# rounds


@dataclass
class DAOState:
    agents: list[Agent]
    weights: np.ndarray
    plan: ControlPlan  # incumbent, applied at the end of each round
    cfg: DAOConfig = field(default_factory=DAOConfig)
    contract_ga: GAConfig = field(default_factory=GAConfig)
    ledger: list[LedgerEntry] = field(default_factory=list)

    @property
    def round(self) -> int:
        return len(self.ledger)


def default_agents(net: Network, policies: Mapping[str, str] | None = None) -> list[Agent]:
    """One agent per intersection; ``policies`` maps intersection id to a policy name."""
    policies = policies or {}
    return [Agent.named(x.id, x.id, policies.get(x.id, "webster")) for x in net.intersections]


def init_state(ctx: EvalContext, agents: Sequence[Agent], cfg: DAOConfig = DAOConfig(),
               contract_ga: GAConfig | None = None, plan: ControlPlan | None = None,
               weights: Sequence[float] | None = None) -> DAOState:
    if not agents:
        raise NoCandidates("a DAO needs at least one agent")
    w = np.full(len(agents), 1.0 / len(agents)) if weights is None else _check_weights(weights).copy()
    ga = contract_ga or GAConfig(population_size=cfg.contract_population,
                                 generations=cfg.contract_generations, evaluator=ctx.evaluator)
    return DAOState(list(agents), w, plan or ctx.baseline(), cfg, ga)


def contract_plan(ctx: EvalContext, ga: GAConfig, seeds: Sequence[ControlPlan], round_index: int) -> ControlPlan:
    """GA result warm-started from ``seeds``; never scores worse than any seed."""
    res = optimize(ctx, replace(ga, seed=ga.seed + round_index), seeds)
    best, best_score = res.plan, score(ctx, res.plan)
    for s in seeds:
        v = score(ctx, s)
        if v < best_score:
            best, best_score = s, v
    return best


def consensus_round(state: DAOState, ctx: EvalContext) -> tuple[ControlPlan, LedgerEntry]:
    """Submit, contract, evaluate, tally, reweight, append. Mutates ``state``."""
    k = state.round + 1
    obs = Observations(ctx.net, state.plan, ctx.groups, ctx.webster, ctx.cycle_bounds)
    proposals = []
    for agent in state.agents:
        try:
            proposals.append(submit_proposal(agent, obs))
        except InfeasibleLocalPlan as exc:
            proposals.append(Proposal(agent.id, None, agent.tag, rejected=str(exc)))
    seeds = [state.plan] + [p.plan for p in proposals if p.plan is not None]
    contract = contract_plan(ctx, state.contract_ga, seeds, k)
    incumbent = state.plan if state.cfg.include_incumbent else None
    cands, scores = evaluate_candidates(proposals, contract, ctx, incumbent)
    result = tally(scores, state.weights)

    # each agent is credited with its own proposal's score; rejected ones keep the status quo
    by_label = {c.label: s for c, s in zip(cands, scores)}
    status_quo = score(ctx, state.plan) if incumbent is None else by_label["incumbent"]
    agent_scores = [by_label.get(f"agent:{p.agent_id}", status_quo) for p in proposals]
    best = min(scores)
    state.weights = update_weights(state.weights, agent_scores, best, state.cfg.eta, state.cfg.floor)

    chosen = cands[result.chosen]
    entry = LedgerEntry(
        round=k,
        proposals=tuple(
            {"agent": p.agent_id, "rationale": p.rationale, "rejected": p.rejected,
             "plan": plan_to_dict(p.plan) if p.plan is not None else None}
            for p in proposals),
        contract=plan_to_dict(contract),
        candidates=tuple(c.label for c in cands),
        scores=tuple(float(s) for s in scores),
        ballots=result.ballots,
        chosen=result.chosen,
        chosen_label=chosen.label,
        applied_pi=float(scores[result.chosen]),
        weights=tuple(float(x) for x in state.weights),
        prev_hash=state.ledger[-1].hash if state.ledger else GENESIS,
    ).sealed()
    state.ledger.append(entry)
    state.plan = chosen.plan
    return chosen.plan, entry


def run_rounds(state: DAOState, ctx: EvalContext, rounds: int) -> DAOState:
    for _ in range(rounds):
        consensus_round(state, ctx)
    return state


def scenario_state(sc: Scenario, period: str | None = None) -> tuple[DAOState, EvalContext]:
    """Initial DAO state and evaluation context as configured by a scenario."""
    cfg = sc.dao
    ctx = sc.context(period or cfg.period, cfg.evaluator)
    agents = default_agents(sc.net, cfg.policies)
    ga = replace(sc.ga, population_size=cfg.contract_population, generations=cfg.contract_generations,
                 evaluator=cfg.evaluator)
    return init_state(ctx, agents, cfg, ga), ctx


def replay(entries: Sequence[LedgerEntry], sc: Scenario, period: str | None = None) -> None:
    """Re-run the rounds from the scenario and require identical entries."""
    verify_chain(entries)
    state, ctx = scenario_state(sc, period)
    for e in entries:
        _, again = consensus_round(state, ctx)
        if again.to_dict() != e.to_dict():
            raise LedgerError(f"round {e.round}: replay diverges from the ledger")

