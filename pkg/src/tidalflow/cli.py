"""Command-line entry point: ``tidalflow {validate,simulate,optimize,compare,dao-run}``.

Exit codes: 0 success, 1 domain failure, 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import dao
from .errors import ScenarioParseError, TidalflowError
from .evaluate import EVALUATORS, MESOSIM, EvalContext, phase_flow_ratios
from .evo import history_csv, optimize
from .mcdm import EMISSION_INDICATORS, improvement_pct
from .mesosim import METRIC_COLUMNS
from .network import ControlPlan, enumerate_allocations
from .scenario import Scenario, dump_plan, evaluation_row, load_plan, load_scenario, validate_plan, validate_scenario

OK, FAILED, USAGE = 0, 1, 2

SIMULATE_COLUMNS = ("period", "plan", *METRIC_COLUMNS, *EMISSION_INDICATORS, "z_f", "z_n", "PI")
COMPARE_INDICATORS = ("D_s", "C_s", "D_a", "D", *EMISSION_INDICATORS, "z_f", "z_n", "PI")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load(path: str) -> Scenario:
    sc = load_scenario(path)
    report = validate_scenario(sc)
    if not report.ok:
        raise _Invalid(report)
    return sc


class _Invalid(TidalflowError):
    def __init__(self, report):
        super().__init__(f"{len(report)} validation error(s)")
        self.report = report


def _plan(sc: Scenario, ctx: EvalContext, ref: str) -> tuple[str, ControlPlan]:
    if ref == "baseline":
        return "baseline", ctx.baseline()
    plan = load_plan(ref)
    report = validate_plan(plan, sc)
    if not report.ok:
        raise _Invalid(report)
    return Path(ref).stem, plan


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    report = validate_scenario(sc)
    if args.plan:
        report.extend(validate_plan(load_plan(args.plan), sc))
    for v in report:
        print(v)
    if report.ok:
        print("ok")
        return OK
    return FAILED


def _route_columns(sc: Scenario) -> list[str]:
    return [f"route_delay_{a.access_id}" for a in sorted(sc.profile.accesses, key=lambda a: a.access_id)]


def cmd_simulate(args) -> int:
    sc = _load(args.scenario)
    route_cols = _route_columns(sc)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*SIMULATE_COLUMNS, *route_cols])
    for period in args.period:
        ctx = sc.context(period, args.evaluator)
        label, plan = _plan(sc, ctx, args.plan)
        row = evaluation_row(ctx, plan)
        row.update(period=period, plan=label)
        m = ctx.indicators(plan)[0]
        delays = [m.access_delay.get(c.removeprefix("route_delay_"), 0.0) for c in route_cols]
        w.writerow([_fmt(row[c]) for c in SIMULATE_COLUMNS] + [_fmt(float(d)) for d in delays])
    _emit(buf.getvalue(), args.out)
    return OK


def _unservable(sc: Scenario, ctx: EvalContext) -> list[str]:
    """Intersections whose critical load stays at or above x_max under every lane allocation."""
    allocs = enumerate_allocations(sc.net)
    bad = []
    for x in sc.net.intersections:
        best = min(sum(phase_flow_ratios(sc.net, ctx.groups, x.id, a)) for a in allocs)
        if best >= sc.webster.x_max:
            bad.append(f"{x.id}: critical flow ratio {best:.4f} >= x_max {sc.webster.x_max} for every lane allocation")
    return bad


def cmd_optimize(args) -> int:
    sc = _load(args.scenario)
    evaluator = args.evaluator or sc.ga.evaluator
    ctx = sc.context(args.period, evaluator)
    bad = _unservable(sc, ctx)
    if bad:
        for line in bad:
            print(line, file=sys.stderr)
        return FAILED
    cfg = replace(sc.ga, evaluator=evaluator)
    for name in ("generations", "population_size", "seed"):
        value = getattr(args, name)
        if value is not None:
            cfg = replace(cfg, **{name: value})
    res = optimize(ctx, cfg)
    Path(args.out).write_text(dump_plan(res.plan))
    if args.history:
        Path(args.history).write_text(history_csv(res.history))
    base = ctx.evaluate(ctx.baseline())
    best = ctx.evaluate(res.plan)
    print(f"period={args.period} evaluator={evaluator} baseline_PI={base.pi!r} optimized_PI={best.pi!r} "
          f"improvement_pct={improvement_pct(base.pi, best.pi)!r} violations={best.violations}")
    return OK


def _labels(names: Sequence[str]) -> list[str]:
    out, seen = [], {}
    for n in names:
        k = seen.get(n, 0)
        seen[n] = k + 1
        out.append(n if k == 0 else f"{n}_{k + 1}")
    return out


def cmd_compare(args) -> int:
    sc = _load(args.scenario)
    refs = [s for s in args.plans.split(",") if s]
    if not refs:
        raise argparse.ArgumentTypeError("--plans needs at least one plan")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    labels = None
    for period in args.period:
        ctx = sc.context(period, args.evaluator)
        named = [_plan(sc, ctx, s) for s in refs]
        if labels is None:
            labels = _labels([n for n, _ in named])
            w.writerow(["period", "indicator", *labels, *(f"improvement_pct_{l}" for l in labels[1:])])
        rows = [evaluation_row(ctx, p) for _, p in named]
        for ind in COMPARE_INDICATORS:
            vals = [float(r[ind]) for r in rows]
            deltas = [improvement_pct(vals[0], v) for v in vals[1:]]
            w.writerow([period, ind, *(_fmt(v) for v in vals), *(_fmt(d) for d in deltas)])
    _emit(buf.getvalue(), args.out)
    return OK


def cmd_dao_run(args) -> int:
    sc = _load(args.scenario)
    if args.verify:
        entries = dao.read_ledger(args.verify)
        dao.verify_chain(entries)
        if not args.no_replay:
            dao.replay(entries, sc, args.period)
        print(f"ledger verified: {len(entries)} entries")
        return OK
    rounds = sc.dao.rounds if args.rounds is None else args.rounds
    state, ctx = dao.scenario_state(sc, args.period)
    dao.run_rounds(state, ctx, rounds)
    if args.out:
        dao.write_ledger(args.out, state.ledger)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", "chosen", "applied_PI", *(f"weight_{a.id}" for a in state.agents)])
    for e in state.ledger:
        w.writerow([e.round, e.chosen_label, _fmt(e.applied_pi), *(_fmt(x) for x in e.weights)])
    _emit(buf.getvalue(), args.summary)
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tidalflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    periods = dict(action="append", default=None, help="demand period (repeatable; default morning)")

    v = sub.add_parser("validate", help="validate a scenario and optionally a plan file")
    v.add_argument("scenario")
    v.add_argument("--plan")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("simulate", help="evaluate one plan; one CSV row per period")
    s.add_argument("scenario")
    s.add_argument("--plan", default="baseline", help="'baseline' or a plan JSON file")
    s.add_argument("--period", **periods)
    s.add_argument("--evaluator", choices=EVALUATORS, default=MESOSIM)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("optimize", help="search signal timing and lane grants with the GA")
    o.add_argument("scenario")
    o.add_argument("--period", default="morning")
    o.add_argument("--evaluator", choices=EVALUATORS)
    o.add_argument("--generations", type=int)
    o.add_argument("--population", dest="population_size", type=int)
    o.add_argument("--seed", type=int)
    o.add_argument("--out", required=True, help="plan JSON output")
    o.add_argument("--history", help="per-generation CSV output")
    o.set_defaults(func=cmd_optimize)

    c = sub.add_parser("compare", help="compare plans; improvement columns are relative to the first")
    c.add_argument("scenario")
    c.add_argument("--plans", required=True, help="comma-separated: 'baseline' or plan files")
    c.add_argument("--period", **periods)
    c.add_argument("--evaluator", choices=EVALUATORS, default=MESOSIM)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    d = sub.add_parser("dao-run", help="run consensus rounds or verify a ledger")
    d.add_argument("scenario")
    d.add_argument("--rounds", type=int)
    d.add_argument("--period")
    d.add_argument("--out", help="ledger output (JSON lines)")
    d.add_argument("--summary", help="per-round CSV output (default stdout)")
    d.add_argument("--verify", metavar="LEDGER", help="verify and replay an existing ledger")
    d.add_argument("--no-replay", action="store_true", help="with --verify, check the hash chain only")
    d.set_defaults(func=cmd_dao_run)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "period", None) is None and args.command in ("simulate", "compare"):
        args.period = ["morning"]
    try:
        return args.func(args)
    except ScenarioParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except _Invalid as exc:
        for v in exc.report:
            print(v, file=sys.stderr)
        return FAILED
    except (argparse.ArgumentTypeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except TidalflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
