"""The ``llab`` command line.

Exit statuses: 0 success, 1 usage or input error, 2 the run got stuck or a
search budget ran out, 3 a counterexample, violation or error response.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter
from pathlib import Path
from typing import Any

from .equivalence import (
    check_extended_bisim,
    check_safety_relation,
    check_weak_bisim,
    idempotence_check,
)
from .jsonvalue import dumps, freeze, to_plain
from .models import CATALOG, RELATIONS, UnsupportedModel, function_registry, get_model, get_relation
from .naive import NotApplicable, classify_requests, is_complete, naive_run
from .platform import FaultBudget, Platform, stops_per_request
from .spl.frontend import PROGRAM_FILES, compile_program, load_program, optimize, parse_surface, program_text
from .spl.machine import run_program
from .spl.parser import SplSyntaxError
from .spl.syntax import show, show_stages
from .trace import BudgetExceeded, Exhaustive, Random, Script, ScriptError, Start, Stop
from .workload import Event, Workload, WorkloadError, load_workload

EXIT_OK, EXIT_USAGE, EXIT_STUCK, EXIT_FAIL = 0, 1, 2, 3


class UsageError(Exception):
    pass


def emit(obj: Any) -> None:
    sys.stdout.write(dumps(obj) + "\n")


def say(text: str) -> None:
    sys.stdout.write(text + "\n")


def seed_of(args) -> int:
    env = os.environ.get("LLAB_SEED")
    if env is None:
        return args.seed
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"LLAB_SEED must be an integer, got {env!r}") from None


def budget_of(args) -> FaultBudget:
    return FaultBudget(die=args.die_budget, max_instances_per_request=args.max_instances_per_request)


def model_of(name: str):
    try:
        return get_model(name)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None


def read_program(source: str, core: bool | None = None, optimized: bool = True):
    """A program from a file path or a bundled program name."""
    text = read_program_text(source)
    try:
        return load_program(text, core, optimized)
    except SplSyntaxError as exc:
        raise UsageError(f"{source}:{exc}") from None


def read_program_text(source: str) -> str:
    if source in PROGRAM_FILES:
        return program_text(source)
    try:
        return Path(source).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read program {source}: {exc.strerror}") from None


def read_json_arg(text: str | None, what: str) -> Any:
    """Inline JSON, or ``@path`` to read it from a file."""
    if text is None:
        return None
    try:
        if text.startswith("@"):
            text = Path(text[1:]).read_text(encoding="utf-8")
        return json.loads(text)
    except OSError as exc:
        raise UsageError(f"cannot read {what}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} is not valid JSON: {exc}") from None


def workload_of(args, model=None, default_requests: int = 1) -> Workload:
    if args.workload:
        try:
            return load_workload(args.workload, lambda path: read_program(str(path)))
        except WorkloadError as exc:
            raise UsageError(str(exc)) from None
    if model is None:
        raise UsageError("give --model or --workload")
    n = getattr(args, "requests", None) or default_requests
    payloads = model.requests or (None,)
    events = tuple(Event(model.name, payloads[i % len(payloads)]) for i in range(n))
    return Workload(events)


def platform_for(workload: Workload, model=None) -> Platform:
    models = {}
    if any(e.program is not None for e in workload.events):
        models.update(function_registry())
    if model is not None:
        models[model.name] = model
    for e in workload.events:
        if e.program is None and e.target not in models:
            models[e.target] = model_of(e.target)
    return Platform(models, with_store=workload.store is not None or None)


def scheduler_of(args):
    if args.scheduler == "random":
        return Random(seed_of(args), args.max_steps)
    if args.scheduler == "exhaustive":
        return Exhaustive(args.depth)
    if not args.script:
        raise UsageError("--scheduler script needs --script")
    choices = read_json_arg("@" + args.script, "script")
    if not isinstance(choices, list):
        raise UsageError("a script is a JSON list of choices")
    return Script(tuple(choices))


def trace_records(trace, index: int | None = None) -> list[dict]:
    records = trace.records()
    if index is not None:
        for r in records:
            r["trace"] = index
    return records


def print_trace(args, trace, index: int | None = None) -> None:
    if args.format == "json":
        for r in trace_records(trace, index):
            emit(r)
        return
    if index is not None:
        say(f"trace {index}")
    for r in trace.records():
        say(f"{r['step']:>4}  {r['rule']:<14} {r['label']}")


# -- subcommands --------------------------------------------------------------------


def cmd_simulate(args) -> int:
    model = model_of(args.model) if args.model else None
    workload = workload_of(args, model)
    scheduler = scheduler_of(args)
    if args.semantics == "naive":
        if model is None:
            raise UsageError("the naive semantics needs --model")
        result = naive_run(model, workload, scheduler, args.rollback_budget)
        traces = result if isinstance(result, list) else [result]
        pending = [t for t in traces if not isinstance(scheduler, Exhaustive) and not is_complete(t)]
    else:
        platform = platform_for(workload, model)
        result = platform.run(None, workload, scheduler, budget_of(args))
        traces = result if isinstance(result, list) else [result]
        pending = []
        if not isinstance(scheduler, Exhaustive):
            trace = traces[0]
            started = {lab.x for lab in trace.labels if isinstance(lab, Start)}
            answered = {lab.x for lab in trace.labels if isinstance(lab, Stop)}
            if trace.final.released < len(workload) or started - answered:
                pending.append(trace)
    exhaustive = isinstance(scheduler, Exhaustive)
    repeated = []
    for n, trace in enumerate(traces):
        print_trace(args, trace, n if exhaustive else None)
        repeated.extend(x for x, c in stops_per_request(trace).items() if c > 1)
    if args.format == "text":
        say(f"{len(traces)} trace(s); {'stuck' if pending else 'quiescent'}")
    if repeated:
        sys.stderr.write(f"requests answered more than once: {sorted(set(repeated))}\n")
        return EXIT_FAIL
    if pending:
        sys.stderr.write("the run ended with unanswered requests\n")
        return EXIT_STUCK
    return EXIT_OK


def cmd_check_safety(args) -> int:
    model = model_of(args.model)
    try:
        relation = get_relation(args.relation)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    try:
        report = check_safety_relation(model, relation)
    except UnsupportedModel as exc:
        raise UsageError(str(exc)) from None
    if args.format == "json":
        emit(report.to_plain())
    else:
        say(f"{model.name} / {relation.name}: {report.states} states")
        for c in report.clauses:
            line = f"  clause {c.clause}: {'pass' if c.passed else 'FAIL'}"
            if c.witness is not None:
                line += f" ({c.witness.detail}: {', '.join(dumps(s) for s in c.witness.states)})"
            say(line)
    return EXIT_OK if report.passed else EXIT_FAIL


def _bisim(args, extended: bool) -> int:
    model = model_of(args.model)
    relation = None
    if args.relation:
        try:
            relation = get_relation(args.relation)
        except KeyError as exc:
            raise UsageError(exc.args[0]) from None
    workload = workload_of(args, model, 1 if extended else 2)
    kwargs = dict(depth=args.depth, budget=budget_of(args), workload=workload, pad=args.pad,
                  node_limit=args.node_limit)
    try:
        if extended:
            verdict = check_extended_bisim(model, relation, rollback_budget=args.rollback_budget, **kwargs)
        else:
            verdict = check_weak_bisim(model, relation, **kwargs)
    except BudgetExceeded as exc:
        partial = getattr(exc, "verdict", None)
        if args.format == "json":
            emit({"outcome": "budget-exceeded", "message": str(exc),
                  "partial": None if partial is None else partial.to_plain()})
        else:
            say(f"search stopped: {exc}")
        return EXIT_STUCK
    if args.format == "json":
        emit(verdict.to_plain())
    elif verdict.bisimilar:
        say(f"{model.name}: bisimilar up to depth {verdict.depth} "
            f"({verdict.platform_states} platform states, {verdict.pairs} pairs)")
    else:
        cex = verdict.outcome
        say(f"{model.name}: counterexample ({cex.direction}) for request {cex.focus}")
        say(f"  {cex.divergence}")
        say("  platform: " + " ; ".join(f"{s.rule} {s.label.render()}" for s in cex.platform_trace.steps))
        say("  naive:    " + " ; ".join(f"{s.rule} {s.label.render()}" for s in cex.naive_trace.steps))
        say(f"  platform script: {json.dumps(cex.platform_script)}")
    return EXIT_OK if verdict.bisimilar else EXIT_FAIL


def cmd_check_bisim(args) -> int:
    return _bisim(args, False)


def cmd_check_ext_bisim(args) -> int:
    return _bisim(args, True)


def cmd_check_idempotence(args) -> int:
    model = model_of(args.model)
    try:
        summary = idempotence_check(model)
    except NotApplicable as exc:
        raise UsageError(str(exc)) from None
    if args.format == "json":
        emit(summary.to_plain())
    else:
        say(f"{model.name}: {'pass' if summary.passed else 'FAIL'}")
        for report in summary.reports:
            bad = report.violated
            say(f"  {dumps(report.request)}: " + ("pass" if not bad else "violates " + ", ".join(bad)))
            for k in bad:
                say(f"    clause {k}: {report.clauses[k].detail}")
    return EXIT_OK if summary.passed else EXIT_FAIL


def cmd_compile(args) -> int:
    text = read_program_text(args.input)
    try:
        expr = compile_program(parse_surface(text))
    except SplSyntaxError as exc:
        raise UsageError(f"{args.input}:{exc}") from None
    if args.emit == "core-opt":
        expr = optimize(expr, live_vars=not args.no_live_vars, live_keys=not args.no_live_keys)
    if args.format == "json":
        emit({"program": show(expr), "stages": show_stages(expr).splitlines()})
    else:
        say(show_stages(expr))
    return EXIT_OK


def cmd_run_spl(args) -> int:
    program = read_program(args.program, optimized=not args.unoptimized)
    payload = freeze(read_json_arg(args.payload, "payload"))
    store = read_json_arg(args.store, "store")
    fixtures = read_json_arg(args.fixtures, "fixtures") or {}
    if not isinstance(fixtures, dict):
        raise UsageError("fixtures must be a JSON object mapping URLs to content")

    def resolve(url: str) -> Any:
        if url not in fixtures:
            raise LookupError(f"no fixture for {url}")
        return fixtures[url]

    value, trace = run_program(program, payload, store=store, resolver=resolve, seed=seed_of(args))
    if trace.final.response(1) is None:
        sys.stderr.write("the program did not respond\n")
        return EXIT_STUCK
    emit(value)
    if args.show_store and trace.final.store is not None:
        emit(trace.final.store.committed)
    failed = isinstance(to_plain(value), dict) and "error" in to_plain(value)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_classify_trace(args) -> int:
    model = model_of(args.model)
    workload = workload_of(args, model)
    scheduler = scheduler_of(args)
    try:
        result = naive_run(model, workload, scheduler, args.rollback_budget)
        traces = result if isinstance(result, list) else [result]
        finished = [t for t in traces if not t.truncated]
        classes = [classify_requests(t, model) for t in finished]
    except NotApplicable as exc:
        raise UsageError(str(exc)) from None
    bad = False
    tally: Counter = Counter()
    for n, per_request in enumerate(classes):
        for x, cls in sorted(per_request.items()):
            kind = type(cls).__name__
            tally[kind] += 1
            bad = bad or kind == "NonConforming"
            if args.format == "json":
                emit({"trace": n, "x": x, "class": kind, **{k: v for k, v in to_plain(cls).items() if k != "$"}})
            elif not isinstance(scheduler, Exhaustive) or kind == "NonConforming":
                extra = f" at step {cls.index}: {cls.reason}" if kind == "NonConforming" else ""
                say(f"trace {n} request {x}: {kind}{extra}")
    if args.format == "text":
        say(f"{len(finished)} finished trace(s) of {len(traces)}: "
            + ", ".join(f"{k} {v}" for k, v in sorted(tally.items())))
    return EXIT_FAIL if bad else EXIT_OK


# -- argument parsing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llab", description="Serverless semantics workbench.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--format", choices=("json", "text"), default="json")
        if seed:
            p.add_argument("--seed", type=int, default=0, help="random seed (LLAB_SEED overrides)")

    def faults(p, die=0, depth=10):
        p.add_argument("--die-budget", type=int, default=die)
        p.add_argument("--max-instances-per-request", type=int, default=2)
        p.add_argument("--depth", type=int, default=depth)

    models = ", ".join(sorted(CATALOG))

    p = sub.add_parser("simulate", help="run a workload on the platform or naive semantics")
    common(p)
    faults(p, depth=16)
    p.add_argument("--model", help=f"one of: {models}")
    p.add_argument("--workload", help="workload JSON file")
    p.add_argument("--semantics", choices=("lambda", "naive"), default="lambda")
    p.add_argument("--scheduler", choices=("random", "exhaustive", "script"), default="random")
    p.add_argument("--script", help="JSON list of rule choices (index, rule name or Rule#k)")
    p.add_argument("--max-steps", type=int, default=1000)
    p.add_argument("--rollback-budget", type=int, default=0)
    p.set_defaults(run=cmd_simulate)

    p = sub.add_parser("check-safety", help="validate a safety relation")
    common(p, seed=False)
    p.add_argument("--model", required=True)
    p.add_argument("--relation", required=True, help=f"one of: {', '.join(sorted(RELATIONS))}")
    p.set_defaults(run=cmd_check_safety)

    for name, extended, handler in (("check-bisim", False, cmd_check_bisim),
                                    ("check-ext-bisim", True, cmd_check_ext_bisim)):
        p = sub.add_parser(name, help="bounded weak bisimulation" + (" with the store" if extended else ""))
        common(p, seed=False)
        faults(p, die=1, depth=14 if extended else 10)
        p.add_argument("--model", required=True)
        p.add_argument("--relation", help="also validate this safety relation")
        p.add_argument("--workload")
        p.add_argument("--requests", type=int, help="number of requests when no workload is given")
        p.add_argument("--pad", type=int, default=8, help="silent steps allowed around a matched step")
        p.add_argument("--node-limit", type=int, default=2_000_000)
        if extended:
            p.add_argument("--rollback-budget", type=int, default=1)
        p.set_defaults(run=handler)

    p = sub.add_parser("check-idempotence", help="check the transactional commit protocol")
    common(p, seed=False)
    p.add_argument("--model", required=True)
    p.set_defaults(run=cmd_check_idempotence)

    p = sub.add_parser("compile", help="compile a surface program to core notation")
    common(p, seed=False)
    p.add_argument("--input", required=True, help=f"program file or one of: {', '.join(PROGRAM_FILES)}")
    p.add_argument("--emit", choices=("core", "core-opt"), default="core-opt")
    p.add_argument("--no-live-vars", action="store_true")
    p.add_argument("--no-live-keys", action="store_true")
    p.set_defaults(run=cmd_compile)

    p = sub.add_parser("run-spl", help="run a composition program without faults")
    common(p)
    p.add_argument("--program", required=True, help=f"program file or one of: {', '.join(PROGRAM_FILES)}")
    p.add_argument("--payload", default="null", help="JSON payload, or @file")
    p.add_argument("--store", help="seed store as JSON, or @file")
    p.add_argument("--fixtures", help="URL to content map for get, as JSON or @file")
    p.add_argument("--show-store", action="store_true", help="also print the committed store")
    p.add_argument("--unoptimized", action="store_true")
    p.set_defaults(run=cmd_run_spl)

    p = sub.add_parser("classify-trace", help="classify naive traces of a transactional model")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--workload")
    p.add_argument("--requests", type=int)
    p.add_argument("--scheduler", choices=("random", "exhaustive", "script"), default="random")
    p.add_argument("--script")
    p.add_argument("--depth", type=int, default=60)
    p.add_argument("--max-steps", type=int, default=1000)
    p.add_argument("--rollback-budget", type=int, default=1)
    p.set_defaults(run=cmd_classify_trace)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.run(args)
    except (UsageError, ScriptError, WorkloadError) as exc:
        sys.stderr.write(f"llab {args.command}: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
