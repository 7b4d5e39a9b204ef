"""Program rules: composition programs run as platform components.

A running program steps its expression against a continuation; invoking a
function posts an ordinary platform request and parks the program until the
matching response appears. A fault (bad pattern, non-pair input to
``first``, unknown URL) jumps straight to the program's final continuation
with an error object.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Callable, Mapping
from typing import Any

from ..jsonvalue import JsonObject, freeze, json_type
from ..models import FunctionModel
from ..trace import INTERNAL, Random, Stop, Trace
from ..workload import Event, Workload
from .jsondsl import TransformError, json_eval
from .syntax import Cond, First, FirstK, Get, Invoke, RetK, Seq, SeqK, Transform, root_request


def fault_value(kind: str) -> JsonObject:
    return JsonObject({"error": kind})


def program_rules(platform, config, budget, make) -> list:
    from ..platform import ProgramRequest, Request, Response, RunningProgram, Transition, WaitingProgram

    out = []
    pending = {c.x: c for c in config.components if isinstance(c, ProgramRequest)}
    running = [c for c in config.components if isinstance(c, RunningProgram)]
    waiting = [c for c in config.components if isinstance(c, WaitingProgram)]
    responses = {c.x: c for c in config.components if isinstance(c, Response)}
    copies = Counter(root_request(c.k) for c in running + waiting)

    def add(rule, detail, build, label=INTERNAL):
        out.append(Transition(rule, label, detail, build))

    for x in sorted(pending):
        req = pending[x]
        if copies[x] < budget.max_instances_per_request:
            add("P-Start", ("x", x),
                lambda req=req: make(add=[RunningProgram(req.program, req.v, RetK(req.x))]))

    for n, rp in enumerate(sorted(running, key=lambda c: root_request(c.k))):
        detail = ("x", root_request(rp.k), "n", n)
        e, v, k = rp.program, rp.v, rp.k

        def fault(kind, message, rp=rp):
            value = fault_value(kind)
            add("P-Fault", ("x", root_request(rp.k), "error", message),
                lambda: make([rp], [WaitingProgram(RetK(root_request(rp.k)), None, value)]))

        if isinstance(e, Seq):
            add("P-Seq1", detail, lambda rp=rp, e=e: make([rp], [RunningProgram(e.first, rp.v, SeqK(e.second, rp.k))]))
        elif isinstance(e, Invoke):
            if e.f not in platform.models:
                fault("invoke", f"no function named {e.f!r}")
                continue
            x2 = config.next_x
            add("P-Invoke1", detail + ("f", e.f, "x'", x2),
                lambda rp=rp, e=e, x2=x2: make(
                    [rp], [WaitingProgram(rp.k, x2), Request(e.f, x2, rp.v)], next_x=x2 + 1))
        elif isinstance(e, First):
            if not (isinstance(v, tuple) and len(v) == 2):
                fault("first", f"first needs a pair, got {json_type(v)}")
                continue
            add("P-First1", detail,
                lambda rp=rp, e=e, v=v: make([rp], [RunningProgram(e.body, v[0], FirstK(v[1], rp.k))]))
        elif isinstance(e, Transform):
            try:
                result = json_eval(e.pattern, v)
            except TransformError as exc:
                fault("transform", str(exc))
                continue
            add("P-Transform", detail, lambda rp=rp, result=result: make([rp], [WaitingProgram(rp.k, None, result)]))
        elif isinstance(e, Cond):
            try:
                test = json_eval(e.test, v)
            except TransformError as exc:
                fault("transform", str(exc))
                continue
            if not isinstance(test, bool):
                fault("transform", f"condition is {json_type(test)}, not bool")
                continue
            branch = e.then if test else e.orelse
            add("P-Cond", detail + ("branch", test),
                lambda rp=rp, branch=branch: make([rp], [RunningProgram(branch, rp.v, rp.k)]))
        elif isinstance(e, Get):
            try:
                if platform.resolver is None:
                    raise LookupError("no resolver configured")
                if not isinstance(v, str):
                    raise LookupError(f"get needs a URL string, got {json_type(v)}")
                content = freeze(platform.resolver(v))
            except LookupError as exc:
                fault("get", str(exc))
                continue
            add("P-Get", detail, lambda rp=rp, content=content: make([rp], [WaitingProgram(rp.k, None, content)]))
        else:
            raise TypeError(f"not an expression: {e!r}")

    for n, wp in enumerate(sorted(waiting, key=lambda c: root_request(c.k))):
        detail = ("x", root_request(wp.k), "n", n)
        if wp.waiting_on is not None:
            resp = responses.get(wp.waiting_on)
            if resp is not None:
                add("P-Invoke2", detail + ("x'", resp.x),
                    lambda wp=wp, resp=resp: make([wp, resp], [WaitingProgram(wp.k, None, resp.v)]))
            continue
        k = wp.k
        if isinstance(k, SeqK):
            add("P-Seq2", detail, lambda wp=wp, k=k: make([wp], [RunningProgram(k.expr, wp.v, k.k)]))
        elif isinstance(k, FirstK):
            add("P-First2", detail, lambda wp=wp, k=k: make([wp], [WaitingProgram(k.k, None, (wp.v, k.v))]))
        elif isinstance(k, RetK):
            req = pending.get(k.x)
            if req is not None:
                add("P-Respond", ("x", k.x),
                    lambda wp=wp, req=req: make([wp, req], [Response(req.x, wp.v)]),
                    label=Stop(k.x, wp.v))

    if config.dies < budget.die:
        for n, wp in enumerate(sorted(waiting, key=lambda c: root_request(c.k))):
            add("P-Die", ("x", root_request(wp.k), "n", n),
                lambda wp=wp: make([wp], dies=config.dies + 1))
    return out


def run_program(
    program: Any,
    payload: Any,
    functions: Mapping[str, FunctionModel] | None = None,
    store: Any = None,
    resolver: Callable[[str], Any] | None = None,
    seed: int = 0,
    name: str = "main",
    max_steps: int = 10_000,
) -> tuple[Any, Trace]:
    """Run one program request under a fault-free random schedule.

    Returns the program's response value (``None`` if it never answered)
    and the trace.
    """
    from ..models import function_registry
    from ..platform import FaultBudget, Platform

    if functions is None:
        functions = function_registry()
    platform = Platform(functions, resolver=resolver, with_store=store is not None or None)
    workload = Workload((Event(name, freeze(payload), 0, program),), None if store is None else freeze(store))
    trace = platform.run(None, workload, Random(seed, max_steps), FaultBudget(die=0, max_instances_per_request=1))
    response = trace.final.response(1)
    return (None if response is None else response.v), trace
