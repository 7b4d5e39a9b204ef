"""The reference semantics: one function, one request at a time.

A naive configuration pairs the optional transaction lock with the function
state ``<f, mode, history, buffer>``. Requests start only when the function is
idle and no transaction is open; completed responses sit in a buffer and are
emitted later. With a key-value store, a transaction snapshots the history so
that it can roll back, and commits only the value stored at the request's key.
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any

from .jsonvalue import EMPTY_OBJECT, JsonObject, canonical, digest, freeze, to_plain
from .models import BeginTx, EndTx, Epsilon, FunctionModel, Read, Return, Write
from .trace import INTERNAL, Exhaustive, Random, Scheduler, Script, Start, Stop, Trace, all_traces, drive
from .workload import Workload

NAIVE_RULES = (
    "N-Start", "N-Step", "N-Buffer-Stop", "N-Emit-Stop",
    "N-Read", "N-Write", "N-BeginTx", "N-EndTx", "N-Rollback",
)


# -- locks ------------------------------------------------------------------


@dataclass(frozen=True)
class Absent:
    pass


@dataclass(frozen=True)
class Held:
    store: JsonObject
    saved: tuple  # history to restore on rollback


@dataclass(frozen=True)
class Committed:
    value: Any


ABSENT = Absent()
NaiveLock = Absent | Held | Committed


# -- states -----------------------------------------------------------------


@dataclass(frozen=True)
class NaiveState:
    f: str
    busy: int | None
    history: tuple
    buffer: frozenset = frozenset()
    key: str | None = None  # store key of the request being processed

    @property
    def current(self) -> Any:
        return self.history[-1]


@dataclass(frozen=True)
class NaiveConfig:
    """Lock and function state, plus the bookkeeping a run needs.

    ``store`` is the map committed by the last transaction; it seeds the next
    transaction unless explicit candidate stores are given.
    """

    lock: NaiveLock
    state: NaiveState
    next_x: int = 1
    released: int = 0
    rollbacks: int = 0
    store: JsonObject = EMPTY_OBJECT

    def to_plain(self) -> dict:
        return {
            "lock": to_plain(self.lock),
            "state": {
                "f": self.state.f,
                "busy": self.state.busy,
                "history": to_plain(self.state.history),
                "buffer": sorted((to_plain(b) for b in self.state.buffer), key=canonical),
                "key": self.state.key,
            },
            "next_x": self.next_x,
            "released": self.released,
            "rollbacks": self.rollbacks,
            "store": to_plain(self.store),
        }

    @cached_property
    def digest(self) -> str:
        return digest(self)


@dataclass(frozen=True, eq=False)
class NaiveTransition:
    rule: str
    label: Any
    detail: tuple
    next: NaiveConfig = field(repr=False)


def naive_initial(model: FunctionModel, workload: Workload | None = None, first_x: int = 1) -> NaiveConfig:
    store = workload.store if workload is not None and workload.store is not None else EMPTY_OBJECT
    state = NaiveState(model.name, None, (model.initial(),))
    return NaiveConfig(ABSENT, state, next_x=first_x, store=store)


class NaiveSemantics:
    """Transition function of the naive semantics for one model.

    ``stores`` lists the maps a transaction may start from; by default a
    transaction sees what the previous one committed. ``rollback_budget``
    bounds N-Rollback applications per run.
    """

    def __init__(self, model: FunctionModel, stores: Iterable[Any] | None = None, rollback_budget: int = 0):
        self.model = model
        self.stores = None if stores is None else tuple(freeze(s) for s in stores)
        self.rollback_budget = rollback_budget

    def _events(self, workload: Workload) -> list:
        return [e for e in workload.ordered if e.target == self.model.name]

    def enabled(self, config: NaiveConfig, workload: Workload) -> list[NaiveTransition]:
        model = self.model
        lock, st = config.lock, config.state
        out: list[NaiveTransition] = []

        def go(rule, label, detail, **changes):
            out.append(NaiveTransition(rule, label, detail, _evolve(config, **changes)))

        if st.busy is None:
            events = self._events(workload)
            if isinstance(lock, Absent) and config.released < len(events):
                event = events[config.released]
                x = config.next_x
                sigma0 = model.initial()
                sigma1 = model.recv_of(event.payload, sigma0)
                if sigma1 is not None:
                    key = model.key_of(event.payload)
                    go("N-Start", Start(model.name, x, event.payload), ("x", x),
                       state=NaiveState(st.f, x, (sigma0, sigma1), st.buffer, key if key is not None else str(x)),
                       next_x=x + 1, released=config.released + 1)
            for x, v in sorted(st.buffer, key=lambda b: (b[0], canonical(b[1]))):
                if isinstance(lock, Absent):
                    go("N-Emit-Stop", Stop(x, v), ("x", x),
                       state=NaiveState(st.f, None, st.history, st.buffer - {(x, v)}))
                elif isinstance(lock, Committed) and _same(lock.value, v):
                    go("N-Emit-Stop", Stop(x, v), ("x", x), lock=ABSENT,
                       state=NaiveState(st.f, None, st.history, st.buffer - {(x, v)}))
            return out

        x = st.busy
        result = model.step_of(st.current)
        if result is not None:
            sigma, command = result
            pushed = st.history + (sigma,)
            busy = NaiveState(st.f, x, pushed, st.buffer, st.key)
            if isinstance(command, Epsilon):
                go("N-Step", INTERNAL, ("x", x), state=busy)
            elif isinstance(command, Return):
                go("N-Buffer-Stop", INTERNAL, ("x", x, "v", command.value),
                   state=NaiveState(st.f, None, (sigma,), st.buffer | {(x, command.value)}))
            elif isinstance(command, BeginTx):
                if isinstance(lock, Absent):
                    candidates = (config.store,) if self.stores is None else self.stores
                    for n, store in enumerate(candidates):
                        go("N-BeginTx", INTERNAL, ("x", x, "store", n),
                           lock=Held(store, st.history), state=busy)
            elif isinstance(command, EndTx):
                if isinstance(lock, Held) and st.key in lock.store:
                    go("N-EndTx", INTERNAL, ("x", x, "key", st.key),
                       lock=Committed(lock.store[st.key]), state=busy, store=lock.store)
            elif isinstance(command, Read):
                if isinstance(lock, Held):
                    value = lock.store.get(command.key)
                    after = model.recv_of(value, sigma)
                    if after is not None:
                        go("N-Read", INTERNAL, ("x", x, "key", command.key, "value", value),
                           state=NaiveState(st.f, x, pushed + (after,), st.buffer, st.key))
            elif isinstance(command, Write):
                if isinstance(lock, Held):
                    go("N-Write", INTERNAL, ("x", x, "key", command.key),
                       lock=Held(lock.store.set(command.key, freeze(command.value)), lock.saved), state=busy)
        if isinstance(lock, Held) and config.rollbacks < self.rollback_budget:
            go("N-Rollback", INTERNAL, ("x", x), lock=ABSENT,
               state=NaiveState(st.f, x, lock.saved, st.buffer, st.key), rollbacks=config.rollbacks + 1)
        return out

    def successors(self, workload: Workload):
        return lambda config: self.enabled(config, workload)


def _same(a: Any, b: Any) -> bool:
    return canonical(a) == canonical(b)


def _evolve(config: NaiveConfig, **changes: Any) -> NaiveConfig:
    return replace(config, **changes)


def naive_enabled(lock: NaiveLock, state: NaiveState, workload: Workload, model: FunctionModel,
                  next_x: int = 1, released: int = 0) -> list[tuple]:
    """Enabled steps as (rule, label, lock', state') tuples."""
    config = NaiveConfig(lock, state, next_x, released)
    return [(t.rule, t.label, t.next.lock, t.next.state) for t in NaiveSemantics(model).enabled(config, workload)]


def naive_run(
    model: FunctionModel,
    workload: Workload,
    scheduler: Scheduler = Random(),
    rollback_budget: int = 0,
    stores: Iterable[Any] | None = None,
    config: NaiveConfig | None = None,
) -> Trace | list[Trace]:
    """One trace (Random, Script) or every maximal trace (Exhaustive)."""
    sem = NaiveSemantics(model, stores, rollback_budget)
    if config is None:
        config = naive_initial(model, workload)
    successors = sem.successors(workload)
    if isinstance(scheduler, Exhaustive):
        return all_traces(config, successors, scheduler.depth, "naive")
    if isinstance(scheduler, (Random, Script)):
        return drive(config, successors, scheduler, "naive")
    raise TypeError(f"unknown scheduler {scheduler!r}")


# -- trace classification -----------------------------------------------------


class NotApplicable(Exception):
    """The model does not use the key-value store."""


@dataclass(frozen=True)
class FreshRequestClass:
    x: int


@dataclass(frozen=True)
class ReplayClass:
    x: int


@dataclass(frozen=True)
class NonConforming:
    x: int
    index: int  # 1-based step of the original trace (len+1 when the trace stops short)
    reason: str


TraceClass = FreshRequestClass | ReplayClass | NonConforming


def _without_rollbacks(steps: list) -> list[tuple[int, Any]]:
    """Steps with every rolled-back transaction attempt removed, 1-based indices kept."""
    kept: list[tuple[int, Any]] = []
    for i, s in enumerate(steps, 1):
        if s.rule == "N-Rollback":
            while kept and kept[-1][1].rule != "N-BeginTx":
                kept.pop()
            if kept:
                kept.pop()
            continue
        kept.append((i, s))
    return kept


def _request_of(step) -> int | None:
    detail = step.detail or ()
    return detail[1] if len(detail) >= 2 and detail[0] == "x" else None


def _classify_one(x: int, steps: list[tuple[int, Any]], key: str | None, end: int, pending: Any) -> TraceClass:
    def bad(pos: int, reason: str) -> NonConforming:
        index = steps[pos][0] if pos < len(steps) else end
        return NonConforming(x, index, reason)

    rules = [s.rule for _, s in steps]
    if not rules or rules[0] != "N-Start":
        return bad(0, "request does not begin with N-Start")
    if len(rules) < 2 or rules[1] != "N-BeginTx":
        found = rules[1] if len(rules) > 1 else pending or "nothing"
        return bad(1, f"expected N-BeginTx after N-Start, found {found}")
    if len(rules) < 3 or rules[2] != "N-Read" or steps[2][1].detail[3] != key:
        found = rules[2] if len(rules) > 2 else pending or "nothing"
        return bad(2, f"expected N-Read of {key} after N-BeginTx, found {found}")
    hit = steps[2][1].detail[5] is not None
    pos = 3
    if hit:
        expected = ["N-EndTx", "N-Buffer-Stop", "N-Emit-Stop"]
    else:
        while pos < len(rules) and rules[pos] in ("N-Read", "N-Write", "N-Step"):
            detail = steps[pos][1].detail
            if rules[pos] != "N-Step" and detail[3] == key:
                break
            pos += 1
        if pos >= len(rules) or rules[pos] != "N-Write":
            found = rules[pos] if pos < len(rules) else pending or "nothing"
            return bad(pos, f"expected N-Write of {key} before committing, found {found}")
        pos += 1
        expected = ["N-EndTx", "N-Buffer-Stop", "N-Emit-Stop"]
    for rule in expected:
        if pos >= len(rules) or rules[pos] != rule:
            found = rules[pos] if pos < len(rules) else pending or "nothing"
            return bad(pos, f"expected {rule}, found {found}")
        pos += 1
    if pos != len(rules):
        return bad(pos, f"unexpected {rules[pos]} after the response")
    return ReplayClass(x) if hit else FreshRequestClass(x)


def classify_requests(trace: Trace, model: FunctionModel) -> dict[int, TraceClass]:
    """Classify each request of a naive trace against the two canonical shapes.

    A request whose steps stop short is NonConforming at the step that never
    happened; when the trace ended because nothing was enabled, the reason
    names the command the model was stuck on.
    """
    if not model.transactional:
        raise NotApplicable(f"{model.name} does not use the key-value store")
    kept = _without_rollbacks(trace.steps)
    per: dict[int, list] = {}
    keys: dict[int, str | None] = {}
    for i, s in kept:
        x = _request_of(s)
        if x is None:
            continue
        per.setdefault(x, []).append((i, s))
        if s.rule == "N-Start":
            keys[x] = s.state.state.key
    end = len(trace.steps) + 1
    final = trace.final
    pending = None
    if not trace.truncated and final.state.busy is not None:
        result = model.step_of(final.state.current)
        pending = "no step" if result is None else f"a stuck {type(result[1]).__name__} command"
    out = {}
    for x, steps in sorted(per.items()):
        stuck_here = pending if final.state.busy == x else None
        if trace.truncated and stuck_here is None and steps[-1][1].rule != "N-Emit-Stop":
            stuck_here = "the end of the explored trace"
        out[x] = _classify_one(x, steps, keys.get(x), end, stuck_here)
    return out


def classify_trace(trace: Trace, model: FunctionModel, x: int | None = None) -> TraceClass:
    """Classification of request ``x`` (default: the first request in the trace)."""
    classes = classify_requests(trace, model)
    if not classes:
        raise ValueError("the trace starts no request")
    return classes[min(classes) if x is None else x]


def is_complete(trace: Trace) -> bool:
    """Every started request has emitted its response."""
    started = {lab.x for lab in trace.labels if isinstance(lab, Start)}
    stopped = {lab.x for lab in trace.labels if isinstance(lab, Stop)}
    return started <= stopped and not trace.truncated
