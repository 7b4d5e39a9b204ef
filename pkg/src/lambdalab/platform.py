"""The serverless platform as a labeled transition system.

A configuration is a multiset of components (function instances, requests,
responses and composition programs) plus an optional key-value store with a
single lock. ``Platform.enabled`` lists every rule instance that can fire;
rule providers for the store and for composition programs plug into the
same configuration type.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any

from .jsonvalue import EMPTY_OBJECT, JsonObject, digest, dumps, freeze, to_plain
from .models import BeginTx, Epsilon, EndTx, FunctionModel, Read, Return, Write
from .trace import (
    INTERNAL,
    Exhaustive,
    Label,
    Scheduler,
    Start,
    StateGraph,
    Stop,
    Trace,
    drive,
    explore,
    tree_traces,
)
from .workload import Workload

RULES = (
    "Req", "Cold", "Warm", "Hidden", "Resp", "Die",
    "Read", "Write", "BeginTx", "EndTx", "DropTx",
    "P-NewReq", "P-Start", "P-Respond", "P-Seq1", "P-Seq2",
    "P-Invoke1", "P-Invoke2", "P-First1", "P-First2", "P-Die",
    # composition steps beyond the core calculus
    "P-Transform", "P-Cond", "P-Get", "P-Fault",
)


# -- components -------------------------------------------------------------


@dataclass(frozen=True)
class Instance:
    f: str
    busy: int | None
    state: Any
    y: int

    @property
    def idle(self) -> bool:
        return self.busy is None


@dataclass(frozen=True)
class Request:
    f: str
    x: int
    v: Any


@dataclass(frozen=True)
class Response:
    x: int
    v: Any


@dataclass(frozen=True)
class ProgramRequest:
    name: str
    program: Any
    x: int
    v: Any


@dataclass(frozen=True)
class RunningProgram:
    program: Any
    v: Any
    k: Any


@dataclass(frozen=True)
class WaitingProgram:
    """A program paused on a pending request (``waiting_on``) or holding a value."""

    k: Any
    waiting_on: int | None = None
    v: Any = None


Component = Instance | Request | Response | ProgramRequest | RunningProgram | WaitingProgram


@dataclass(frozen=True)
class Free:
    pass


@dataclass(frozen=True)
class Owned:
    y: int
    snapshot: JsonObject


FREE = Free()


@dataclass(frozen=True)
class Store:
    committed: JsonObject = EMPTY_OBJECT
    lock: Free | Owned = FREE


@dataclass(frozen=True, eq=False)
class Configuration:
    components: tuple = ()
    store: Store | None = None
    next_x: int = 1
    next_y: int = 1
    released: int = 0
    dies: int = 0
    clock: int = 0

    @cached_property
    def _key(self) -> tuple:
        return (
            frozenset(Counter(self.components).items()),
            self.store,
            self.next_x,
            self.next_y,
            self.released,
            self.dies,
            self.clock,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return self._key == other._key

    def __hash__(self) -> int:
        return hash(self._key)

    def to_plain(self) -> dict:
        parts = sorted((to_plain(c) for c in self.components), key=dumps)
        return {
            "components": parts,
            "store": to_plain(self.store),
            "next_x": self.next_x,
            "next_y": self.next_y,
            "released": self.released,
            "dies": self.dies,
            "clock": self.clock,
        }

    @cached_property
    def digest(self) -> str:
        return digest(self)

    def of_type(self, kind: type) -> list:
        return [c for c in self.components if isinstance(c, kind)]

    @property
    def instances(self) -> list[Instance]:
        return self.of_type(Instance)

    @property
    def requests(self) -> list[Request]:
        return self.of_type(Request)

    @property
    def responses(self) -> list[Response]:
        return self.of_type(Response)

    def response(self, x: int) -> Response | None:
        for c in self.components:
            if isinstance(c, Response) and c.x == x:
                return c
        return None

    def evolve(self, remove: Iterable[Component] = (), add: Iterable[Component] = (), **changes: Any) -> "Configuration":
        """A copy without one occurrence of each of ``remove``, plus ``add``."""
        comps = list(self.components)
        for c in remove:
            for i in range(len(comps) - 1, -1, -1):
                if comps[i] is c:
                    del comps[i]
                    break
            else:
                comps.remove(c)
        comps.extend(add)
        return replace(self, components=tuple(comps), **changes)


@dataclass(frozen=True)
class FaultBudget:
    """Caps that keep exploration finite.

    ``die`` bounds Die/P-Die applications per trace, ``max_instances_per_request``
    bounds concurrent instances (or program copies) serving one request and
    ``max_requests`` bounds released external events.
    """

    die: int = 0
    max_instances_per_request: int = 2
    max_requests: int | None = None


class StaleTransition(Exception):
    pass


@dataclass(frozen=True, eq=False)
class Transition:
    rule: str
    label: Label
    detail: tuple
    build: Callable[[], Configuration] = field(repr=False)

    @cached_property
    def next(self) -> Configuration:
        return self.build()


# -- the engine -------------------------------------------------------------


class Platform:
    """Rule engine for one set of deployed functions.

    ``resolver`` maps URLs to fixtures for the composition language's fetch.
    """

    def __init__(
        self,
        models: Mapping[str, FunctionModel] | Iterable[FunctionModel],
        resolver: Callable[[str], Any] | None = None,
        with_store: bool | None = None,
    ):
        if not isinstance(models, Mapping):
            models = {m.name: m for m in models}
        self.models = dict(models)
        self.resolver = resolver
        if with_store is None:
            with_store = any(m.transactional for m in self.models.values())
        self.with_store = with_store

    def model(self, f: str) -> FunctionModel:
        try:
            return self.models[f]
        except KeyError:
            raise KeyError(f"no function named {f!r} is deployed") from None

    def initial(self, workload: Workload | None = None) -> Configuration:
        seed = workload.store if workload is not None else None
        if seed is not None or self.with_store:
            return Configuration(store=Store(seed if seed is not None else EMPTY_OBJECT, FREE))
        return Configuration()

    def check_workload(self, workload: Workload) -> None:
        for event in workload.events:
            if event.program is None:
                self.model(event.target)

    # -- rules --

    def enabled(self, config: Configuration, workload: Workload, budget: FaultBudget) -> list[Transition]:
        out: list[Transition] = []

        def make(remove=(), add=(), **changes) -> Configuration:
            clock = min(config.clock + 1, workload.horizon)
            return config.evolve(remove, add, clock=clock, **changes)

        self._request_rules(config, workload, budget, make, out)
        self._instance_rules(config, budget, make, out)
        if config.store is not None:
            self._store_rules(config, make, out)
        if any(isinstance(c, (ProgramRequest, RunningProgram, WaitingProgram)) for c in config.components):
            from .spl.machine import program_rules

            out.extend(program_rules(self, config, budget, make))
        if config.dies < budget.die:
            for inst in sorted(config.instances, key=lambda i: i.y):
                out.append(Transition(
                    "Die", INTERNAL, ("y", inst.y),
                    lambda inst=inst: make([inst], dies=config.dies + 1),
                ))
        return out

    def _request_rules(self, config, workload, budget, make, out):
        events = workload.ordered
        if config.released >= len(events):
            return
        if budget.max_requests is not None and config.released >= budget.max_requests:
            return
        event = events[config.released]
        if config.clock < event.earliest_step:
            return
        x = config.next_x
        if event.program is not None:
            comp, rule = ProgramRequest(event.target, event.program, x, event.payload), "P-NewReq"
        else:
            comp, rule = Request(event.target, x, event.payload), "Req"
        out.append(Transition(
            rule, Start(event.target, x, event.payload), ("x", x),
            lambda: make(add=[comp], next_x=x + 1, released=config.released + 1),
        ))

    def _instance_rules(self, config, budget, make, out):
        requests = sorted(config.requests, key=lambda r: r.x)
        instances = sorted(config.instances, key=lambda i: i.y)
        live = {r.x: r for r in requests}
        serving = Counter(i.busy for i in instances if not i.idle)
        cap = budget.max_instances_per_request

        for req in requests:
            if serving[req.x] >= cap:
                continue
            model = self.model(req.f)
            y = config.next_y
            for tag in model.tags:
                state = model.recv_of(req.v, model.init(tag))
                if state is None:
                    continue
                inst = Instance(req.f, req.x, state, y)
                detail = ("x", req.x, "y", y) if len(model.tags) == 1 else ("x", req.x, "y", y, "tag", tag)
                out.append(Transition(
                    "Cold", INTERNAL, detail,
                    lambda inst=inst: make(add=[inst], next_y=inst.y + 1),
                ))
            for idle in instances:
                if not idle.idle or idle.f != req.f:
                    continue
                state = model.recv_of(req.v, idle.state)
                if state is None:
                    continue
                out.append(Transition(
                    "Warm", INTERNAL, ("x", req.x, "y", idle.y),
                    lambda idle=idle, state=state, req=req: make(
                        [idle], [Instance(idle.f, req.x, state, idle.y)]),
                ))

        store = config.store
        for inst in instances:
            if inst.idle:
                continue
            model = self.model(inst.f)
            result = model.step_of(inst.state)
            if result is None:
                continue
            state, command = result
            detail = ("y", inst.y)
            moved = Instance(inst.f, inst.busy, state, inst.y)
            if isinstance(command, Epsilon):
                out.append(Transition("Hidden", INTERNAL, detail,
                                      lambda inst=inst, moved=moved: make([inst], [moved])))
            elif isinstance(command, Return):
                req = live.get(inst.busy)
                if req is None:
                    continue
                value = command.value
                done = Instance(inst.f, None, state, inst.y)
                out.append(Transition(
                    "Resp", Stop(inst.busy, value), detail,
                    lambda inst=inst, req=req, done=done, value=value: make(
                        [inst, req], [done, Response(req.x, value)]),
                ))
            elif store is None:
                continue
            elif isinstance(command, BeginTx):
                if isinstance(store.lock, Free):
                    locked = Store(store.committed, Owned(inst.y, store.committed))
                    out.append(Transition("BeginTx", INTERNAL, detail,
                                          lambda inst=inst, moved=moved, locked=locked: make(
                                              [inst], [moved], store=locked)))
            elif not (isinstance(store.lock, Owned) and store.lock.y == inst.y):
                continue
            elif isinstance(command, EndTx):
                done_store = Store(store.lock.snapshot, FREE)
                out.append(Transition("EndTx", INTERNAL, detail,
                                      lambda inst=inst, moved=moved, s=done_store: make(
                                          [inst], [moved], store=s)))
            elif isinstance(command, Read):
                value = store.lock.snapshot.get(command.key)
                after = model.recv_of(value, state)
                if after is None:
                    continue
                read = Instance(inst.f, inst.busy, after, inst.y)
                out.append(Transition("Read", INTERNAL, detail + ("key", command.key),
                                      lambda inst=inst, read=read: make([inst], [read])))
            elif isinstance(command, Write):
                snapshot = store.lock.snapshot.set(command.key, freeze(command.value))
                written = Store(store.committed, Owned(inst.y, snapshot))
                out.append(Transition("Write", INTERNAL, detail + ("key", command.key),
                                      lambda inst=inst, moved=moved, s=written: make(
                                          [inst], [moved], store=s)))

    def _store_rules(self, config, make, out):
        lock = config.store.lock
        if isinstance(lock, Owned) and not any(i.y == lock.y for i in config.instances):
            released = Store(config.store.committed, FREE)
            out.append(Transition("DropTx", INTERNAL, ("y", lock.y),
                                  lambda: make(store=released)))

    # -- checked application and scheduling --

    def apply(self, config: Configuration, transition: Transition, workload: Workload,
              budget: FaultBudget) -> Configuration:
        for t in self.enabled(config, workload, budget):
            if t.rule == transition.rule and t.detail == transition.detail:
                return t.next
        raise StaleTransition(f"{transition.rule} {transition.detail} is not enabled")

    def successors(self, workload: Workload, budget: FaultBudget) -> Callable[[Configuration], list[Transition]]:
        return lambda config: self.enabled(config, workload, budget)

    def run(self, config: Configuration | None, workload: Workload, scheduler: Scheduler,
            budget: FaultBudget = FaultBudget()) -> Trace | list[Trace]:
        """One trace for Random/Script; every maximal breadth-first trace for Exhaustive."""
        if config is None:
            config = self.initial(workload)
        successors = self.successors(workload, budget)
        if isinstance(scheduler, Exhaustive):
            graph = explore(config, successors, scheduler.depth)
            return tree_traces(graph, "lambda")
        return drive(config, successors, scheduler, "lambda")

    def explore(self, workload: Workload, budget: FaultBudget, depth: int,
                node_limit: int | None = None, config: Configuration | None = None) -> StateGraph:
        if config is None:
            config = self.initial(workload)
        return explore(config, self.successors(workload, budget), depth, node_limit)


def stops_per_request(trace: Trace) -> Counter:
    return Counter(lab.x for lab in trace.labels if isinstance(lab, Stop))
