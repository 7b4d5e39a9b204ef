"""Labels, traces, schedulers and state-space exploration shared by both semantics."""

from __future__ import annotations

import random
from collections import deque
from collections.abc import Callable, Hashable, Sequence
from dataclasses import dataclass, field
from typing import Any

from .jsonvalue import dumps, to_plain


# -- labels -----------------------------------------------------------------


@dataclass(frozen=True)
class Internal:
    def render(self) -> str:
        return "internal"

    def to_plain(self) -> dict:
        return {"kind": "internal"}


@dataclass(frozen=True)
class Start:
    f: str
    x: int
    v: Any

    def render(self) -> str:
        return f"start({self.f},{self.x},{dumps(self.v)})"

    def to_plain(self) -> dict:
        return {"kind": "start", "f": self.f, "x": self.x, "v": to_plain(self.v)}


@dataclass(frozen=True)
class Stop:
    x: int
    v: Any

    def render(self) -> str:
        return f"stop({self.x},{dumps(self.v)})"

    def to_plain(self) -> dict:
        return {"kind": "stop", "x": self.x, "v": to_plain(self.v)}


Label = Internal | Start | Stop
INTERNAL = Internal()


def label_request(label: Label) -> int | None:
    return None if isinstance(label, Internal) else label.x


def same_label(a: Label, b: Label) -> bool:
    return dumps(to_plain(a)) == dumps(to_plain(b))


def observable_project(labels: Any, x: int) -> list[Label]:
    """The Start/Stop labels that mention request ``x``, in order."""
    if isinstance(labels, Trace):
        labels = labels.labels
    return [lab for lab in labels if label_request(lab) == x]


# -- schedulers -------------------------------------------------------------


@dataclass(frozen=True)
class Random:
    seed: int = 0
    max_steps: int = 1000


@dataclass(frozen=True)
class Exhaustive:
    depth: int


@dataclass(frozen=True)
class Script:
    """Replays a derivation.

    Each choice is an index into the enabled list, a rule name (first enabled
    instance of that rule) or ``"Rule#k"`` (its k-th enabled instance).
    """

    choices: tuple


Scheduler = Random | Exhaustive | Script


class ScriptError(Exception):
    pass


def resolve_choice(transitions: Sequence, choice: Any, step: int) -> int:
    if isinstance(choice, bool):
        raise ScriptError(f"step {step}: invalid choice {choice!r}")
    if isinstance(choice, int):
        if 0 <= choice < len(transitions):
            return choice
        raise ScriptError(f"step {step}: choice {choice} out of range ({len(transitions)} enabled)")
    if isinstance(choice, str):
        rule, _, nth = choice.partition("#")
        k = int(nth) if nth else 0
        hits = [i for i, t in enumerate(transitions) if t.rule == rule]
        if k < len(hits):
            return hits[k]
        enabled = ", ".join(t.rule for t in transitions) or "nothing"
        raise ScriptError(f"step {step}: {choice} is not enabled (enabled: {enabled})")
    raise ScriptError(f"step {step}: invalid choice {choice!r}")


# -- traces -----------------------------------------------------------------


@dataclass(frozen=True)
class TraceStep:
    rule: str
    label: Label
    state: Any
    detail: Any = None
    choice: int = 0


@dataclass
class Trace:
    semantics: str
    initial: Any
    steps: list[TraceStep] = field(default_factory=list)
    truncated: bool = False

    @property
    def labels(self) -> list[Label]:
        return [s.label for s in self.steps]

    @property
    def rules(self) -> list[str]:
        return [s.rule for s in self.steps]

    @property
    def final(self) -> Any:
        return self.steps[-1].state if self.steps else self.initial

    @property
    def choices(self) -> list[int]:
        return [s.choice for s in self.steps]

    def records(self) -> list[dict]:
        return [
            {
                "step": i,
                "semantics": self.semantics,
                "rule": s.rule,
                "label": s.label.render(),
                "digest": s.state.digest,
            }
            for i, s in enumerate(self.steps, 1)
        ]


def drive(initial: Any, successors: Callable[[Any], list], scheduler: Scheduler, semantics: str) -> Trace:
    """Run one trace under a Random or Script scheduler."""
    trace = Trace(semantics, initial)
    state = initial
    if isinstance(scheduler, Random):
        rng = random.Random(scheduler.seed)
        for _ in range(scheduler.max_steps):
            options = successors(state)
            if not options:
                return trace
            i = rng.randrange(len(options))
            state = _extend(trace, options[i], i)
        trace.truncated = bool(successors(state))
        return trace
    if isinstance(scheduler, Script):
        for n, choice in enumerate(scheduler.choices, 1):
            options = successors(state)
            i = resolve_choice(options, choice, n)
            state = _extend(trace, options[i], i)
        return trace
    raise TypeError(f"drive does not handle {scheduler!r}")


def _extend(trace: Trace, t: Any, i: int) -> Any:
    trace.steps.append(TraceStep(t.rule, t.label, t.next, t.detail, i))
    return t.next


# -- state graphs -----------------------------------------------------------


@dataclass(frozen=True)
class Edge:
    rule: str
    label: Label
    detail: Any
    choice: int
    target: int


class BudgetExceeded(Exception):
    def __init__(self, message: str, partial: Any = None):
        super().__init__(message)
        self.partial = partial


@dataclass
class StateGraph:
    """Breadth-first exploration with visited-set pruning.

    ``frontier`` marks nodes at the depth limit whose successors were not
    explored.
    """

    states: list = field(default_factory=list)
    index: dict = field(default_factory=dict)
    edges: list = field(default_factory=list)
    depth: list = field(default_factory=list)
    parent: list = field(default_factory=list)
    frontier: set = field(default_factory=set)

    def add(self, state: Hashable, depth: int, parent: tuple | None) -> tuple[int, bool]:
        node = self.index.get(state)
        if node is not None:
            return node, False
        node = len(self.states)
        self.index[state] = node
        self.states.append(state)
        self.edges.append([])
        self.depth.append(depth)
        self.parent.append(parent)
        return node, True

    def path_to(self, node: int) -> list[tuple[int, Edge]]:
        """Tree path from the root as (source, edge) pairs."""
        path = []
        while self.parent[node] is not None:
            src, k = self.parent[node]
            path.append((src, self.edges[src][k]))
            node = src
        path.reverse()
        return path

    def trace_to(self, node: int, semantics: str) -> Trace:
        trace = Trace(semantics, self.states[0])
        for _, edge in self.path_to(node):
            trace.steps.append(TraceStep(edge.rule, edge.label, self.states[edge.target], edge.detail, edge.choice))
        return trace

    def __len__(self) -> int:
        return len(self.states)


def explore(
    initial: Hashable,
    successors: Callable[[Any], list],
    depth: int,
    node_limit: int | None = None,
) -> StateGraph:
    graph = StateGraph()
    graph.add(initial, 0, None)
    queue = deque([0])
    while queue:
        node = queue.popleft()
        if graph.depth[node] >= depth:
            if successors(graph.states[node]):
                graph.frontier.add(node)
            continue
        for i, t in enumerate(successors(graph.states[node])):
            target, new = graph.add(t.next, graph.depth[node] + 1, (node, len(graph.edges[node])))
            graph.edges[node].append(Edge(t.rule, t.label, t.detail, i, target))
            if new:
                if node_limit is not None and len(graph) > node_limit:
                    raise BudgetExceeded(f"more than {node_limit} states", graph)
                queue.append(target)
    return graph


def tree_traces(graph: StateGraph, semantics: str) -> list[Trace]:
    """Maximal traces of the breadth-first tree: one per tree leaf."""
    has_child = [False] * len(graph)
    for node in range(1, len(graph)):
        has_child[graph.parent[node][0]] = True
    traces = []
    for node in range(len(graph)):
        if not has_child[node]:
            trace = graph.trace_to(node, semantics)
            trace.truncated = node in graph.frontier or bool(graph.edges[node])
            traces.append(trace)
    return traces


def all_traces(initial: Any, successors: Callable[[Any], list], depth: int, semantics: str) -> list[Trace]:
    """Every maximal trace up to ``depth`` steps, without pruning."""
    out: list[Trace] = []
    path: list[TraceStep] = []

    def visit(state, remaining):
        options = successors(state) if remaining > 0 else []
        if not options:
            trace = Trace(semantics, initial, list(path))
            trace.truncated = remaining == 0 and bool(successors(state))
            out.append(trace)
            return
        for i, t in enumerate(options):
            path.append(TraceStep(t.rule, t.label, t.next, t.detail, i))
            visit(t.next, remaining - 1)
            path.pop()

    visit(initial, depth)
    return out
