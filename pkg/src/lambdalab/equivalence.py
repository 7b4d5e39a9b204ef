"""Checkers relating the platform to the naive semantics.

* :func:`check_safety_relation` validates a candidate safety relation by
  enumerating the model's states.
* :func:`check_weak_bisim` and :func:`check_extended_bisim` play the weak
  bisimulation game between a bounded exploration of the platform and the
  naive semantics, one focus request at a time.
* :func:`idempotence_check` drives a transactional model through both
  outcomes of its first read and checks the commit protocol clause by clause.
"""

from __future__ import annotations

from collections import deque
from collections.abc import Iterable
from dataclasses import dataclass, field, replace
from typing import Any

from .jsonvalue import EMPTY_OBJECT, canonical, dumps, freeze, to_plain
from .models import (
    BeginTx,
    EndTx,
    Epsilon,
    FunctionModel,
    Read,
    Return,
    SafetyRelation,
    Write,
    enumerate_states,
    same_command,
)
from .naive import Committed, Held, NaiveConfig, NaiveSemantics, NotApplicable, naive_initial, naive_run
from .platform import FaultBudget, Platform
from .trace import BudgetExceeded, Random, Script, StateGraph, Stop, Trace, TraceStep, explore, label_request, observable_project
from .workload import Workload

# -- safety relations -------------------------------------------------------------


@dataclass(frozen=True)
class Witness:
    """States (and request value) on which a clause fails."""

    clause: int
    kind: str
    states: tuple
    value: Any = None
    detail: str = ""

    def to_plain(self) -> dict:
        return {
            "clause": self.clause,
            "kind": self.kind,
            "states": [to_plain(s) for s in self.states],
            "value": to_plain(self.value),
            "detail": self.detail,
        }


@dataclass(frozen=True)
class ClauseResult:
    clause: int
    passed: bool
    witness: Witness | None = None


@dataclass(frozen=True)
class SafetyReport:
    model: str
    relation: str
    states: int
    clauses: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    @property
    def failed(self) -> list[int]:
        return [c.clause for c in self.clauses if not c.passed]

    def condition(self, n: int) -> ClauseResult:
        return self.clauses[n - 1]

    condition1 = property(lambda self: self.condition(1))
    condition2 = property(lambda self: self.condition(2))
    condition3 = property(lambda self: self.condition(3))
    condition4 = property(lambda self: self.condition(4))

    def to_plain(self) -> dict:
        return {
            "model": self.model,
            "relation": self.relation,
            "states": self.states,
            "passed": self.passed,
            "clauses": [
                {"clause": c.clause, "passed": c.passed,
                 "witness": None if c.witness is None else c.witness.to_plain()}
                for c in self.clauses
            ],
        }


def _inputs(model: FunctionModel) -> list:
    seen, out = set(), []
    for v in tuple(model.requests) + tuple(model.read_values):
        key = canonical(v)
        if key not in seen:
            seen.add(key)
            out.append(v)
    return out


def _related_to_init(model: FunctionModel, relation: SafetyRelation, state: Any) -> bool:
    return any(relation(state, init) for init in model.initial_states())


def check_witness(model: FunctionModel, relation: SafetyRelation, w: Witness) -> bool:
    """Re-evaluate a witness; True when it still shows the violation."""
    s = w.states
    if w.kind == "reflexive":
        return not relation(s[0], s[0])
    if w.kind == "symmetric":
        return relation(s[0], s[1]) and not relation(s[1], s[0])
    if w.kind == "transitive":
        return relation(s[0], s[1]) and relation(s[1], s[2]) and not relation(s[0], s[2])
    if w.kind == "recv":
        a, b = model.recv_of(w.value, s[0]), model.recv_of(w.value, s[1])
        return relation(s[0], s[1]) and a is not None and b is not None and not relation(a, b)
    if w.kind == "step":
        a, b = model.step_of(s[0]), model.step_of(s[1])
        if not relation(s[0], s[1]) or a is None or b is None:
            return False
        return not relation(a[0], b[0]) or not same_command(a[1], b[1])
    if w.kind == "initial":
        return not relation(s[0], s[1])
    if w.kind == "final":
        out = model.step_of(s[0])
        return out is not None and isinstance(out[1], Return) and not _related_to_init(model, relation, out[0])
    raise ValueError(f"unknown witness kind {w.kind!r}")


def check_safety_relation(model: FunctionModel, relation: SafetyRelation, state_limit: int = 50_000) -> SafetyReport:
    """Check the four safety-relation clauses over every enumerated state.

    ``recv`` and ``step`` are partial; clauses 2 and 3 quantify over the
    pairs where both sides are defined. Raises ``UnsupportedModel`` when the
    state space cannot be enumerated.
    """
    states = enumerate_states(model, state_limit)
    n = len(states)
    rows = [[relation(a, b) for b in states] for a in states]
    related = [(i, j) for i in range(n) for j in range(n) if rows[i][j]]

    def first_equivalence_failure() -> Witness | None:
        for i in range(n):
            if not rows[i][i]:
                return Witness(1, "reflexive", (states[i],), detail="a state is not related to itself")
        for i, j in related:
            if not rows[j][i]:
                return Witness(1, "symmetric", (states[i], states[j]), detail="relation is not symmetric")
        succ = [{j for j in range(n) if rows[i][j]} for i in range(n)]
        for i, j in related:
            missing = succ[j] - succ[i]
            if missing:
                k = min(missing)
                return Witness(1, "transitive", (states[i], states[j], states[k]), detail="relation is not transitive")
        return None

    def first_recv_failure() -> Witness | None:
        inputs = _inputs(model)
        for i, j in related:
            for v in inputs:
                a, b = model.recv_of(v, states[i]), model.recv_of(v, states[j])
                if a is not None and b is not None and not relation(a, b):
                    return Witness(2, "recv", (states[i], states[j]), v, "receiving the same value breaks the relation")
        return None

    def first_step_failure() -> Witness | None:
        for i, j in related:
            a, b = model.step_of(states[i]), model.step_of(states[j])
            if a is None or b is None:
                continue
            if not same_command(a[1], b[1]):
                return Witness(3, "step", (states[i], states[j]),
                               detail=f"related states emit {a[1]} and {b[1]}")
            if not relation(a[0], b[0]):
                return Witness(3, "step", (states[i], states[j]), detail="successor states are not related")
        return None

    def first_final_failure() -> Witness | None:
        # a fresh instance may start from any initial state, so those must form one class
        inits = model.initial_states()
        for a in inits:
            for b in inits:
                if not relation(a, b):
                    return Witness(4, "initial", (a, b), detail="two initial states are not related")
        for s in states:
            out = model.step_of(s)
            if out is not None and isinstance(out[1], Return) and not _related_to_init(model, relation, out[0]):
                return Witness(4, "final", (s,), detail="state after returning is not related to the initial state")
        return None

    checks = (first_equivalence_failure, first_recv_failure, first_step_failure, first_final_failure)
    clauses = []
    for number, check in enumerate(checks, 1):
        w = check()
        clauses.append(ClauseResult(number, w is None, w))
    return SafetyReport(model.name, relation.name, n, tuple(clauses))


# -- relation predicates ------------------------------------------------------------


def _replays_to(model: FunctionModel, start: Any, target: Any, limit: int, final: Any = None) -> bool:
    """Does stepping with only internal commands from ``start`` reach ``target``?

    With ``final`` given, the run must instead end by returning ``final``.
    """
    state = start
    for _ in range(limit + 1):
        if final is None and state == target:
            return True
        out = model.step_of(state)
        if out is None:
            return False
        state, command = out
        if isinstance(command, Return):
            return final is not None and canonical(command.value) == canonical(final)
        if not isinstance(command, Epsilon):
            return False
    return False


def bisimulation_related(naive: NaiveConfig, config: Any, model: FunctionModel, relation: SafetyRelation,
                         limit: int = 64) -> bool:
    """The naive/platform correspondence for store-free functions.

    Idle instances must be related to the initial state; a busy instance must
    be reachable by receiving its pending request in an init-related state and
    then stepping silently; buffered responses must be derivable from the
    pending request by a silent run from the initial state.
    """
    f = model.name
    requests = {r.x: r for r in config.requests if r.f == f}
    related_inits = [s for s in _safe_states(model) if _related_to_init(model, relation, s)]
    for inst in config.instances:
        if inst.f != f:
            continue
        if inst.idle:
            if not _related_to_init(model, relation, inst.state):
                return False
            continue
        req = requests.get(inst.busy)
        if req is None:
            return False
        starts = [model.recv_of(req.v, s0) for s0 in related_inits]
        if not any(s1 is not None and _replays_to(model, s1, inst.state, limit) for s1 in starts):
            return False
    for x, w in naive.state.buffer:
        req = requests.get(x)
        if req is None:
            return False
        s0 = model.recv_of(req.v, model.initial())
        if s0 is None or not _replays_to(model, s0, None, limit, final=w):
            return False
    return True


def extended_related(naive: NaiveConfig, config: Any, model: FunctionModel, relation: SafetyRelation) -> bool:
    """The store-aware correspondence.

    Unlocked naive states use :func:`bisimulation_related` against a free
    store; a naive transaction must be mirrored by the lock owner, busy on
    the same request in a related state, with the same uncommitted map; a
    naive commit must agree with the platform's committed value.
    """
    store = config.store
    if store is None:
        return False
    lock, st = naive.lock, naive.state
    if isinstance(lock, Held):
        owner = store.lock
        if not hasattr(owner, "y") or owner.snapshot != lock.store:
            return False
        return any(
            i.y == owner.y and i.busy == st.busy and relation(st.current, i.state)
            for i in config.instances
        )
    if isinstance(lock, Committed):
        if hasattr(store.lock, "y"):
            return False
        return canonical(store.committed.get(st.key)) == canonical(lock.value)
    return not hasattr(store.lock, "y") and bisimulation_related(naive, config, model, relation)


def _safe_states(model: FunctionModel) -> list:
    try:
        return enumerate_states(model, 5_000)
    except Exception:
        return list(model.initial_states())


# -- the bisimulation game -----------------------------------------------------------


@dataclass(frozen=True)
class BisimilarUpToDepth:
    depth: int


@dataclass(frozen=True)
class Counterexample:
    direction: str  # forward: a naive step the platform cannot match; backward: the reverse
    focus: int
    naive_trace: Trace = field(repr=False)
    platform_trace: Trace = field(repr=False)
    divergence: str = ""
    naive_stores: tuple | None = None
    rollback_budget: int = 0

    @property
    def naive_script(self) -> list[int]:
        return self.naive_trace.choices

    @property
    def platform_script(self) -> list[int]:
        return self.platform_trace.choices

    def to_plain(self) -> dict:
        return {
            "direction": self.direction,
            "focus": self.focus,
            "divergence": self.divergence,
            "naive": [{"rule": s.rule, "label": s.label.render()} for s in self.naive_trace.steps],
            "platform": [{"rule": s.rule, "label": s.label.render()} for s in self.platform_trace.steps],
            "naive_script": self.naive_script,
            "platform_script": self.platform_script,
        }


@dataclass
class BisimVerdict:
    outcome: BisimilarUpToDepth | Counterexample
    model: str
    depth: int
    platform_states: int = 0
    naive_states: int = 0
    pairs: int = 0
    safety: SafetyReport | None = None
    complete: bool = True  # False when a node limit cut the search short
    foci_checked: int = 0

    @property
    def bisimilar(self) -> bool:
        return isinstance(self.outcome, BisimilarUpToDepth)

    @property
    def outcome_name(self) -> str:
        if not self.bisimilar:
            return "counterexample"
        # an interrupted search has found no counterexample, which proves nothing
        return "bisimilar-up-to-depth" if self.complete else "inconclusive"

    def to_plain(self) -> dict:
        out = {
            "model": self.model,
            "depth": self.depth,
            "outcome": self.outcome_name,
            "platform_states": self.platform_states,
            "naive_states": self.naive_states,
            "pairs": self.pairs,
            "safety_relation_passed": None if self.safety is None else self.safety.passed,
            "complete": self.complete,
        }
        if not self.bisimilar:
            out["counterexample"] = self.outcome.to_plain()
        return out


_TAU = None


def _label_key(label: Any, focus: int) -> str | None:
    return _TAU if label_request(label) != focus else canonical(label)


class _Closures:
    """Weak transitions over an explored graph, with memoization.

    ``bound`` caps the number of silent steps on each side of a visible one;
    ``None`` means unbounded.
    """

    def __init__(self, graph: StateGraph, focus: int, bound: int | None):
        self.graph = graph
        self.bound = bound
        self.keys = [[_label_key(e.label, focus) for e in edges] for edges in graph.edges]
        self._tau: dict[int, frozenset] = {}
        self._weak: dict[tuple, tuple] = {}

    def tau(self, node: int) -> frozenset:
        hit = self._tau.get(node)
        if hit is not None:
            return hit
        seen = {node}
        layer = [node]
        steps = 0
        while layer and (self.bound is None or steps < self.bound):
            nxt = []
            for n in layer:
                for e, k in zip(self.graph.edges[n], self.keys[n]):
                    if k is _TAU and e.target not in seen:
                        seen.add(e.target)
                        nxt.append(e.target)
            layer = nxt
            steps += 1
        out = frozenset(seen)
        self._tau[node] = out
        return out

    def weak(self, node: int, key: str | None) -> tuple[frozenset, bool]:
        """Targets of a weak ``key`` move, and whether the search touched the frontier."""
        hit = self._weak.get((node, key))
        if hit is not None:
            return hit
        pre = self.tau(node)
        optimistic = any(n in self.graph.frontier for n in pre)
        if key is _TAU:
            out = (pre, optimistic)
        else:
            targets: set = set()
            for n in pre:
                for e, k in zip(self.graph.edges[n], self.keys[n]):
                    if k == key:
                        targets |= self.tau(e.target)
            out = (frozenset(targets), optimistic)
        self._weak[(node, key)] = out
        return out

    def path(self, src: int, key: str | None, dst: int) -> list:
        """Edges of one weak ``key`` move from ``src`` to ``dst`` (shortest)."""
        start = (src, key is _TAU)
        parent = {start: None}
        queue = deque([(start, 0)])
        goal = None
        while queue:
            (n, done), run = queue.popleft()
            if done and n == dst:
                goal = (n, done)
                break
            for e, k in zip(self.graph.edges[n], self.keys[n]):
                if k is _TAU:
                    if self.bound is not None and run >= self.bound:
                        continue
                    state, nrun = (e.target, done), run + 1
                elif not done and k == key:
                    state, nrun = (e.target, True), 0
                else:
                    continue
                if state not in parent:
                    parent[state] = ((n, done), e)
                    queue.append((state, nrun))
        if goal is None:
            raise AssertionError("weak move has no path")
        edges = []
        at = goal
        while parent[at] is not None:
            at, e = parent[at]
            edges.append((at[0], e))
        edges.reverse()
        return edges


def _trace_from(graph: StateGraph, semantics: str, moves: list) -> Trace:
    trace = Trace(semantics, graph.states[0])
    for _, e in moves:
        trace.steps.append(TraceStep(e.rule, e.label, graph.states[e.target], e.detail, e.choice))
    return trace


def _play(pgraph: StateGraph, ngraph: StateGraph, focus: int, pad: int) -> tuple[Counterexample | None, int]:
    """Greatest weak bisimulation containing the initial pair, by refinement.

    Pairs whose platform side lies on the exploration frontier are assumed
    related, as is any naive move whose padding search reaches the frontier.
    """
    pc = _Closures(pgraph, focus, pad)
    nc = _Closures(ngraph, focus, None)
    pairs: dict[tuple, int] = {}
    nodes: list[tuple] = []
    obligations: list[tuple] = []  # (owner, direction, edge index, key, candidates)

    def pair_id(n, p):
        pid = pairs.get((n, p))
        if pid is None:
            pid = len(nodes)
            pairs[(n, p)] = pid
            nodes.append((n, p))
            work.append(pid)
        return pid

    work: deque = deque()
    pair_id(0, 0)
    while work:
        pid = work.popleft()
        n, p = nodes[pid]
        if p in pgraph.frontier:
            continue
        for i, (e, key) in enumerate(zip(ngraph.edges[n], nc.keys[n])):
            targets, optimistic = pc.weak(p, key)
            if optimistic:
                continue
            obligations.append((pid, "forward", i, key, {pair_id(e.target, q) for q in targets}))
        for i, (e, key) in enumerate(zip(pgraph.edges[p], pc.keys[p])):
            targets, _ = nc.weak(n, key)
            obligations.append((pid, "backward", i, key, {pair_id(m, e.target) for m in targets}))

    count = [len(o[4]) for o in obligations]
    users: list[list[int]] = [[] for _ in nodes]
    for k, o in enumerate(obligations):
        for c in o[4]:
            users[c].append(k)
    removed_at: dict[int, tuple[int, int]] = {}
    queue = deque()
    for k, o in enumerate(obligations):
        if count[k] == 0 and o[0] not in removed_at:
            removed_at[o[0]] = (len(removed_at), k)
            queue.append(o[0])
    while queue and 0 not in removed_at:
        pid = queue.popleft()
        for k in users[pid]:
            count[k] -= 1
            owner = obligations[k][0]
            if count[k] == 0 and owner not in removed_at:
                removed_at[owner] = (len(removed_at), k)
                queue.append(owner)
    if 0 not in removed_at:
        return None, len(nodes)

    # follow the earliest-removed candidates down to a move nothing matches
    nmoves: list = []
    pmoves: list = []
    pid = 0
    while True:
        n, p = nodes[pid]
        k = removed_at[pid][1]
        owner, direction, i, key, candidates = obligations[k]
        if direction == "forward":
            nmoves.append((n, ngraph.edges[n][i]))
        else:
            pmoves.append((p, pgraph.edges[p][i]))
        if not candidates:
            break
        nxt = min(candidates, key=lambda c: removed_at[c][0])
        n2, p2 = nodes[nxt]
        if direction == "forward":
            moves = pc.path(p, key, p2)
            for _, e in moves:
                if e is not None:
                    assert _label_key(e.label, focus) in (_TAU, key)
            pmoves.extend(moves)
        else:
            nmoves.extend(nc.path(n, key, n2))
        pid = nxt
    last_n = nmoves[-1][1] if direction == "forward" else None
    last_p = pmoves[-1][1] if direction == "backward" else None
    if direction == "forward":
        what = f"naive step {last_n.rule} with label {last_n.label.render()}"
        divergence = f"{what} has no platform match within {pad} silent steps on each side"
    else:
        what = f"platform step {last_p.rule} with label {last_p.label.render()}"
        divergence = f"{what} has no matching naive run"
    return Counterexample(
        direction, focus, _trace_from(ngraph, "naive", nmoves), _trace_from(pgraph, "lambda", pmoves), divergence,
    ), len(nodes)


def _bisim(
    model: FunctionModel,
    relation: SafetyRelation | None,
    depth: int,
    budget: FaultBudget,
    workload: Workload,
    pad: int,
    node_limit: int | None,
    stores: Iterable[Any] | None,
    rollback_budget: int,
    extended: bool,
) -> BisimVerdict:
    platform = Platform({model.name: model}, with_store=extended or None)
    for event in workload.events:
        if event.target != model.name or event.program is not None:
            raise ValueError(f"the workload may only call {model.name}")
    safety = None
    if relation is not None:
        try:
            safety = check_safety_relation(model, relation)
        except Exception:
            safety = None
    verdict = BisimVerdict(BisimilarUpToDepth(depth), model.name, depth, safety=safety)
    try:
        return _bisim_search(verdict, model, depth, budget, workload, pad, node_limit, stores, rollback_budget,
                             extended, platform)
    except BudgetExceeded as exc:
        verdict.complete = False
        exc.verdict = verdict
        raise


def _bisim_search(verdict, model, depth, budget, workload, pad, node_limit, stores, rollback_budget, extended,
                  platform) -> BisimVerdict:
    pgraph = platform.explore(workload, budget, depth, node_limit)
    verdict.platform_states = len(pgraph)
    if extended and stores is None:
        seen = {}
        initial = workload.store if workload.store is not None else EMPTY_OBJECT
        for s in [initial] + [c.store.committed for c in pgraph.states if c.store is not None]:
            seen.setdefault(canonical(s), s)
        stores = [seen[k] for k in sorted(seen)]
    for index, event in enumerate(workload.ordered):
        focus = index + 1
        sem = NaiveSemantics(model, stores if extended else None, rollback_budget)
        solo = Workload((event,), workload.store)
        ngraph = explore(naive_initial(model, solo, focus), sem.successors(solo), 10**9, node_limit)
        verdict.naive_states += len(ngraph)
        cex, pairs = _play(pgraph, ngraph, focus, pad)
        verdict.pairs += pairs
        verdict.foci_checked = focus
        if cex is not None:
            verdict.outcome = replace(cex, naive_stores=None if not extended else tuple(stores),
                                      rollback_budget=rollback_budget if extended else 0)
            return verdict
    return verdict


def replay_counterexample(model: FunctionModel, workload: Workload, budget: FaultBudget,
                          cex: Counterexample) -> tuple[Trace, Trace]:
    """Re-run both scripts of a counterexample; returns (platform trace, naive trace).

    The platform runs the whole workload; the naive side runs only the
    focus request, numbered as it is on the platform.
    """
    platform = Platform({model.name: model}, with_store=cex.naive_stores is not None or None)
    ptrace = platform.run(None, workload, Script(tuple(cex.platform_script)), budget)
    solo = Workload((workload.ordered[cex.focus - 1],), workload.store)
    config = naive_initial(model, solo, cex.focus)
    ntrace = naive_run(model, solo, Script(tuple(cex.naive_script)), cex.rollback_budget, cex.naive_stores, config)
    return ptrace, ntrace


def check_weak_bisim(
    model: FunctionModel,
    relation: SafetyRelation | None = None,
    depth: int = 10,
    budget: FaultBudget = FaultBudget(die=1),
    workload: Workload | None = None,
    pad: int = 8,
    node_limit: int | None = 2_000_000,
) -> BisimVerdict:
    """Bounded weak bisimulation between the platform and the naive semantics.

    The platform is explored breadth-first to ``depth``. For each request x
    the naive semantics runs x alone, and platform events of other requests
    count as silent. A naive step must be matched by the platform within
    ``pad`` silent steps on each side; every platform step must be matched by
    any number of silent naive steps around the same visible label.
    """
    if workload is None:
        workload = Workload(tuple(_events(model, 1)))
    return _bisim(model, relation, depth, budget, workload, pad, node_limit, None, 0, False)


def check_extended_bisim(
    model: FunctionModel,
    relation: SafetyRelation | None = None,
    depth: int = 14,
    budget: FaultBudget = FaultBudget(die=1),
    workload: Workload | None = None,
    pad: int = 8,
    node_limit: int | None = 2_000_000,
    stores: Iterable[Any] | None = None,
    rollback_budget: int = 1,
) -> BisimVerdict:
    """As :func:`check_weak_bisim`, with the key-value store on both sides.

    A naive transaction may start from any committed map the platform
    exploration reaches (plus the initial one) unless ``stores`` is given.
    """
    if workload is None:
        workload = Workload(tuple(_events(model, 1)))
    return _bisim(model, relation, depth, budget, workload, pad, node_limit, stores, rollback_budget, True)


def _events(model: FunctionModel, n: int):
    from .workload import Event

    return [Event(model.name, model.requests[i % len(model.requests)]) for i in range(n)]


# -- differential testing -------------------------------------------------------------


@dataclass
class DifferentialReport:
    runs: int
    failures: list = field(default_factory=list)  # (seed, x, projection)

    @property
    def passed(self) -> bool:
        return not self.failures


def _naive_projections(model: FunctionModel, event, focus: int, store: Any, stores, rollback_budget: int) -> set:
    sem = NaiveSemantics(model, stores, rollback_budget)
    solo = Workload((event,), store)
    graph = explore(naive_initial(model, solo, focus), sem.successors(solo), 10**9)
    out = set()
    for trace_ in _all_paths(graph):
        proj = tuple(canonical(lab) for lab in observable_project(trace_, focus))
        for k in range(len(proj) + 1):
            out.add(proj[:k])
    return out


def _all_paths(graph: StateGraph):
    """Label sequences of every path to a sink or to an already-seen node."""
    stack = [(0, [], frozenset([0]))]
    while stack:
        node, labels, on_path = stack.pop()
        edges = graph.edges[node]
        if not edges:
            yield labels
        for e in edges:
            if e.target in on_path:
                yield labels + [e.label]
            else:
                stack.append((e.target, labels + [e.label], on_path | {e.target}))


def differential_test(
    model: FunctionModel,
    workload: Workload,
    runs: int = 1000,
    seed: int = 0,
    budget: FaultBudget = FaultBudget(die=1),
    max_steps: int = 500,
) -> DifferentialReport:
    """Random platform runs whose per-request observations the naive semantics must allow."""
    platform = Platform({model.name: model})
    traces = [platform.run(None, workload, Random(seed + i, max_steps), budget) for i in range(runs)]
    stores = None
    if model.transactional:
        seen = {canonical(workload.store or EMPTY_OBJECT): workload.store or EMPTY_OBJECT}
        for t in traces:
            for s in t.steps:
                if s.state.store is not None:
                    seen.setdefault(canonical(s.state.store.committed), s.state.store.committed)
        stores = list(seen.values())
    allowed = {
        i + 1: _naive_projections(model, e, i + 1, workload.store, stores, 1 if stores else 0)
        for i, e in enumerate(workload.ordered)
    }
    report = DifferentialReport(runs)
    for i, t in enumerate(traces):
        for x, ok in allowed.items():
            proj = tuple(canonical(lab) for lab in observable_project(t, x))
            if proj not in ok:
                report.failures.append((seed + i, x, [lab.render() for lab in observable_project(t, x)]))
    return report


# -- idempotence ----------------------------------------------------------------------

IDEMPOTENCE_CLAUSES = ("1", "2", "3", "4", "5", "6", "7a", "7b", "8", "9")


@dataclass(frozen=True)
class IdempotenceClause:
    clause: str
    passed: bool | None  # None: not reached because an earlier clause failed
    detail: str = ""


@dataclass
class IdempotenceReport:
    model: str
    request: Any
    clauses: dict
    trace: list = field(default_factory=list)  # (path, command) pairs as driven

    @property
    def passed(self) -> bool:
        return all(c.passed is True for c in self.clauses.values())

    @property
    def violated(self) -> list[str]:
        return [k for k in IDEMPOTENCE_CLAUSES if k in self.clauses and self.clauses[k].passed is False]

    def to_plain(self) -> dict:
        return {
            "model": self.model,
            "request": to_plain(self.request),
            "passed": self.passed,
            "violated": self.violated,
            "clauses": {k: {"passed": self.clauses[k].passed, "detail": self.clauses[k].detail}
                        for k in IDEMPOTENCE_CLAUSES if k in self.clauses},
            "trace": [[path, str(cmd)] for path, cmd in self.trace],
        }


@dataclass
class IdempotenceSummary:
    model: str
    reports: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    @property
    def violated(self) -> list[str]:
        bad = {k for r in self.reports for k in r.violated}
        return [k for k in IDEMPOTENCE_CLAUSES if k in bad]

    def to_plain(self) -> dict:
        return {
            "model": self.model,
            "passed": self.passed,
            "violated": self.violated,
            "requests": [r.to_plain() for r in self.reports],
        }


def _check_request(model: FunctionModel, v: Any, request_keys: set, store: Any, max_steps: int) -> IdempotenceReport:
    clauses: dict[str, IdempotenceClause] = {}
    trace: list = []
    x = model.key_of(v)

    def ok(c, detail=""):
        clauses[c] = IdempotenceClause(c, True, detail)

    def fail(c, detail):
        clauses[c] = IdempotenceClause(c, False, detail)

    def finish() -> IdempotenceReport:
        for c in IDEMPOTENCE_CLAUSES:
            clauses.setdefault(c, IdempotenceClause(c, None, "not reached"))
        return IdempotenceReport(model.name, v, clauses, trace)

    def step(path, state):
        out = model.step_of(state)
        if out is not None:
            trace.append((path, out[1]))
        return out

    s1 = model.recv_of(v, model.initial())
    if s1 is None:
        fail("1", "the request is not accepted by an idle instance")
        return finish()
    ok("1")
    out = step("start", s1)
    if out is None or not isinstance(out[1], BeginTx):
        fail("2", f"first command is {out and out[1]}, not BeginTx")
        return finish()
    ok("2")
    s2 = out[0]
    out = step("start", s2)
    if out is None or not (isinstance(out[1], Read) and out[1].key == x):
        fail("3", f"second command is {out and out[1]}, not Read({x})")
        return finish()
    ok("3")
    s3 = out[0]

    # miss: the record is absent
    s4 = model.recv_of(None, s3)
    if s4 is None:
        fail("4", "the read result null is not accepted")
        return finish()
    ok("4")
    state, w, sigma_n1 = s4, None, None
    foreign = []
    for _ in range(max_steps):
        out = step("miss", state)
        if out is None:
            break
        nxt, cmd = out
        if isinstance(cmd, Write) and cmd.key == x:
            w, sigma_n1 = freeze(cmd.value), nxt
            break
        if isinstance(cmd, Read) and cmd.key not in request_keys:
            value = store.get(cmd.key)
            state = model.recv_of(value, nxt)
            if state is None:
                break
            continue
        if isinstance(cmd, Write) and cmd.key not in request_keys:
            state = nxt
            continue
        if isinstance(cmd, Epsilon):
            state = nxt
            continue
        if isinstance(cmd, (Read, Write)):
            foreign.append(cmd)
            state = nxt
            if isinstance(cmd, Read):
                state = model.recv_of(store.get(cmd.key), nxt)
                if state is None:
                    break
            continue
        break
    if foreign:
        fail("7b", f"the transaction touches another request's record: {foreign[0]}")
    else:
        ok("7b")
    if sigma_n1 is None:
        fail("7a", f"the result is never written to {x} (stopped at {trace[-1][1] if trace else 'nothing'})")
    else:
        ok("7a", f"writes {dumps(w)} to {x}")

    # hit: the record holds w
    hit_value = w if w is not None else next((r for r in model.read_values if r is not None), True)
    s4h = model.recv_of(hit_value, s3)
    if s4h is None:
        fail("5", f"the read result {dumps(hit_value)} is not accepted")
    else:
        ok("5")
        out = step("hit", s4h)
        if out is None or not isinstance(out[1], EndTx):
            fail("6", f"on a hit the next command is {out and out[1]}, not EndTx")
        else:
            ok("6")
            sigma_f = out[0]
            out = step("hit", sigma_f)
            if out is None or not (isinstance(out[1], Return) and canonical(out[1].value) == canonical(hit_value)):
                fail("9", f"on a hit the reply is {out and out[1]}, not Return({dumps(hit_value)})")
    if sigma_n1 is not None:
        out = step("miss", sigma_n1)
        if out is None or not isinstance(out[1], EndTx):
            fail("8", f"after writing the result the next command is {out and out[1]}, not EndTx")
            if out is not None and isinstance(out[1], Return):
                fail("9", "the reply is sent before the transaction commits")
        else:
            sigma_f_miss = out[0]
            if clauses.get("6", IdempotenceClause("6", None)).passed and sigma_f_miss != sigma_f:
                fail("8", "the committed state differs from the one reached on a hit")
            else:
                ok("8")
            out = step("miss", sigma_f_miss)
            if out is None or not (isinstance(out[1], Return) and canonical(out[1].value) == canonical(w)):
                fail("9", f"after committing the reply is {out and out[1]}, not Return({dumps(w)})")
    if "9" not in clauses and "8" in clauses and "6" in clauses:
        ok("9")
    return finish()


def idempotence_check(model: FunctionModel, store: Any = None, max_steps: int = 64) -> IdempotenceSummary:
    """Check the commit protocol for every well-formed request in the model's alphabet.

    Clause 7 is reported in two parts: 7a (the result is eventually written
    to the request's own key) and 7b (no other request's key is touched
    before that). Reads of other keys come from ``store`` (default empty).
    """
    if not model.transactional:
        raise NotApplicable(f"{model.name} does not use the key-value store")
    store = freeze(store) if store is not None else EMPTY_OBJECT
    keyed = [v for v in model.requests if model.key_of(v) is not None]
    if not keyed:
        raise NotApplicable(f"{model.name} declares no keyed requests")
    request_keys = {model.key_of(v) for v in keyed}
    return IdempotenceSummary(model.name, [_check_request(model, v, request_keys, store, max_steps) for v in keyed])


def random_workload_runs(platform: Platform, workload: Workload, runs: int, seed: int, budget: FaultBudget,
                         max_steps: int = 1000):
    """Yield (seed, trace) for ``runs`` consecutive seeds."""
    for i in range(runs):
        yield seed + i, platform.run(None, workload, Random(seed + i, max_steps), budget)


def single_response_violations(trace: Trace, model: FunctionModel, workload: Workload) -> list[str]:
    """Stops repeated for one request, or disagreeing with the committed record."""
    problems = []
    payloads = {i + 1: e.payload for i, e in enumerate(workload.ordered)}
    seen: dict[int, Any] = {}
    committed = trace.final.store.committed if trace.final.store is not None else EMPTY_OBJECT
    for lab in trace.labels:
        if not isinstance(lab, Stop):
            continue
        if lab.x in seen:
            problems.append(f"request {lab.x} answered twice")
        seen[lab.x] = lab.v
        key = model.key_of(payloads.get(lab.x))
        if key is not None and canonical(committed.get(key)) != canonical(lab.v):
            problems.append(f"request {lab.x} answered {dumps(lab.v)} but {key} holds {dumps(committed.get(key))}")
    return problems


__all__ = [
    "BisimVerdict", "BisimilarUpToDepth", "ClauseResult", "Counterexample", "DifferentialReport",
    "IdempotenceReport", "IdempotenceSummary", "SafetyReport", "Witness",
    "bisimulation_related", "check_extended_bisim", "check_safety_relation", "check_weak_bisim",
    "check_witness", "differential_test", "extended_related", "idempotence_check",
    "random_workload_runs", "replay_counterexample", "single_response_violations",
]
