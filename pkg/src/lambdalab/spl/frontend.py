"""Surface syntax for composition programs and its compiler to core SPL.

Compiled programs thread a state object through the second component of a
pair: every call becomes ``[arg, state] >>> first (invoke f)``, so after the
call ``in[0]`` holds the result and ``in[1]`` the saved variables. The
original input lives under the reserved field ``input``.

Two passes shrink the state: :func:`optimize_live_vars` drops fields that
are never read again, and :func:`optimize_live_keys` stores only the paths
of a result that later stages read.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Iterator

from .parser import SplSyntaxError, _Parser, parse_core
from .syntax import (
    ArrayPat,
    BinOp,
    Cond,
    Field,
    First,
    Get,
    IfPat,
    Index,
    Input,
    Invoke,
    Literal,
    ObjectPat,
    Transform,
    UpdateField,
    Var,
    flatten,
    seq,
)

STATE_INPUT = "input"

# -- surface syntax -------------------------------------------------------------


@dataclass(frozen=True)
class InvokeCall:
    f: str
    arg: Any


@dataclass(frozen=True)
class GetCall:
    arg: Any


@dataclass(frozen=True)
class Bind:
    var: str
    call: InvokeCall | GetCall
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ExprStmt:
    call: InvokeCall | GetCall
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class IfElse:
    test: Any
    then: tuple
    orelse: tuple | None = None
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Ret:
    value: Any = None
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class SurfaceProgram:
    statements: tuple


def _has_ret(stmts) -> bool:
    for s in stmts:
        if isinstance(s, Ret):
            return True
        if isinstance(s, IfElse) and (_has_ret(s.then) or _has_ret(s.orelse or ())):
            return True
    return False


def _always_returns(stmts) -> bool:
    if not stmts:
        return False
    last = stmts[-1]
    if isinstance(last, Ret):
        return True
    if isinstance(last, IfElse) and last.orelse is not None:
        return _always_returns(last.then) and _always_returns(last.orelse)
    return False


class _SurfaceParser(_Parser):
    def __init__(self, text: str):
        super().__init__(text, surface=True)
        self.scope: set[str] = set()

    def primary(self):
        t = self.tok
        if t.kind == "ident" and t.text not in self.scope:
            raise SplSyntaxError(f"unbound variable {t.text!r}", t.line, t.column)
        return super().primary()

    def program(self) -> SurfaceProgram:
        stmts = self.block_body(top=True)
        self.end()
        if not stmts:
            self.fail("expected a statement")
        return SurfaceProgram(tuple(stmts))

    def block_body(self, top: bool) -> list:
        stmts = []
        while not (self.tok.kind == "eof" if top else self.at("}")):
            if stmts and isinstance(stmts[-1], Ret):
                self.fail("ret must be the final statement")
            stmts.append(self.statement())
        return stmts

    def block(self) -> tuple:
        self.expect("{")
        saved = set(self.scope)
        stmts = self.block_body(top=False)
        if not stmts:
            self.fail("expected a statement")
        self.expect("}")
        bound = set(self.scope)
        self.scope = saved
        return tuple(stmts), bound

    def call(self):
        if self.accept("invoke"):
            f = self.ident()
            self.expect("(")
            arg = self.pattern()
            self.expect(")")
            return InvokeCall(f, arg)
        if self.accept("get"):
            return GetCall(self.pattern())
        self.fail("expected 'invoke' or 'get'")

    def statement(self):
        t = self.tok
        if self.accept("ret"):
            value = None if self.at(";") else self.pattern()
            self.expect(";")
            return Ret(value, t.line, t.column)
        if self.accept("if"):
            self.expect("(")
            test = self.pattern()
            self.expect(")")
            then, then_bound = self.block()
            orelse, else_bound = None, set(self.scope)
            if self.accept("else"):
                orelse, else_bound = self.block()
            # names usable afterwards are those bound on every path that falls through
            paths = []
            if not _always_returns(then):
                paths.append(then_bound)
            if orelse is None or not _always_returns(orelse):
                paths.append(else_bound)
            if paths:
                self.scope = set.intersection(*paths)
            return IfElse(test, then, orelse, t.line, t.column)
        if t.kind == "ident" and self.peek().text == "<-":
            name = self.ident()
            if name == STATE_INPUT:
                raise SplSyntaxError(f"{STATE_INPUT!r} is reserved", t.line, t.column)
            self.expect("<-")
            call = self.call()
            self.expect(";")
            self.scope.add(name)
            return Bind(name, call, t.line, t.column)
        if self.at("invoke"):
            call = self.call()
            self.expect(";")
            return ExprStmt(call, t.line, t.column)
        self.fail("expected a statement")


def parse_surface(text: str) -> SurfaceProgram:
    """Parse surface syntax; raises :class:`SplSyntaxError` with a position."""
    return _SurfaceParser(text).program()


# -- compilation ---------------------------------------------------------------


@dataclass(frozen=True)
class _Ctx:
    """Compile-time view of the running value.

    ``fields is None`` means the value is still the raw program input.
    Otherwise it is ``[in0, state]`` with ``last`` naming ``in0`` (or
    ``None`` when ``in0`` is junk) and ``fields`` listing the state keys.
    """

    last: str | None = None
    fields: tuple | None = None

    @property
    def raw(self) -> bool:
        return self.fields is None


_RAW = _Ctx()
_IN0 = (Index(0),)
_IN1 = (Index(1),)


def _state_ref(name: str, rest: tuple = ()) -> Input:
    return Input(_IN1 + (Field(name),) + rest)


def _map_pattern(p: Any, leaf) -> Any:
    if isinstance(p, (Input, Var)):
        return leaf(p)
    if isinstance(p, Literal):
        return p
    if isinstance(p, ArrayPat):
        return ArrayPat(tuple(_map_pattern(i, leaf) for i in p.items))
    if isinstance(p, ObjectPat):
        return ObjectPat(tuple((k, _map_pattern(v, leaf)) for k, v in p.fields))
    if isinstance(p, BinOp):
        return BinOp(p.op, _map_pattern(p.left, leaf), _map_pattern(p.right, leaf))
    if isinstance(p, IfPat):
        return IfPat(*(_map_pattern(q, leaf) for q in (p.test, p.then, p.orelse)))
    if isinstance(p, UpdateField):
        return UpdateField(_map_pattern(p.target, leaf), p.name, _map_pattern(p.value, leaf))
    raise TypeError(f"not a pattern: {p!r}")


def _leaves(p: Any) -> Iterator[Any]:
    if isinstance(p, (Input, Var)):
        yield p
    elif isinstance(p, ArrayPat):
        for i in p.items:
            yield from _leaves(i)
    elif isinstance(p, ObjectPat):
        for _, v in p.fields:
            yield from _leaves(v)
    elif isinstance(p, BinOp):
        yield from _leaves(p.left)
        yield from _leaves(p.right)
    elif isinstance(p, IfPat):
        for q in (p.test, p.then, p.orelse):
            yield from _leaves(q)
    elif isinstance(p, UpdateField):
        yield from _leaves(p.target)
        yield from _leaves(p.value)


def _resolve(p: Any, ctx: _Ctx) -> Any:
    def leaf(node):
        if isinstance(node, Input):
            return node if ctx.raw else _state_ref(STATE_INPUT, node.query)
        if not ctx.raw:
            if node.name == ctx.last:
                return Input(_IN0 + node.query)
            if node.name in ctx.fields:
                return _state_ref(node.name, node.query)
        raise SplSyntaxError(f"variable {node.name!r} is not available here", 0, 0)

    return _map_pattern(p, leaf)


def _pattern_names(p: Any) -> set:
    return {STATE_INPUT if isinstance(n, Input) else n.name for n in _leaves(p)}


def _names(stmts) -> set:
    out: set = set()
    for s in stmts:
        if isinstance(s, Ret):
            if s.value is not None:
                out |= _pattern_names(s.value)
        elif isinstance(s, IfElse):
            out |= _pattern_names(s.test) | _names(s.then) | _names(s.orelse or ())
        else:
            out |= _pattern_names(s.call.arg)
    return out


def _bound(stmts) -> list:
    out = []
    for s in stmts:
        if isinstance(s, Bind) and s.var not in out:
            out.append(s.var)
    return out


def _call_expr(call) -> Any:
    return First(Invoke(call.f) if isinstance(call, InvokeCall) else Get())


def _compile_call(s, ctx: _Ctx, later: set) -> tuple[list, _Ctx]:
    arg = _resolve(s.call.arg, ctx)
    if ctx.raw:
        state = ObjectPat(((STATE_INPUT, Input()),))
        fields = (STATE_INPUT,)
    elif ctx.last is not None and ctx.last in later:
        state = UpdateField(Input(_IN1), ctx.last, Input(_IN0))
        fields = ctx.fields if ctx.last in ctx.fields else ctx.fields + (ctx.last,)
    else:
        state, fields = Input(_IN1), ctx.fields
    var = s.var if isinstance(s, Bind) else None
    return [Transform(ArrayPat((arg, state))), _call_expr(s.call)], _Ctx(var, fields)


def _normalize(ctx: _Ctx, target: tuple) -> Transform:
    if not ctx.raw and ctx.fields == target and ctx.last not in target:
        state = Input(_IN1)
    else:
        state = ObjectPat(tuple((f, _resolve(Input() if f == STATE_INPUT else Var(f), ctx)) for f in target))
    return Transform(ArrayPat((Literal(None), state)))


def _compile_straight(stmts, ctx: _Ctx, later: set) -> tuple[list, _Ctx]:
    stages: list = []
    for i, s in enumerate(stmts):
        after = _names(stmts[i + 1:]) | later
        if isinstance(s, IfElse):
            base = (STATE_INPUT,) if ctx.raw else ctx.fields
            extra = []
            if ctx.last is not None and ctx.last in after and ctx.last not in base:
                extra.append(ctx.last)
            both = set(_bound(s.then)) & set(_bound(s.orelse or ()))
            extra += [v for v in _bound(s.then) if v in both and v in after and v not in base and v not in extra]
            target = tuple(base) + tuple(extra)
            branches = []
            for body in (s.then, s.orelse or ()):
                b_stages, b_ctx = _compile_straight(body, ctx, after)
                branches.append(seq(*b_stages, _normalize(b_ctx, target)))
            stages.append(Cond(_resolve(s.test, ctx), *branches))
            ctx = _Ctx(None, target)
        else:
            more, ctx = _compile_call(s, ctx, after)
            stages += more
    return stages, ctx


def _compile_tail(stmts, ctx: _Ctx) -> list:
    for i, s in enumerate(stmts):
        if isinstance(s, Ret):
            head, ctx = _compile_straight(stmts[:i], ctx, _names(stmts[i:]))
            value = Literal(None) if s.value is None else _resolve(s.value, ctx)
            return head + [Transform(value)]
        if isinstance(s, IfElse) and _has_ret((s,)):
            rest = tuple(stmts[i + 1:])
            head, ctx = _compile_straight(stmts[:i], ctx, _names(stmts[i:]))
            then = seq(*_compile_tail(s.then + rest, ctx))
            orelse = seq(*_compile_tail((s.orelse or ()) + rest, ctx))
            return head + [Cond(_resolve(s.test, ctx), then, orelse)]
    stages, ctx = _compile_straight(stmts, ctx, set())
    return stages + [Transform(Literal(None))]


def compile_program(program: SurfaceProgram | str) -> Any:
    """Compile surface syntax to a core expression in store-passing style."""
    if isinstance(program, str):
        program = parse_surface(program)
    return seq(*_compile_tail(tuple(program.statements), _RAW))


compile = compile_program  # noqa: A001


# -- stage-level view of compiled programs ----------------------------------------

_ALL = "*"
_RESULT = "result"
_UNKNOWN = "?"


def _is_builder(stages: list, i: int, tail: bool) -> bool:
    st = stages[i]
    if not (isinstance(st, Transform) and isinstance(st.pattern, ArrayPat) and len(st.pattern.items) == 2):
        return False
    return not (tail and i == len(stages) - 1)


def _state_fields(state: Any, shape: Any) -> Any:
    if isinstance(state, ObjectPat):
        return tuple(k for k, _ in state.fields)
    if isinstance(state, UpdateField):
        inner = _state_fields(state.target, shape)
        if inner is _UNKNOWN:
            return _UNKNOWN
        return inner if state.name in inner else inner + (state.name,)
    if isinstance(state, Input) and state.query == _IN1 and isinstance(shape, tuple):
        return shape
    return _UNKNOWN


def _shapes(stages: list, shape: Any, tail: bool) -> tuple[list, Any]:
    """The shape entering each stage, and the shape after the block.

    A shape is ``None`` for the raw input, a tuple of state field names for a
    pair, or a marker for a final result / an untracked state.
    """
    out = []
    for i, st in enumerate(stages):
        out.append(shape)
        if isinstance(st, Transform):
            shape = _state_fields(st.pattern.items[1], shape) if _is_builder(stages, i, tail) else _RESULT
        elif isinstance(st, Cond):
            branch_tail = tail and i == len(stages) - 1
            _, shape = _shapes(flatten(st.then), shape, branch_tail)
    return out, shape


def _uses(p: Any, shape: Any) -> tuple[bool, Any]:
    """What a pattern reads from a pair: (reads in[0], state fields or ALL)."""
    if not isinstance(shape, tuple):
        return False, _ALL
    need0, fields = False, set()
    for leaf in _leaves(p):
        q = leaf.query
        if q[:1] == _IN0:
            need0 = True
        elif q[:1] == _IN1 and len(q) > 1 and isinstance(q[1], Field):
            fields.add(q[1].name)
        else:
            return True, _ALL
    return need0, frozenset(fields)


def _union(a: tuple, b: tuple) -> tuple:
    fields = _ALL if _ALL in (a[1], b[1]) else a[1] | b[1]
    return a[0] or b[0], fields


def _field_value(state: Any, name: str) -> Any:
    if isinstance(state, ObjectPat):
        return dict(state.fields)[name]
    if isinstance(state, UpdateField):
        return state.value if state.name == name else _field_value(state.target, name)
    return _state_ref(name)


def _restrict(state: Any, live: Any, shape: Any) -> Any:
    names = _state_fields(state, shape)
    if live == _ALL or names is _UNKNOWN or all(n in live for n in names):
        return state
    return ObjectPat(tuple((n, _field_value(state, n)) for n in names if n in live))


# -- live variables -------------------------------------------------------------


def _live_block(stages: list, shape: Any, tail: bool, demand: tuple) -> tuple[list, tuple]:
    shapes, _ = _shapes(stages, shape, tail)
    out = list(stages)
    for i in range(len(stages) - 1, -1, -1):
        st, sh = stages[i], shapes[i]
        if isinstance(st, Transform):
            if _is_builder(stages, i, tail):
                arg, state = st.pattern.items
                state = _restrict(state, demand[1], sh)
                out[i] = Transform(ArrayPat((arg, state)))
                demand = _union(_uses(arg, sh), _uses(state, sh))
            else:
                demand = _uses(st.pattern, sh)
        elif isinstance(st, First):
            demand = (True, demand[1])
        elif isinstance(st, Cond):
            branch_tail = tail and i == len(stages) - 1
            then, d1 = _live_block(flatten(st.then), sh, branch_tail, demand)
            orelse, d2 = _live_block(flatten(st.orelse), sh, branch_tail, demand)
            out[i] = Cond(st.test, seq(*then), seq(*orelse))
            demand = _union(_uses(st.test, sh), _union(d1, d2))
        else:
            demand = (True, _ALL)
    return out, demand


def optimize_live_vars(expr: Any) -> Any:
    """Drop state fields that no later stage reads."""
    stages, _ = _live_block(flatten(expr), None, True, (False, frozenset()))
    return seq(*stages)


# -- live keys ----------------------------------------------------------------


def _consumer_patterns(stages: list, j: int) -> list:
    if j >= len(stages):
        return []
    st = stages[j]
    if isinstance(st, Transform):
        return [st.pattern]
    if isinstance(st, Cond):
        return [st.test] + _consumer_patterns(flatten(st.then), 0) + _consumer_patterns(flatten(st.orelse), 0)
    return [None]  # something opaque reads the pair


def _rewrite_consumers(stages: list, j: int, fn) -> list:
    out = list(stages)
    st = stages[j]
    if isinstance(st, Transform):
        out[j] = Transform(fn(st.pattern))
    elif isinstance(st, Cond):
        out[j] = Cond(
            fn(st.test),
            seq(*_rewrite_consumers(flatten(st.then), 0, fn)),
            seq(*_rewrite_consumers(flatten(st.orelse), 0, fn)),
        )
    return out


def _paths_read(patterns: list, name: str) -> list | None:
    """Paths below ``in[1].name`` read by the patterns, or None on a whole read."""
    head = _IN1 + (Field(name),)
    paths = []
    for p in patterns:
        if p is None:
            return None
        for leaf in _leaves(p):
            q = leaf.query
            if q[:2] == head:
                if len(q) == 2:
                    return None
                paths.append(q[2:])
            elif q[:1] != _IN0 and not (q[:1] == _IN1 and len(q) > 1 and isinstance(q[1], Field)):
                return None
    minimal = []
    for path in paths:
        if any(path[: len(m)] == m for m in minimal):
            continue
        minimal = [m for m in minimal if m[: len(path)] != path] + [path]
    return minimal


def _key_name(name: str, path: tuple, taken: set) -> str:
    out = name + "".join(s.name if isinstance(s, Field) else str(s.n) for s in path)
    while out in taken:
        out += "_"
    return out


def _keys_block(stages: list, tail: bool) -> list:
    stages = list(stages)
    for i, st in enumerate(stages):
        if isinstance(st, Cond):
            branch_tail = tail and i == len(stages) - 1
            stages[i] = Cond(st.test, seq(*_keys_block(flatten(st.then), branch_tail)),
                             seq(*_keys_block(flatten(st.orelse), branch_tail)))
    # back to front, so a saved value sees the narrowed reads of later stages
    for i in reversed(range(len(stages))):
        if not (_is_builder(stages, i, tail) and i + 2 < len(stages) and isinstance(stages[i + 1], First)):
            continue
        arg, state = stages[i].pattern.items
        if not isinstance(state, ObjectPat):
            continue
        fields = list(state.fields)
        for name, value in list(fields):
            if not isinstance(value, Input):
                continue
            paths = _paths_read(_consumer_patterns(stages, i + 2), name)
            if not paths:
                continue
            taken = {k for k, _ in fields}
            renames = {}
            projected = []
            for path in paths:
                key = _key_name(name, path, taken)
                taken.add(key)
                renames[path] = key
                projected.append((key, Input(value.query + path)))
            at = [k for k, _ in fields].index(name)
            fields[at:at + 1] = projected

            def rename(p, name=name, renames=renames):
                def leaf(node):
                    q = node.query
                    if q[:2] == _IN1 + (Field(name),):
                        for path, key in renames.items():
                            if q[2:2 + len(path)] == path:
                                return _state_ref(key, q[2 + len(path):])
                    return node

                return _map_pattern(p, leaf)

            stages = _rewrite_consumers(stages, i + 2, rename)
        stages[i] = Transform(ArrayPat((arg, ObjectPat(tuple(fields)))))
    return stages


def optimize_live_keys(expr: Any) -> Any:
    """Store only the paths of a saved value that later stages read."""
    return seq(*_keys_block(flatten(expr), True))


def optimize(expr: Any, live_vars: bool = True, live_keys: bool = True) -> Any:
    if live_vars:
        expr = optimize_live_vars(expr)
    if live_keys:
        expr = optimize_live_keys(expr)
    return expr


# -- static checks and metrics ---------------------------------------------------


def _walk(stages: list, shape: Any, tail: bool) -> Iterator[tuple[Any, Any, bool]]:
    """Yield (pattern, shape entering it, is-state-construction) for every pattern."""
    shapes, _ = _shapes(stages, shape, tail)
    for i, (st, sh) in enumerate(zip(stages, shapes)):
        if isinstance(st, Transform):
            if _is_builder(stages, i, tail):
                yield st.pattern.items[0], sh, False
                yield st.pattern.items[1], sh, True
            else:
                yield st.pattern, sh, False
        elif isinstance(st, Cond):
            branch_tail = tail and i == len(stages) - 1
            yield st.test, sh, False
            yield from _walk(flatten(st.then), sh, branch_tail)
            yield from _walk(flatten(st.orelse), sh, branch_tail)


def check_well_formed(expr: Any) -> list[str]:
    """Problems with state references in a compiled program (empty when fine)."""
    problems = []

    def block(stages, shape, tail):
        shapes, _ = _shapes(stages, shape, tail)
        for i, (st, sh) in enumerate(zip(stages, shapes)):
            if isinstance(st, Cond):
                branch_tail = tail and i == len(stages) - 1
                _, s1 = _shapes(flatten(st.then), sh, branch_tail)
                _, s2 = _shapes(flatten(st.orelse), sh, branch_tail)
                if s1 != s2:
                    problems.append(f"branches leave different states: {s1} vs {s2}")

    block(flatten(expr), None, True)
    for pattern, shape, _ in _walk(flatten(expr), None, True):
        for leaf in _leaves(pattern):
            if isinstance(leaf, Var):
                problems.append(f"unresolved variable {leaf.name!r}")
                continue
            if shape is None:
                continue
            if shape in (_RESULT, _UNKNOWN):
                problems.append(f"pattern reads a value of unknown shape: {leaf}")
                continue
            q = leaf.query
            if q[:1] == _IN1 and len(q) > 1:
                if not isinstance(q[1], Field) or q[1].name not in shape:
                    problems.append(f"reference to missing state field {q[1]} (state has {list(shape)})")
            elif q[:1] not in (_IN0, _IN1):
                problems.append(f"query {q} does not select from the pair")
    return problems


def _sources(pattern: Any, shape: Any) -> set:
    """Distinct values a state-construction pattern captures.

    A source is the part of a query that picks a variable: the raw input,
    ``in[0]``, or one state field. The whole state counts as all its fields.
    """
    out = set()
    for leaf in _leaves(pattern):
        q = leaf.query
        if not isinstance(shape, tuple):
            out.add(("in",))
        elif q[:1] == _IN0:
            out.add((0,))
        elif q[:1] == _IN1 and len(q) > 1 and isinstance(q[1], Field):
            out.add((1, q[1].name))
        elif q[:1] == _IN1:
            out.update((1, f) for f in shape)
        else:
            out.add(("in",))
    return out


def state_size(expr: Any) -> int:
    """Total captured sources over all state-construction patterns."""
    total = 0
    for pattern, shape, is_state in _walk(flatten(expr), None, True):
        if is_state:
            total += len(_sources(pattern, shape))
    return total


# -- bundled programs -------------------------------------------------------------

PROGRAM_FILES = {
    "three-calls": "three_calls.spl",
    "split-deposit": "split_deposit.spl",
    "build-status": "build_status.spl",
    "csv-plot": "csv_plot.spl",
    "swap": "swap.core",
}


def program_text(name: str) -> str:
    try:
        filename = PROGRAM_FILES[name]
    except KeyError:
        raise KeyError(f"unknown program {name!r}; known: {', '.join(sorted(PROGRAM_FILES))}") from None
    return resources.files(__package__).joinpath("programs").joinpath(filename).read_text(encoding="utf-8")


def load_program(text: str, core: bool | None = None, optimized: bool = True) -> Any:
    """Parse a program in either notation.

    Surface programs are compiled (and optimized unless told otherwise);
    core text is parsed as is. With ``core=None`` the notation is guessed:
    only surface programs contain ``;``.
    """
    if core is None:
        body = "\n".join(line.split("//", 1)[0] for line in text.splitlines())
        core = ";" not in body
    if core:
        return parse_core(text)
    expr = compile_program(parse_surface(text))
    return optimize(expr) if optimized else expr
