"""Abstract syntax for composition programs, JSON patterns and continuations,
with a printer producing the textual core notation."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any

from ..jsonvalue import JsonObject, dumps

# -- queries ------------------------------------------------------------------


@dataclass(frozen=True)
class Index:
    n: int


@dataclass(frozen=True)
class Field:
    name: str


Query = tuple  # of Index | Field


# -- patterns -----------------------------------------------------------------


@dataclass(frozen=True)
class Literal:
    value: Any


@dataclass(frozen=True)
class ArrayPat:
    items: tuple


@dataclass(frozen=True)
class ObjectPat:
    fields: tuple  # of (name, pattern)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: Any
    right: Any


@dataclass(frozen=True)
class IfPat:
    test: Any
    then: Any
    orelse: Any


@dataclass(frozen=True)
class UpdateField:
    """``target[name -> value]``: the target object with one field set."""

    target: Any
    name: str
    value: Any


@dataclass(frozen=True)
class Input:
    query: tuple = ()


@dataclass(frozen=True)
class Var:
    """A surface-program variable, optionally followed by a query."""

    name: str
    query: tuple = ()


Pattern = Literal | ArrayPat | ObjectPat | BinOp | IfPat | UpdateField | Input | Var

OPERATORS = ("||", "&&", "==", "!=", "<", "<=", ">", ">=", "+", "-", "*")
PRECEDENCE = {"||": 1, "&&": 2, "==": 3, "!=": 3, "<": 4, "<=": 4, ">": 4, ">=": 4, "+": 5, "-": 5, "*": 6}


# -- expressions ------------------------------------------------------------------


@dataclass(frozen=True)
class Invoke:
    f: str


@dataclass(frozen=True)
class Seq:
    first: Any
    second: Any


@dataclass(frozen=True)
class First:
    body: Any


@dataclass(frozen=True)
class Transform:
    pattern: Any


@dataclass(frozen=True)
class Cond:
    test: Any
    then: Any
    orelse: Any


@dataclass(frozen=True)
class Get:
    pass


Expr = Invoke | Seq | First | Transform | Cond | Get


def seq(*parts: Any) -> Any:
    """Left-nested sequence of one or more expressions."""
    if not parts:
        raise ValueError("empty sequence")
    out = parts[0]
    for part in parts[1:]:
        out = Seq(out, part)
    return out


def flatten(expr: Any) -> list:
    """The stages of a (possibly nested) sequence, in execution order."""
    if isinstance(expr, Seq):
        return flatten(expr.first) + flatten(expr.second)
    return [expr]


# -- continuations ----------------------------------------------------------------


@dataclass(frozen=True)
class RetK:
    x: int


@dataclass(frozen=True)
class SeqK:
    expr: Any
    k: Any


@dataclass(frozen=True)
class FirstK:
    v: Any
    k: Any


Continuation = RetK | SeqK | FirstK


def root_request(k: Any) -> int:
    while not isinstance(k, RetK):
        k = k.k
    return k.x


# -- printing ---------------------------------------------------------------------

KEYWORDS = {"in", "invoke", "first", "get", "if", "then", "else", "ret", "true", "false", "null"}
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def _name(name: str) -> str:
    return name if _IDENT.match(name) and name not in KEYWORDS else dumps(name)


def show_query(query: tuple) -> str:
    out = []
    for step in query:
        if isinstance(step, Index):
            out.append(f"[{step.n}]")
        else:
            out.append("." + _name(step.name))
    return "".join(out)


def show_pattern(p: Any, prec: int = 0) -> str:
    if isinstance(p, Input):
        return "in" + show_query(p.query)
    if isinstance(p, Var):
        return p.name + show_query(p.query)
    if isinstance(p, Literal):
        value = p.value
        if isinstance(value, (tuple, JsonObject)):
            return dumps(value)
        return dumps(value)
    if isinstance(p, ArrayPat):
        return "[" + ", ".join(show_pattern(i) for i in p.items) + "]"
    if isinstance(p, ObjectPat):
        if not p.fields:
            return "{}"
        return "{ " + ", ".join(f"{_name(k)}: {show_pattern(v)}" for k, v in p.fields) + " }"
    if isinstance(p, UpdateField):
        target = show_pattern(p.target, 10)
        return f"{target}[{_name(p.name)} -> {show_pattern(p.value)}]"
    if isinstance(p, BinOp):
        mine = PRECEDENCE[p.op]
        text = f"{show_pattern(p.left, mine)} {p.op} {show_pattern(p.right, mine + 1)}"
        return f"({text})" if mine < prec else text
    if isinstance(p, IfPat):
        text = f"if ({show_pattern(p.test)}) then {show_pattern(p.then)} else {show_pattern(p.orelse)}"
        return f"({text})" if prec > 0 else text
    raise TypeError(f"not a pattern: {p!r}")


def show(expr: Any) -> str:
    """Core notation, e.g. ``first (invoke f) >>> in[0]``."""
    if isinstance(expr, Seq):
        right = show(expr.second)
        if isinstance(expr.second, Seq):
            right = f"({right})"
        return f"{show(expr.first)} >>> {right}"
    if isinstance(expr, Invoke):
        return f"invoke {expr.f}"
    if isinstance(expr, First):
        return f"first ({show(expr.body)})"
    if isinstance(expr, Get):
        return "get"
    if isinstance(expr, Transform):
        text = show_pattern(expr.pattern)
        return f"({text})" if isinstance(expr.pattern, IfPat) else text
    if isinstance(expr, Cond):
        return f"if ({show_pattern(expr.test)}) {{ {show(expr.then)} }} else {{ {show(expr.orelse)} }}"
    raise TypeError(f"not an expression: {expr!r}")


def show_stages(expr: Any) -> str:
    """One stage per line, joined by ``>>>``, as programs are usually laid out."""
    return " >>>\n".join(show(stage) for stage in flatten(expr))
