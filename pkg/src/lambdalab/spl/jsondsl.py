"""Evaluation of JSON queries and transformation patterns."""

from __future__ import annotations

from typing import Any

from ..jsonvalue import JsonObject, json_equal, json_type
from .syntax import ArrayPat, BinOp, Field, IfPat, Index, Input, Literal, ObjectPat, UpdateField, Var, show_query


class TransformError(Exception):
    """A query or pattern could not be evaluated on its input."""


def json_query(query: tuple, value: Any) -> Any:
    for n, step in enumerate(query):
        where = show_query(query[: n + 1])
        if isinstance(step, Index):
            if not isinstance(value, tuple):
                raise TransformError(f"{where}: index on {json_type(value)}")
            if not 0 <= step.n < len(value):
                raise TransformError(f"{where}: index {step.n} out of range for length {len(value)}")
            value = value[step.n]
        elif isinstance(step, Field):
            if not isinstance(value, JsonObject):
                raise TransformError(f"{where}: field lookup on {json_type(value)}")
            if step.name not in value:
                raise TransformError(f"{where}: missing field {step.name!r}")
            value = value[step.name]
        else:
            raise TypeError(f"not a query step: {step!r}")
    return value


def _number(v: Any) -> bool:
    return json_type(v) == "number"


def _binop(op: str, a: Any, b: Any) -> Any:
    if op == "==":
        return json_equal(a, b)
    if op == "!=":
        return not json_equal(a, b)
    if op in ("&&", "||"):
        if not (isinstance(a, bool) and isinstance(b, bool)):
            raise TransformError(f"{op} needs booleans, got {json_type(a)} and {json_type(b)}")
        return (a and b) if op == "&&" else (a or b)
    if not (_number(a) and _number(b)):
        raise TransformError(f"{op} needs numbers, got {json_type(a)} and {json_type(b)}")
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise TransformError(f"unknown operator {op!r}")


def json_eval(pattern: Any, value: Any) -> Any:
    """Evaluate ``pattern`` with ``in`` bound to ``value``."""
    if isinstance(pattern, Input):
        return json_query(pattern.query, value)
    if isinstance(pattern, Literal):
        return pattern.value
    if isinstance(pattern, ArrayPat):
        return tuple(json_eval(p, value) for p in pattern.items)
    if isinstance(pattern, ObjectPat):
        return JsonObject((k, json_eval(p, value)) for k, p in pattern.fields)
    if isinstance(pattern, UpdateField):
        target = json_eval(pattern.target, value)
        if not isinstance(target, JsonObject):
            raise TransformError(f"field update [{pattern.name} -> ...] on {json_type(target)}")
        return target.set(pattern.name, json_eval(pattern.value, value))
    if isinstance(pattern, BinOp):
        if pattern.op in ("&&", "||"):
            left = json_eval(pattern.left, value)
            if not isinstance(left, bool):
                raise TransformError(f"{pattern.op} needs booleans, got {json_type(left)}")
            if (pattern.op == "&&") != left:
                return left
            right = json_eval(pattern.right, value)
            return _binop(pattern.op, left, right)
        return _binop(pattern.op, json_eval(pattern.left, value), json_eval(pattern.right, value))
    if isinstance(pattern, IfPat):
        test = json_eval(pattern.test, value)
        if not isinstance(test, bool):
            raise TransformError(f"if condition is {json_type(test)}, not bool")
        return json_eval(pattern.then if test else pattern.orelse, value)
    if isinstance(pattern, Var):
        raise TransformError(f"unresolved variable {pattern.name!r}")
    raise TypeError(f"not a pattern: {pattern!r}")
