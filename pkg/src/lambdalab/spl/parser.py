"""Lexer and recursive-descent parsers for patterns, core programs and
surface programs.

Core grammar::

    expr    := atom (">>>" atom)*
    atom    := "invoke" IDENT | "first" "(" expr ")" | "get"
             | "if" "(" pattern ")" "{" expr "}" "else" "{" expr "}"
             | "(" expr ")" | pattern

Surface grammar::

    program := stmt+
    stmt    := IDENT "<-" "invoke" IDENT "(" pattern ")" ";"
             | "invoke" IDENT "(" pattern ")" ";"
             | IDENT "<-" "get" pattern ";"
             | "if" "(" pattern ")" block ("else" block)?
             | "ret" pattern? ";"
    block   := "{" stmt+ "}"

Patterns follow the usual precedence (``||`` < ``&&`` < equality <
comparison < ``+ -`` < ``*``), with postfix queries ``[n]``, ``.id`` and
field updates ``[id -> pattern]``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any

from ..jsonvalue import freeze
from .syntax import (
    KEYWORDS,
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
    PRECEDENCE,
    Seq,
    Transform,
    UpdateField,
    Var,
)


class SplSyntaxError(Exception):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.message = message
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Token:
    kind: str  # num, str, ident, kw, op, eof
    text: str
    line: int
    column: int
    value: Any = None


_PUNCT = sorted(
    [">>>", "<-", "->", "==", "!=", "<=", ">=", "&&", "||",
     "<", ">", "+", "-", "*", "(", ")", "[", "]", "{", "}", ",", ":", ";", "."],
    key=len,
    reverse=True,
)
_NUMBER = re.compile(r"\d+(\.\d+)?([eE][+-]?\d+)?")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_STRING = re.compile(r'"(?:[^"\\]|\\.)*"')


def tokenize(text: str) -> list[Token]:
    tokens = []
    i, line, col = 0, 1, 1
    while i < len(text):
        ch = text[i]
        if ch == "\n":
            i, line, col = i + 1, line + 1, 1
            continue
        if ch.isspace():
            i, col = i + 1, col + 1
            continue
        if text.startswith("//", i):
            end = text.find("\n", i)
            end = len(text) if end < 0 else end
            col += end - i
            i = end
            continue
        m = _NUMBER.match(text, i)
        if m:
            raw = m.group()
            value = float(raw) if any(c in raw for c in ".eE") else int(raw)
            tokens.append(Token("num", raw, line, col, value))
        elif (m := _IDENT.match(text, i)):
            raw = m.group()
            tokens.append(Token("kw" if raw in KEYWORDS else "ident", raw, line, col, raw))
        elif ch == '"':
            m = _STRING.match(text, i)
            if not m:
                raise SplSyntaxError("unterminated string", line, col)
            raw = m.group()
            tokens.append(Token("str", raw, line, col, json.loads(raw)))
        else:
            for p in _PUNCT:
                if text.startswith(p, i):
                    raw = p
                    tokens.append(Token("op", p, line, col))
                    break
            else:
                raise SplSyntaxError(f"unexpected character {ch!r}", line, col)
        i += len(raw)
        col += len(raw)
    tokens.append(Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text: str, surface: bool):
        self.tokens = tokenize(text)
        self.pos = 0
        self.surface = surface

    # -- token helpers --

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.pos + k, len(self.tokens) - 1)]

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("op", "kw") and t.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.pos += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(f"expected {text!r}")
        tok = self.tok
        self.pos += 1
        return tok

    def fail(self, message: str):
        t = self.tok
        found = "end of input" if t.kind == "eof" else repr(t.text)
        raise SplSyntaxError(f"{message}, found {found}", t.line, t.column)

    def ident(self) -> str:
        if self.tok.kind != "ident":
            self.fail("expected an identifier")
        name = self.tok.text
        self.pos += 1
        return name

    def field_name(self) -> str:
        if self.tok.kind in ("ident", "kw", "str"):
            name = self.tok.value
            self.pos += 1
            return name
        self.fail("expected a field name")

    # -- patterns --

    def pattern(self) -> Any:
        if self.at("if") and self.peek().text == "(":
            self.pos += 1
            self.expect("(")
            test = self.pattern()
            self.expect(")")
            self.expect("then")
            then = self.pattern()
            self.expect("else")
            return IfPat(test, then, self.pattern())
        return self.binary(1)

    def binary(self, level: int) -> Any:
        if level > 6:
            return self.unary()
        left = self.binary(level + 1)
        while self.tok.kind == "op" and PRECEDENCE.get(self.tok.text) == level:
            op = self.tok.text
            self.pos += 1
            left = BinOp(op, left, self.binary(level + 1))
        return left

    def unary(self) -> Any:
        if self.at("-") and self.peek().kind == "num":
            self.pos += 1
            value = -self.tok.value
            self.pos += 1
            return self.postfix(Literal(value))
        return self.postfix(self.primary())

    def _update_ahead(self) -> bool:
        return self.at("[") and self.peek().kind in ("ident", "kw", "str") and self.peek(2).text == "->"

    def postfix(self, base: Any) -> Any:
        while True:
            if self._update_ahead():
                self.pos += 1
                name = self.field_name()
                self.expect("->")
                value = self.pattern()
                self.expect("]")
                base = UpdateField(base, name, value)
            elif self.at("[") or self.at("."):
                if not isinstance(base, (Input, Var)):
                    self.fail("queries apply only to 'in' or a variable")
                if self.accept("["):
                    step = self.index()
                    self.expect("]")
                else:
                    self.pos += 1
                    if self.accept("["):
                        step = self.index()
                        self.expect("]")
                    else:
                        step = Field(self.field_name())
                base = type(base)(*((base.name,) if isinstance(base, Var) else ()), base.query + (step,))
            else:
                return base

    def index(self) -> Index:
        if self.tok.kind != "num" or not isinstance(self.tok.value, int):
            self.fail("expected an array index")
        n = self.tok.value
        self.pos += 1
        return Index(n)

    def primary(self) -> Any:
        t = self.tok
        if t.kind in ("num", "str"):
            self.pos += 1
            return Literal(t.value)
        if t.kind == "kw":
            if t.text in ("true", "false", "null"):
                self.pos += 1
                return Literal({"true": True, "false": False, "null": None}[t.text])
            if t.text == "in":
                self.pos += 1
                return Input()
            self.fail("expected a pattern")
        if t.kind == "ident":
            if not self.surface:
                self.fail("only 'in' may be referenced in core patterns")
            self.pos += 1
            return Var(t.text)
        if self._update_ahead():
            return Input()  # bare [f -> p] updates the input; postfix handles it
        if self.accept("["):
            items = []
            if not self.at("]"):
                items.append(self.pattern())
                while self.accept(","):
                    items.append(self.pattern())
            self.expect("]")
            return ArrayPat(tuple(items))
        if self.accept("{"):
            fields = []
            seen = set()
            if not self.at("}"):
                while True:
                    where = self.tok
                    name = self.field_name()
                    if name in seen:
                        raise SplSyntaxError(f"duplicate field {name!r}", where.line, where.column)
                    seen.add(name)
                    self.expect(":")
                    fields.append((name, self.pattern()))
                    if not self.accept(","):
                        break
            self.expect("}")
            return ObjectPat(tuple(fields))
        if self.accept("("):
            inner = self.pattern()
            self.expect(")")
            return inner
        self.fail("expected a pattern")

    # -- core expressions --

    def expr(self) -> Any:
        left = self.atom()
        while self.accept(">>>"):
            left = Seq(left, self.atom())
        return left

    def atom(self) -> Any:
        if self.at("invoke"):
            self.pos += 1
            return Invoke(self.ident())
        if self.at("first"):
            self.pos += 1
            self.expect("(")
            body = self.expr()
            self.expect(")")
            return First(body)
        if self.at("get"):
            self.pos += 1
            return Get()
        if self.at("if"):
            mark = self.pos
            self.pos += 1
            self.expect("(")
            test = self.pattern()
            self.expect(")")
            if self.accept("{"):
                then = self.expr()
                self.expect("}")
                self.expect("else")
                self.expect("{")
                orelse = self.expr()
                self.expect("}")
                return Cond(test, then, orelse)
            self.pos = mark
        if self.at("("):
            mark = self.pos
            try:
                self.pos += 1
                inner = self.expr()
                self.expect(")")
                if not (self.tok.kind == "op" and (self.tok.text in PRECEDENCE or self.tok.text in ("[", "."))):
                    return inner
            except SplSyntaxError:
                pass
            self.pos = mark
        return Transform(self.pattern())

    def end(self):
        if self.tok.kind != "eof":
            self.fail("expected end of input")


def parse_pattern(text: str, surface: bool = False) -> Any:
    p = _Parser(text, surface)
    out = p.pattern()
    p.end()
    return out


def parse_core(text: str) -> Any:
    """Parse the textual core notation into an expression tree."""
    p = _Parser(text, surface=False)
    out = p.expr()
    p.end()
    return out


def literal_pattern(value: Any) -> Any:
    """A pattern that evaluates to the (frozen) JSON ``value``."""
    from ..jsonvalue import JsonObject

    value = freeze(value)
    if isinstance(value, tuple):
        return ArrayPat(tuple(literal_pattern(v) for v in value))
    if isinstance(value, JsonObject):
        return ObjectPat(tuple((k, literal_pattern(v)) for k, v in value.items()))
    return Literal(value)
