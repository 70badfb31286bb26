"""Arithmetic expression language for auxiliary rewards.

Grammar (recursive descent)::

    expr  := term (("+" | "-") term)*
    term  := unary (("*" | "/") unary)*
    unary := "-" unary | power
    power := atom ("^" unary)?
    atom  := NUMBER | IDENT | IDENT "(" expr ("," expr)* ")" | "(" expr ")"

``^`` is right-associative and binds tighter than unary minus, so ``-2^2``
is -4 and ``2^3^2`` is 512.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .errors import ArityMismatch, DslSyntaxError, NonFiniteResult, UnboundVariable, UnknownFunction


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    child: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expr", ...]


Expr = Num | Var | Neg | BinOp | Call


def _clamp(x, lo, hi):
    return min(max(x, lo), hi)


FUNCTIONS = {
    "exp": (1, math.exp),
    "log": (1, math.log),
    "tanh": (1, math.tanh),
    "abs": (1, abs),
    "sqrt": (1, math.sqrt),
    "min": (2, min),
    "max": (2, max),
    "clamp": (3, _clamp),
}

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[a-z_][a-z0-9_]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # "num" | "ident" | "op" | "end"
    text: str
    pos: int


def tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise DslSyntaxError(pos, "a number, identifier, operator or parenthesis", text)
        if m.lastgroup != "ws":
            toks.append(_Tok(m.lastgroup, m.group(), pos))
        pos = m.end()
    toks.append(_Tok("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def _fail(self, expected: str):
        raise DslSyntaxError(self.tok.pos, expected, self.text)

    def _accept(self, op: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == op:
            self.i += 1
            return True
        return False

    def _expect(self, op: str):
        if not self._accept(op):
            self._fail(repr(op))

    def parse(self) -> Expr:
        node = self.expr()
        if self.tok.kind != "end":
            self._fail("an operator or end of input")
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self._accept("-"):
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self._accept("^"):
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.i += 1
            if not self._accept("("):
                return Var(tok.text)
            if tok.text not in FUNCTIONS:
                raise UnknownFunction(tok.text, tok.pos)
            args = [self.expr()]
            while self._accept(","):
                args.append(self.expr())
            self._expect(")")
            arity = FUNCTIONS[tok.text][0]
            if len(args) != arity:
                raise ArityMismatch(tok.text, arity, len(args), tok.pos)
            return Call(tok.text, tuple(args))
        if self._accept("("):
            node = self.expr()
            self._expect(")")
            return node
        self._fail("a number, identifier or '('")


def parse_expr(text: str) -> Expr:
    return _Parser(text).parse()


def _finite(x: float, what: str) -> float:
    if not math.isfinite(x):
        raise NonFiniteResult(f"{what} produced {x}")
    return x


def eval_expr(ast: Expr, bindings: dict[str, float]) -> float:
    if isinstance(ast, Num):
        return _finite(float(ast.value), "literal")
    if isinstance(ast, Var):
        try:
            return _finite(float(bindings[ast.name]), f"variable {ast.name}")
        except KeyError:
            raise UnboundVariable(ast.name) from None
    if isinstance(ast, Neg):
        return -eval_expr(ast.child, bindings)
    if isinstance(ast, BinOp):
        a = eval_expr(ast.left, bindings)
        b = eval_expr(ast.right, bindings)
        try:
            if ast.op == "+":
                r = a + b
            elif ast.op == "-":
                r = a - b
            elif ast.op == "*":
                r = a * b
            elif ast.op == "/":
                r = a / b
            else:
                r = math.pow(a, b)
        except (ZeroDivisionError, OverflowError, ValueError) as exc:
            raise NonFiniteResult(f"{a} {ast.op} {b}: {exc}") from None
        return _finite(r, f"{a} {ast.op} {b}")
    if isinstance(ast, Call):
        args = [eval_expr(arg, bindings) for arg in ast.args]
        _, fn = FUNCTIONS[ast.func]
        try:
            r = float(fn(*args))
        except (OverflowError, ValueError) as exc:
            raise NonFiniteResult(f"{ast.func}{tuple(args)}: {exc}") from None
        return _finite(r, f"{ast.func}{tuple(args)}")
    raise TypeError(f"not an expression node: {ast!r}")


def free_vars(ast: Expr) -> frozenset[str]:
    if isinstance(ast, Var):
        return frozenset([ast.name])
    if isinstance(ast, Num):
        return frozenset()
    if isinstance(ast, Neg):
        return free_vars(ast.child)
    if isinstance(ast, BinOp):
        return free_vars(ast.left) | free_vars(ast.right)
    return frozenset().union(*(free_vars(a) for a in ast.args))


def print_expr(ast: Expr) -> str:
    """Fully parenthesised source text that parses back to an equivalent tree."""
    if isinstance(ast, Num):
        text = repr(float(ast.value))
        return f"(-{text[1:]})" if text.startswith("-") else text
    if isinstance(ast, Var):
        return ast.name
    if isinstance(ast, Neg):
        return f"(-{print_expr(ast.child)})"
    if isinstance(ast, BinOp):
        return f"({print_expr(ast.left)} {ast.op} {print_expr(ast.right)})"
    return f"{ast.func}({', '.join(print_expr(a) for a in ast.args)})"


_ARITH = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": lambda a, b: a / b,
    "^": math.pow,
}


def compile_expr(ast: Expr):
    """Closure equivalent to ``eval_expr(ast, .)``; faster for per-step use."""
    if isinstance(ast, Num):
        value = _finite(float(ast.value), "literal")
        return lambda b: value
    if isinstance(ast, Var):
        name = ast.name

        def var(b):
            try:
                return _finite(float(b[name]), f"variable {name}")
            except KeyError:
                raise UnboundVariable(name) from None
        return var
    if isinstance(ast, Neg):
        child = compile_expr(ast.child)
        return lambda b: -child(b)
    if isinstance(ast, BinOp):
        left, right, fn, op = compile_expr(ast.left), compile_expr(ast.right), _ARITH[ast.op], ast.op

        def binop(b):
            x, y = left(b), right(b)
            try:
                r = fn(x, y)
            except (ZeroDivisionError, OverflowError, ValueError) as exc:
                raise NonFiniteResult(f"{x} {op} {y}: {exc}") from None
            if r - r != 0.0:
                raise NonFiniteResult(f"{x} {op} {y} produced {r}")
            return r
        return binop
    args = [compile_expr(a) for a in ast.args]
    _, fn = FUNCTIONS[ast.func]
    fname = ast.func

    def call(b):
        vals = [a(b) for a in args]
        try:
            r = float(fn(*vals))
        except (OverflowError, ValueError) as exc:
            raise NonFiniteResult(f"{fname}{tuple(vals)}: {exc}") from None
        if r - r != 0.0:
            raise NonFiniteResult(f"{fname}{tuple(vals)} produced {r}")
        return r
    return call


class AuxReward:
    """A parsed auxiliary reward bound to an environment's variable namespace."""

    def __init__(self, text: str, namespace=None):
        self.text = text
        self.ast = parse_expr(text)
        if namespace is not None:
            missing = free_vars(self.ast) - set(namespace)
            if missing:
                raise UnboundVariable(sorted(missing)[0])
        self._fn = compile_expr(self.ast)

    def __call__(self, bindings: dict[str, float]) -> float:
        return self._fn(bindings)
