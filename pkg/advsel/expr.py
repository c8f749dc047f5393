"""
Expressions in one variable `x`: AST, parser and symbolic derivative.

The problem data (f, r, n0) are given as expression strings so that configs
stay plain text and derivatives are exact. Grammar (see docs/expressions.md):

    expr    :: term [ ('+' | '-') term ]*
    term    :: unary [ ('*' | '/') unary ]*
    unary   :: [ '+' | '-' ]* power
    power   :: operand [ ('^' | '**') power ]
    operand :: number | name | name '(' expr [',' expr]* ')' | '(' expr ')'

Names: `x`, `pi`, `e`. Functions: exp, ln (alias log), sin, cos, sqrt, abs,
and the interval indicators ind (closed), ind_oo, ind_oc, ind_co whose two
bounds must be constant expressions.

Evaluation is vectorised over numpy arrays. `side='left'|'right'` evaluates the
one-sided limit at breakpoints of indicators and of abs().
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pyparsing as pp

from .errors import ExprDomainError, ExprSyntaxError, NotDifferentiable, UnknownIdentifier

pp.ParserElement.enable_packrat()

UNARY_FUNCTIONS = ("exp", "ln", "sin", "cos", "sqrt", "abs")
FUNCTION_ALIASES = {"log": "ln"}
INDICATORS = {
    "ind": (True, True),
    "ind_oo": (False, False),
    "ind_oc": (False, True),
    "ind_co": (True, False),
}
CONSTANTS = {"pi": math.pi, "e": math.e}


def _first(x, mask):
    """Return the first x value where mask holds, for error messages."""
    xs = np.broadcast_to(x, np.shape(mask))
    idx = np.flatnonzero(np.asarray(mask).ravel())
    return float(np.asarray(xs).ravel()[idx[0]]) if idx.size else float("nan")


def _nudge(x, side):
    step = 1e-9 * (1.0 + np.abs(x))
    return x + step if side == "right" else x - step


class Expr:
    """Base class of all expression nodes."""

    def evaluate(self, x, side=None):
        arr = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            out = np.broadcast_to(np.asarray(self._eval(arr, side), dtype=float), arr.shape)
        bad = ~np.isfinite(out)
        if np.any(bad):
            raise ExprDomainError(f"{self} (non-finite result)", _first(arr, bad))
        if arr.ndim == 0:
            return float(out)
        return np.array(out)

    def __call__(self, x, side=None):
        return self.evaluate(x, side)

    def is_constant(self):
        return False

    # Operator sugar with light constant folding; used for derived fields
    # such as r - f' and for building derivatives.
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, other):
        return power(self, as_expr(other))


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float

    def _eval(self, x, side):
        return np.full_like(x, self.value)

    def _diff(self):
        return ZERO

    def is_constant(self):
        return True

    def __str__(self):
        v = float(self.value)
        return repr(v) if v >= 0 else f"({v!r})"


@dataclass(frozen=True, eq=True)
class Var(Expr):
    def _eval(self, x, side):
        return x

    def _diff(self):
        return ONE

    def __str__(self):
        return "x"


@dataclass(frozen=True, eq=True)
class Unary(Expr):
    op: str
    arg: Expr

    def is_constant(self):
        return self.arg.is_constant()

    def _eval(self, x, side):
        u = self.arg._eval(x, side)
        op = self.op
        if op == "neg":
            return -u
        if op == "exp":
            return np.exp(u)
        if op == "ln":
            bad = u <= 0
            if np.any(bad):
                raise ExprDomainError("ln of a non-positive value", _first(x, bad))
            return np.log(u)
        if op == "sqrt":
            bad = u < 0
            if np.any(bad):
                raise ExprDomainError("sqrt of a negative value", _first(x, bad))
            return np.sqrt(u)
        if op == "sin":
            return np.sin(u)
        if op == "cos":
            return np.cos(u)
        if op == "abs":
            return np.abs(u)
        raise ValueError(f"unknown unary op {op}")

    def _diff(self):
        u, du = self.arg, self.arg._diff()
        op = self.op
        if op == "neg":
            return neg(du)
        if op == "exp":
            return mul(self, du)
        if op == "ln":
            return div(du, u)
        if op == "sqrt":
            return div(du, mul(Const(2.0), self))
        if op == "sin":
            return mul(Unary("cos", u), du)
        if op == "cos":
            return neg(mul(Unary("sin", u), du))
        if op == "abs":
            return mul(Sign(u), du)
        raise ValueError(f"unknown unary op {op}")

    def __str__(self):
        if self.op == "neg":
            return f"(-{self.arg})"
        return f"{self.op}({self.arg})"


_BINARY_SYMBOLS = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}


@dataclass(frozen=True, eq=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr

    def is_constant(self):
        return self.left.is_constant() and self.right.is_constant()

    def _eval(self, x, side):
        a = self.left._eval(x, side)
        b = self.right._eval(x, side)
        op = self.op
        if op == "add":
            return a + b
        if op == "sub":
            return a - b
        if op == "mul":
            return a * b
        if op == "div":
            bad = np.broadcast_to(b == 0, np.broadcast(a, b).shape)
            if np.any(bad):
                raise ExprDomainError("division by zero", _first(x, bad))
            return a / b
        if op == "pow":
            out = np.power(a, b)
            bad = np.isnan(out) & ~np.isnan(a) & ~np.isnan(b)
            if np.any(bad):
                raise ExprDomainError("power of a negative base", _first(x, bad))
            return out
        raise ValueError(f"unknown binary op {op}")

    def _diff(self):
        a, b = self.left, self.right
        da, db = a._diff(), b._diff()
        op = self.op
        if op == "add":
            return add(da, db)
        if op == "sub":
            return sub(da, db)
        if op == "mul":
            return add(mul(da, b), mul(a, db))
        if op == "div":
            return div(sub(mul(da, b), mul(a, db)), mul(b, b))
        if op == "pow":
            if b.is_constant():
                c = b.evaluate(0.0)
                return mul(mul(Const(c), power(a, Const(c - 1.0))), da)
            if a.is_constant():
                return mul(mul(self, Unary("ln", a)), db)
            return mul(self, add(mul(db, Unary("ln", a)), div(mul(b, da), a)))
        raise ValueError(f"unknown binary op {op}")

    def __str__(self):
        return f"({self.left} {_BINARY_SYMBOLS[self.op]} {self.right})"


@dataclass(frozen=True, eq=True)
class Indicator(Expr):
    """Indicator of an interval; end flags say whether each end is closed."""

    lo: float
    hi: float
    lo_closed: bool = True
    hi_closed: bool = True

    def _eval(self, x, side):
        if side is None:
            above = x >= self.lo if self.lo_closed else x > self.lo
            below = x <= self.hi if self.hi_closed else x < self.hi
        elif side == "right":
            above, below = x >= self.lo, x < self.hi
        else:
            above, below = x > self.lo, x <= self.hi
        return np.where(above & below, 1.0, 0.0)

    def _diff(self):
        return Jump((float(self.lo), float(self.hi)))

    def breakpoints(self):
        return (float(self.lo), float(self.hi))

    def __str__(self):
        name = {v: k for k, v in INDICATORS.items()}[(self.lo_closed, self.hi_closed)]
        return f"{name}({float(self.lo)!r}, {float(self.hi)!r})"


@dataclass(frozen=True, eq=True)
class Jump(Expr):
    """Derivative of an indicator: zero away from its breakpoints, undefined on them."""

    breakpoints: tuple

    def _eval(self, x, side):
        if side is None:
            hit = np.isin(x, self.breakpoints)
            if np.any(hit):
                raise NotDifferentiable(_first(x, hit), "indicator endpoint")
        return np.zeros_like(x)

    def _diff(self):
        return self

    def __str__(self):
        return f"jump{self.breakpoints}"


@dataclass(frozen=True, eq=True)
class Sign(Expr):
    """Derivative of abs(): sign of the argument, undefined where it vanishes."""

    arg: Expr

    def _eval(self, x, side):
        u = self.arg._eval(x, side)
        zero = u == 0
        if np.any(zero):
            if side is None:
                raise NotDifferentiable(_first(x, zero), "kink of abs")
            u = np.where(zero, self.arg._eval(_nudge(x, side), side), u)
        return np.sign(u)

    def _diff(self):
        return ZERO

    def __str__(self):
        return f"sign({self.arg})"


ZERO = Const(0.0)
ONE = Const(1.0)
X = Var()


def as_expr(value):
    if isinstance(value, Expr):
        return value
    return Const(float(value))


def _const(e):
    return e.value if isinstance(e, Const) else None


def add(a, b):
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        return Const(ca + cb)
    if ca == 0.0:
        return b
    if cb == 0.0:
        return a
    return Binary("add", a, b)


def sub(a, b):
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        return Const(ca - cb)
    if cb == 0.0:
        return a
    if ca == 0.0:
        return neg(b)
    return Binary("sub", a, b)


def mul(a, b):
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        return Const(ca * cb)
    if ca == 0.0 or cb == 0.0:
        return ZERO
    if ca == 1.0:
        return b
    if cb == 1.0:
        return a
    return Binary("mul", a, b)


def div(a, b):
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None and cb != 0.0:
        return Const(ca / cb)
    if ca == 0.0:
        return ZERO
    if cb == 1.0:
        return a
    return Binary("div", a, b)


def neg(a):
    ca = _const(a)
    if ca is not None:
        return Const(-ca)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def power(a, b):
    cb = _const(b)
    if cb == 0.0:
        return ONE
    if cb == 1.0:
        return a
    ca = _const(a)
    if ca is not None and cb is not None:
        return Const(ca ** cb)
    return Binary("pow", a, b)


def differentiate(e: Expr) -> Expr:
    """Symbolic d/dx. Indicators differentiate to Jump nodes, abs to Sign."""
    return e._diff()


def breakpoints(e: Expr) -> list[float]:
    """Sorted indicator breakpoints appearing anywhere in e."""
    found = set()

    def walk(node):
        if isinstance(node, (Indicator, Jump)):
            found.update(node.breakpoints if isinstance(node, Jump) else node.breakpoints())
        elif isinstance(node, (Unary, Sign)):
            walk(node.arg)
        elif isinstance(node, Binary):
            walk(node.left)
            walk(node.right)

    walk(e)
    return sorted(found)


def evaluate_lenient(e: Expr, x, side="right"):
    """Evaluate e, falling back to one-sided limits where a derivative node is undefined."""
    try:
        return e.evaluate(x)
    except NotDifferentiable:
        return e.evaluate(x, side=side)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

@dataclass
class _Raw:
    kind: str
    value: object
    args: list
    loc: int


def _number_action(s, loc, toks):
    return _Raw("num", float(toks[0]), [], loc)


def _name_action(s, loc, toks):
    return _Raw("name", toks[0], [], loc)


def _call_action(s, loc, toks):
    return _Raw("call", toks[0], list(toks[1]), loc)


def _fold_left(s, loc, toks):
    items = list(toks[0])
    node = items[0]
    for op, rhs in zip(items[1::2], items[2::2]):
        node = _Raw("bin", op, [node, rhs], loc)
    return node


def _fold_right(s, loc, toks):
    items = list(toks[0])
    node = items[-1]
    for i in range(len(items) - 2, 0, -2):
        node = _Raw("bin", "^", [items[i - 1], node], loc)
    return node


def _fold_sign(s, loc, toks):
    items = list(toks[0])
    node = items[-1]
    for op in reversed(items[:-1]):
        if op == "-":
            node = _Raw("neg", None, [node], loc)
    return node


def _build_grammar():
    number = pp.Regex(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?").set_parse_action(_number_action)
    ident = pp.Regex(r"[A-Za-z_][A-Za-z_0-9]*")
    expr = pp.Forward()
    lpar, rpar, comma = pp.Suppress("("), pp.Suppress(")"), pp.Suppress(",")
    arglist = pp.Group(pp.Optional(expr + pp.ZeroOrMore(comma + expr)))
    call = (ident + lpar + arglist + rpar).set_parse_action(_call_action)
    name = ident.copy().set_parse_action(_name_action)
    operand = number | call | name
    expr <<= pp.infix_notation(
        operand,
        [
            (pp.one_of("^ **"), 2, pp.OpAssoc.RIGHT, _fold_right),
            (pp.one_of("+ -"), 1, pp.OpAssoc.RIGHT, _fold_sign),
            (pp.one_of("* /"), 2, pp.OpAssoc.LEFT, _fold_left),
            (pp.one_of("+ -"), 2, pp.OpAssoc.LEFT, _fold_left),
        ],
    )
    return expr


_GRAMMAR = _build_grammar()
_BIN_OPS = {"+": "add", "-": "sub", "*": "mul", "/": "div", "^": "pow", "**": "pow"}


def _byte_offset(text, loc):
    return len(text[:loc].encode("utf-8"))


def _build(raw, text):
    if raw.kind == "num":
        return Const(raw.value)
    if raw.kind == "name":
        if raw.value == "x":
            return X
        if raw.value in CONSTANTS:
            return Const(CONSTANTS[raw.value])
        raise UnknownIdentifier(raw.value, _byte_offset(text, raw.loc))
    if raw.kind == "neg":
        return Unary("neg", _build(raw.args[0], text))
    if raw.kind == "bin":
        return Binary(_BIN_OPS[raw.value], _build(raw.args[0], text), _build(raw.args[1], text))
    if raw.kind == "call":
        fname = FUNCTION_ALIASES.get(raw.value, raw.value)
        offset = _byte_offset(text, raw.loc)
        args = [_build(a, text) for a in raw.args]
        if fname in UNARY_FUNCTIONS:
            if len(args) != 1:
                raise ExprSyntaxError(text, offset, f"{fname}() takes exactly one argument")
            return Unary(fname, args[0])
        if fname in INDICATORS:
            if len(args) != 2 or not all(a.is_constant() for a in args):
                raise ExprSyntaxError(text, offset, f"{fname}() takes two constant bounds")
            lo, hi = (a.evaluate(0.0) for a in args)
            if not lo < hi:
                raise ExprSyntaxError(text, offset, f"{fname}() bounds must satisfy lo < hi")
            lo_closed, hi_closed = INDICATORS[fname]
            return Indicator(lo, hi, lo_closed, hi_closed)
        raise UnknownIdentifier(raw.value, offset)
    raise ValueError(f"unexpected parse node {raw.kind}")


def parse_expression(text: str) -> Expr:
    """Parse an expression string into an Expr tree."""
    if not isinstance(text, str):
        text = str(text)
    try:
        result = _GRAMMAR.parse_string(text, parse_all=True)
    except pp.ParseBaseException as e:
        raise ExprSyntaxError(text, _byte_offset(text, e.loc), e.msg) from None
    return _build(result[0], text)
