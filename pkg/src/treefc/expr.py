"""Unit-typed feature expressions.

An expression is an immutable tree whose leaves are dataset columns and whose
internal nodes are one of eight operators. Every column carries a physical
unit (a power of GeV, an angle, or dimensionless) and the operators only
combine compatible units, so e.g. ``theta_lep + pz_e`` is rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Mapping

import numpy as np

from .errors import ExprSyntaxError, PowerOutOfRange, UnitMismatch, UnknownColumn

MAX_POWER = 4
DIV_EPSILON = 1e-12
# values are clipped to this magnitude so that deep products stay finite
VALUE_CAP = 1e150


@dataclass(frozen=True, order=True)
class UnitClass:
    kind: str  # "gev" | "angle" | "dimless"
    power: int = 0

    def __post_init__(self):
        if self.kind not in ("gev", "angle", "dimless"):
            raise ValueError(f"bad unit kind {self.kind!r}")
        if self.kind != "gev" and self.power != 0:
            raise ValueError(f"{self.kind} carries no power")
        if self.kind == "gev" and self.power == 0:
            raise ValueError("GeV^0 must be written as DIMLESS")

    @property
    def gev_power(self) -> int | None:
        """Multiplicative power, treating DIMLESS as GeV^0; None for angles."""
        if self.kind == "angle":
            return None
        return self.power

    def token(self) -> str:
        return f"gev:{self.power}" if self.kind == "gev" else self.kind

    def __str__(self):
        return self.token()

    @classmethod
    def parse(cls, token: str) -> "UnitClass":
        token = token.strip().lower()
        if token in ("angle", "dimless"):
            return cls(token)
        m = re.fullmatch(r"gev(?::([+-]?\d+))?", token)
        if not m:
            raise ValueError(f"bad unit token {token!r}")
        return gev(int(m.group(1) or 1))


ANGLE = UnitClass("angle")
DIMLESS = UnitClass("dimless")


def gev(power: int) -> UnitClass:
    return DIMLESS if power == 0 else UnitClass("gev", power)


class Op(Enum):
    ADD = "+"
    SUB = "-"
    MUL = "*"
    DIV = "/"
    COS = "cos"
    SIN = "sin"
    SQ = "sq"
    SQRT = "sqrt"

    @property
    def arity(self) -> int:
        return 2 if self in BINARY_OPS else 1

    @property
    def code(self) -> int:
        return OP_CODES[self]


BINARY_OPS = (Op.ADD, Op.SUB, Op.MUL, Op.DIV)
UNARY_OPS = (Op.COS, Op.SIN, Op.SQ, Op.SQRT)
ALL_OPS = BINARY_OPS + UNARY_OPS
OP_CODES = {op: i for i, op in enumerate(ALL_OPS)}
COMMUTATIVE = (Op.ADD, Op.MUL)


def apply_unit(op: Op, operands: tuple[UnitClass, ...], max_power: int = MAX_POWER) -> UnitClass | None:
    """Result unit of ``op`` on ``operands``, or None if the combination is ill-typed
    or leaves the allowed power range."""
    if op in (Op.ADD, Op.SUB):
        a, b = operands
        return a if a == b else None
    if op in (Op.MUL, Op.DIV):
        pa, pb = operands[0].gev_power, operands[1].gev_power
        if pa is None or pb is None:
            return None
        p = pa + pb if op is Op.MUL else pa - pb
        return gev(p) if abs(p) <= max_power else None
    (a,) = operands
    if op in (Op.COS, Op.SIN):
        return DIMLESS if a == ANGLE else None
    if op is Op.SQ:
        p = a.gev_power
        if p is None or abs(2 * p) > max_power:
            return None
        return gev(2 * p)
    # SQRT
    p = a.gev_power
    if p is None or p % 2:
        return None
    return gev(p // 2)


class FeatureExpr:
    """Base class of the three node kinds. Instances are immutable and hashable."""

    __slots__ = ()
    depth: int
    size: int

    def children(self) -> tuple["FeatureExpr", ...]:
        return ()

    def __str__(self):
        return pretty_print(self)


@dataclass(frozen=True, repr=False)
class Terminal(FeatureExpr):
    name: str
    depth: int = field(default=1, init=False, compare=False)
    size: int = field(default=1, init=False, compare=False)

    def __repr__(self):
        return f"Terminal({self.name!r})"


@dataclass(frozen=True, repr=False)
class Unary(FeatureExpr):
    op: Op
    child: FeatureExpr
    depth: int = field(init=False, compare=False)
    size: int = field(init=False, compare=False)

    def __post_init__(self):
        if self.op.arity != 1:
            raise ValueError(f"{self.op} is not unary")
        object.__setattr__(self, "depth", self.child.depth + 1)
        object.__setattr__(self, "size", self.child.size + 1)

    def children(self):
        return (self.child,)

    def __repr__(self):
        return f"Unary({self.op.name}, {self.child!r})"


@dataclass(frozen=True, repr=False)
class Binary(FeatureExpr):
    op: Op
    left: FeatureExpr
    right: FeatureExpr
    depth: int = field(init=False, compare=False)
    size: int = field(init=False, compare=False)

    def __post_init__(self):
        if self.op.arity != 2:
            raise ValueError(f"{self.op} is not binary")
        object.__setattr__(self, "depth", max(self.left.depth, self.right.depth) + 1)
        object.__setattr__(self, "size", self.left.size + self.right.size + 1)

    def children(self):
        return (self.left, self.right)

    def __repr__(self):
        return f"Binary({self.op.name}, {self.left!r}, {self.right!r})"


def make(op: Op, *children: FeatureExpr) -> FeatureExpr:
    return Binary(op, *children) if op.arity == 2 else Unary(op, *children)


def columns_of(expr: FeatureExpr) -> set[str]:
    return {sub.name for _, sub in iter_subtrees(expr) if isinstance(sub, Terminal)}


# ---------------------------------------------------------------------------
# typing


def infer_unit(expr: FeatureExpr, schema: Mapping[str, UnitClass], max_power: int = MAX_POWER) -> UnitClass:
    """Return the unit of ``expr`` or raise the typing error of the first offending node."""
    return _infer(expr, schema, max_power, ())


def _infer(expr, schema, max_power, path):
    if isinstance(expr, Terminal):
        try:
            return schema[expr.name]
        except KeyError:
            raise UnknownColumn(expr.name) from None
    units = tuple(_infer(c, schema, max_power, path + (i,)) for i, c in enumerate(expr.children()))
    out = apply_unit(expr.op, units, max_power)
    if out is not None:
        return out
    if expr.op in (Op.MUL, Op.DIV, Op.SQ):
        powers = [u.gev_power for u in units]
        if None not in powers:
            p = {Op.MUL: lambda: powers[0] + powers[1], Op.DIV: lambda: powers[0] - powers[1],
                 Op.SQ: lambda: 2 * powers[0]}[expr.op]()
            raise PowerOutOfRange(path, p, max_power)
    raise UnitMismatch(path, f"{expr.op.name} cannot combine {', '.join(map(str, units))}")


def is_well_typed(expr: FeatureExpr, schema: Mapping[str, UnitClass], max_power: int = MAX_POWER) -> bool:
    try:
        infer_unit(expr, schema, max_power)
    except (UnitMismatch, UnknownColumn, PowerOutOfRange):
        return False
    return True


# ---------------------------------------------------------------------------
# evaluation


def _cap(x):
    return np.nan_to_num(np.clip(x, -VALUE_CAP, VALUE_CAP), nan=0.0)


def eval_columns(expr: FeatureExpr, columns: Mapping[str, np.ndarray], epsilon: float = DIV_EPSILON) -> np.ndarray:
    """Evaluate on a mapping of column name -> 1-d float array.

    Division by ``|d| < epsilon`` yields 0 and ``sqrt`` acts on the absolute
    value, so the result is finite for every finite input.
    """
    with np.errstate(all="ignore"):
        return np.asarray(_eval(expr, columns, epsilon), dtype=np.float64)


def _eval(expr, columns, eps):
    if isinstance(expr, Terminal):
        try:
            return np.asarray(columns[expr.name], dtype=np.float64)
        except KeyError:
            raise UnknownColumn(expr.name) from None
    op = expr.op
    if isinstance(expr, Unary):
        a = _eval(expr.child, columns, eps)
        if op is Op.COS:
            return np.cos(a)
        if op is Op.SIN:
            return np.sin(a)
        if op is Op.SQ:
            return _cap(a * a)
        return np.sqrt(np.abs(a))
    a = _eval(expr.left, columns, eps)
    b = _eval(expr.right, columns, eps)
    if op is Op.ADD:
        return _cap(a + b)
    if op is Op.SUB:
        return _cap(a - b)
    if op is Op.MUL:
        return _cap(a * b)
    small = np.abs(b) < eps
    return _cap(np.where(small, 0.0, a / np.where(small, 1.0, b)))


# ---------------------------------------------------------------------------
# text form

_PREC = {Op.ADD: 1, Op.SUB: 1, Op.MUL: 2, Op.DIV: 2}


def pretty_print(expr: FeatureExpr) -> str:
    """Infix rendering with minimal parentheses; inverse of :func:`parse_expr`."""
    if isinstance(expr, Terminal):
        return expr.name
    if isinstance(expr, Unary):
        return f"{expr.op.value}({pretty_print(expr.child)})"
    prec = _PREC[expr.op]
    left = pretty_print(expr.left)
    right = pretty_print(expr.right)
    if isinstance(expr.left, Binary) and _PREC[expr.left.op] < prec:
        left = f"({left})"
    # operators are parsed left-associatively, so an equal-precedence right operand needs parens
    if isinstance(expr.right, Binary) and _PREC[expr.right.op] <= prec:
        right = f"({right})"
    return f"{left} {expr.op.value} {right}"


_TOKEN = re.compile(r"\s*(?:([A-Za-z_][A-Za-z0-9_]*)|([-+*/()]))")
_FUNCS = {op.value: op for op in UNARY_OPS}


def _tokenize(text):
    pos, out = 0, []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprSyntaxError(text, bad, "unexpected character")
        out.append((m.group(1) or m.group(2), m.start(m.lastindex), bool(m.group(1))))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, len(self.text), False)

    def take(self, expected=None):
        tok = self.peek()
        if tok[0] is None or (expected is not None and tok[0] != expected):
            want = repr(expected) if expected else "a token"
            raise ExprSyntaxError(self.text, tok[1], f"expected {want}")
        self.i += 1
        return tok

    def expr(self):
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op = Op.ADD if self.take()[0] == "+" else Op.SUB
            node = Binary(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[0] in ("*", "/"):
            op = Op.MUL if self.take()[0] == "*" else Op.DIV
            node = Binary(op, node, self.factor())
        return node

    def factor(self):
        tok, pos, is_ident = self.peek()
        if tok == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        if not is_ident:
            raise ExprSyntaxError(self.text, pos, "expected a column or function")
        self.take()
        nxt = self.peek()[0]
        if tok in _FUNCS and nxt == "(":
            self.take("(")
            node = Unary(_FUNCS[tok], self.expr())
            self.take(")")
            return node
        return Terminal(tok)


def parse_expr(text: str, schema: Mapping[str, UnitClass] | None = None, max_power: int = MAX_POWER) -> FeatureExpr:
    """Parse infix text. With a schema, the result is also type-checked."""
    parser = _Parser(text)
    node = parser.expr()
    tok, pos, _ = parser.peek()
    if tok is not None:
        raise ExprSyntaxError(text, pos, "trailing input")
    if schema is not None:
        infer_unit(node, schema, max_power)
    return node


# ---------------------------------------------------------------------------
# structure


def iter_subtrees(expr: FeatureExpr, path: tuple[int, ...] = ()) -> Iterator[tuple[tuple[int, ...], FeatureExpr]]:
    """Pre-order (path, subtree) pairs; a path lists child indices from the root."""
    yield path, expr
    for i, c in enumerate(expr.children()):
        yield from iter_subtrees(c, path + (i,))


def subtree_at(expr: FeatureExpr, path) -> FeatureExpr:
    for i in path:
        expr = expr.children()[i]
    return expr


def replace_at(expr: FeatureExpr, path, new: FeatureExpr) -> FeatureExpr:
    if not path:
        return new
    kids = list(expr.children())
    kids[path[0]] = replace_at(kids[path[0]], path[1:], new)
    return make(expr.op, *kids)


def structural_key(expr: FeatureExpr) -> tuple:
    """Total order used for canonical operand ordering: (kind, op code, column name, children)."""
    if isinstance(expr, Terminal):
        return (0, -1, expr.name)
    return (1 if isinstance(expr, Unary) else 2, expr.op.code, "") + tuple(structural_key(c) for c in expr.children())


def canonicalize(expr: FeatureExpr) -> FeatureExpr:
    """Sort the operands of ADD and MUL nodes. Idempotent; evaluation is unchanged
    because only commutative operands are swapped."""
    if isinstance(expr, Terminal):
        return expr
    if isinstance(expr, Unary):
        return Unary(expr.op, canonicalize(expr.child))
    left, right = canonicalize(expr.left), canonicalize(expr.right)
    if expr.op in COMMUTATIVE and structural_key(right) < structural_key(left):
        left, right = right, left
    return Binary(expr.op, left, right)


def _ac_form(expr):
    """Nested-tuple form with ADD/MUL chains flattened into sorted operand tuples."""
    if isinstance(expr, Terminal):
        return ("T", expr.name)
    if expr.op in COMMUTATIVE:
        operands = []
        stack = [expr]
        while stack:
            node = stack.pop()
            if isinstance(node, Binary) and node.op is expr.op:
                stack.extend((node.left, node.right))
            else:
                operands.append(_ac_form(node))
        return (expr.op.name, tuple(sorted(operands)))
    return (expr.op.name,) + tuple(_ac_form(c) for c in expr.children())


def _contains_multiset(big, small):
    rest = list(big)
    for item in small:
        if item not in rest:
            return False
        rest.remove(item)
    return True


def _ac_nodes(form):
    yield form
    if form[0] == "T":
        return
    if form[0] in ("ADD", "MUL"):
        for child in form[1]:
            yield from _ac_nodes(child)
    else:
        for child in form[1:]:
            yield from _ac_nodes(child)


def contains_pattern(expr: FeatureExpr, pattern: FeatureExpr) -> bool:
    """True if ``pattern`` occurs inside ``expr`` up to reordering of commutative
    operands. Sums and products are matched as operand multisets, so
    ``a + b + c`` occurs in ``(c + d) + (b + a)`` whatever the parenthesization."""
    target = _ac_form(pattern)
    for node in _ac_nodes(_ac_form(expr)):
        if node == target:
            return True
        if target[0] in ("ADD", "MUL") and node[0] == target[0] and _contains_multiset(node[1], target[1]):
            return True
    return False
