"""
Expression language for integrands ``f(x, u, xi)`` and endpoint functions ``g(u(a), u(b))``.

Integrand variables are ``x1..xd``, ``u1..um`` and ``xiIJ`` (component ``I``,
derivative ``J``).  Shorthands: ``xiK`` when either ``m == 1`` or ``d == 1``;
``x``, ``u`` and ``xi`` when the corresponding block has a single entry; and
``xiI_J`` for indices above 9.  Endpoint functions use ``uaI`` and ``ubI``
for the components of ``u`` at the left and right end of the interval.

Supported syntax: numbers, ``+ - * /``, ``^`` (or ``**``) with a constant
exponent, ``abs``, ``max``, ``min``, ``sin``, ``cos``, ``exp``, ``log``,
``sqrt``, ``square``, ``tanh`` and ``power(e, p)``.

Codifferentials are propagated node by node: smooth nodes through the chain
rule for smooth outer functions, ``abs`` as ``max(e, -e)``, and ``max`` /
``min`` through their polytope rules.  Nested nonsmooth nodes such as
``abs(abs(u1) - 1)`` therefore need no special treatment.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .codiff_core import Codifferential, compose_smooth, linear_combine, max_rule, min_rule

__all__ = [
    "ArityError",
    "ExprDomainError",
    "ExprSyntaxError",
    "IntegrandExpr",
    "U_XI",
    "UnknownIdentifierError",
    "UnsupportedNodeError",
    "VariableSelector",
    "X_XI",
    "codiff_at",
    "eval_expr",
    "parse",
    "parse_boundary",
]


class ExprSyntaxError(ValueError):
    """Malformed expression; ``column`` is 1-based."""

    def __init__(self, message: str, column: int):
        super().__init__(f"{message} (column {column})")
        self.column = column


class UnknownIdentifierError(ExprSyntaxError):
    pass


class ArityError(ExprSyntaxError):
    pass


class ExprDomainError(ValueError):
    pass


class UnsupportedNodeError(ValueError):
    pass


# -- nodes ---------------------------------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    block: str  # "x", "u" or "xi"
    index: tuple  # (i,) for x and u, (i, j) for xi; zero-based


@dataclass(frozen=True)
class Name:
    """Unresolved identifier, replaced by :class:`Var` once dimensions are known."""

    text: str
    column: int


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: float


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


Node = Union[Const, Var, Name, Neg, BinOp, Pow, Call]

_SMOOTH = {
    "sin": (np.sin, np.cos),
    "cos": (np.cos, lambda y: -np.sin(y)),
    "exp": (np.exp, np.exp),
    "log": (np.log, lambda y: 1.0 / y),
    "sqrt": (np.sqrt, lambda y: 0.5 / np.sqrt(y)),
    "square": (np.square, lambda y: 2.0 * y),
    "tanh": (np.tanh, lambda y: 1.0 - np.tanh(y) ** 2),
}
_ARITY = {name: (1, 1) for name in _SMOOTH} | {"abs": (1, 1), "max": (1, None), "min": (1, None), "power": (2, 2)}


# -- tokenizer and parser ------------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            col = pos + 1 + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {text[col - 1]!r}", col)
        kind = m.lastgroup
        start = m.start(kind) + 1
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.open_parens: list[int] = []

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message: str, tok) -> None:
        if tok[0] == "end" and self.open_parens:
            raise ExprSyntaxError("'(' is never closed", self.open_parens[-1])
        if tok[0] == "end":
            raise ExprSyntaxError(f"{message}: unexpected end of input", tok[2])
        raise ExprSyntaxError(f"{message}: unexpected {tok[1]!r}", tok[2])

    def expect(self, value: str) -> None:
        tok = self.take()
        if tok[1] != value or tok[0] != "op":
            self.fail(f"expected {value!r}", tok)

    def parse(self) -> Node:
        node = self.expression()
        tok = self.peek()
        if tok[0] != "end":
            self.fail("expected end of expression", tok)
        return node

    def expression(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        tok = self.peek()
        if tok[0] == "op" and tok[1] in ("-", "+"):
            self.take()
            arg = self.unary()
            return Neg(arg) if tok[1] == "-" else arg
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        tok = self.peek()
        if tok[0] == "op" and tok[1] in ("^", "**"):
            self.take()
            exp_tok = self.peek()
            exponent = self.unary()
            value = _constant_value(exponent)
            if value is None:
                raise ExprSyntaxError("exponent must be a numeric constant", exp_tok[2])
            return Pow(base, value)
        return base

    def atom(self) -> Node:
        tok = self.take()
        kind, text, col = tok
        if kind == "num":
            return Const(float(text))
        if kind == "op" and text == "(":
            self.open_parens.append(col)
            node = self.expression()
            self.expect(")")
            self.open_parens.pop()
            return node
        if kind == "id":
            nxt = self.peek()
            if nxt[0] == "op" and nxt[1] == "(":
                return self.call(text, col)
            if text in _ARITY:
                raise ArityError(f"function {text!r} needs an argument list", col)
            if text == "pi":
                return Const(math.pi)
            return Name(text, col)
        self.fail("expected a number, variable or '('", tok)

    def call(self, name: str, col: int) -> Node:
        if name not in _ARITY:
            raise UnknownIdentifierError(f"unknown function {name!r}", col)
        paren = self.take()
        self.open_parens.append(paren[2])
        if self.peek()[0] == "op" and self.peek()[1] == ")":
            raise ArityError(f"{name} takes at least 1 argument, got 0", col)
        args = [self.expression()]
        while self.peek()[0] == "op" and self.peek()[1] == ",":
            self.take()
            args.append(self.expression())
        self.expect(")")
        self.open_parens.pop()
        lo, hi = _ARITY[name]
        if len(args) < lo or (hi is not None and len(args) > hi):
            want = f"{lo}" if lo == hi else f"at least {lo}"
            raise ArityError(f"{name} takes {want} argument(s), got {len(args)}", col)
        if name == "power":
            value = _constant_value(args[1])
            if value is None:
                raise ExprSyntaxError("exponent of power() must be a numeric constant", col)
            return Pow(args[0], value)
        return Call(name, tuple(args))


def _constant_value(node: Node) -> Optional[float]:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Neg):
        inner = _constant_value(node.arg)
        return None if inner is None else -inner
    return None


# -- name resolution -----------------------------------------------------------------------------------

_X = re.compile(r"^x(\d+)?$")
_U = re.compile(r"^u(\d+)?$")
_XI = re.compile(r"^xi(?:(\d)(\d)|(\d+)_(\d+)|(\d+))?$")
_UA = re.compile(r"^u([ab])(\d+)?$")


def _walk(node: Node):
    yield node
    if isinstance(node, Neg):
        yield from _walk(node.arg)
    elif isinstance(node, BinOp):
        yield from _walk(node.left)
        yield from _walk(node.right)
    elif isinstance(node, Pow):
        yield from _walk(node.base)
    elif isinstance(node, Call):
        for arg in node.args:
            yield from _walk(arg)


def _rebuild(node: Node, resolve) -> Node:
    if isinstance(node, Name):
        return resolve(node)
    if isinstance(node, Neg):
        return Neg(_rebuild(node.arg, resolve))
    if isinstance(node, BinOp):
        return BinOp(node.op, _rebuild(node.left, resolve), _rebuild(node.right, resolve))
    if isinstance(node, Pow):
        return Pow(_rebuild(node.base, resolve), node.exponent)
    if isinstance(node, Call):
        return Call(node.fn, tuple(_rebuild(a, resolve) for a in node.args))
    return node


def _classify(name: Name):
    """Split an identifier into (block, explicit indices) or raise."""
    t = name.text
    if m := _X.match(t):
        return "x", (int(m.group(1)) if m.group(1) else None,)
    if m := _U.match(t):
        return "u", (int(m.group(1)) if m.group(1) else None,)
    if m := _XI.match(t):
        if m.group(1):
            return "xi", (int(m.group(1)), int(m.group(2)))
        if m.group(3):
            return "xi", (int(m.group(3)), int(m.group(4)))
        if m.group(5):
            return "xi1", (int(m.group(5)),)
        return "xi0", ()
    raise UnknownIdentifierError(f"unknown identifier {t!r}", name.column)


def _resolve_integrand(root: Node, d: Optional[int], m: Optional[int]):
    names = [n for n in _walk(root) if isinstance(n, Name)]
    parsed = [(n, *_classify(n)) for n in names]
    d_seen = max([idx[0] or 1 for _, b, idx in parsed if b == "x"] + [idx[1] for _, b, idx in parsed if b == "xi"] + [1])
    m_seen = max([idx[0] or 1 for _, b, idx in parsed if b == "u"] + [idx[0] for _, b, idx in parsed if b == "xi"] + [1])
    short = [idx[0] for _, b, idx in parsed if b == "xi1"]
    if d is None and m is None and short:
        if m_seen == 1:
            d_seen = max([d_seen] + short)
        elif d_seen == 1:
            m_seen = max([m_seen] + short)
    d = d if d is not None else d_seen
    m = m if m is not None else m_seen

    def resolve(node: Name) -> Var:
        block, idx = _classify(node)
        if block == "xi1":
            k = idx[0]
            if m == 1:
                block, idx = "xi", (1, k)
            elif d == 1:
                block, idx = "xi", (k, 1)
            else:
                raise UnknownIdentifierError(
                    f"{node.text!r} is ambiguous when m = {m} and d = {d}; write xiIJ", node.column
                )
        if block == "xi0":
            if m != 1 or d != 1:
                raise UnknownIdentifierError(f"'xi' needs m = d = 1, got m = {m}, d = {d}", node.column)
            block, idx = "xi", (1, 1)
        if block in ("x", "u") and idx[0] is None:
            size = d if block == "x" else m
            if size != 1:
                raise UnknownIdentifierError(f"{node.text!r} needs an index when the block has {size} entries", node.column)
            idx = (1,)
        limits = {"x": (d,), "u": (m,), "xi": (m, d)}[block]
        if any(i < 1 or i > lim for i, lim in zip(idx, limits)):
            raise UnknownIdentifierError(f"{node.text!r} is outside the declared dimensions (d={d}, m={m})", node.column)
        return Var(block, tuple(i - 1 for i in idx))

    return _rebuild(root, resolve), d, m


def _resolve_boundary(root: Node, m: Optional[int]):
    names = [n for n in _walk(root) if isinstance(n, Name)]
    found = []
    for n in names:
        mt = _UA.match(n.text)
        if not mt:
            raise UnknownIdentifierError(f"unknown identifier {n.text!r} in an endpoint function", n.column)
        found.append((n, mt.group(1), int(mt.group(2)) if mt.group(2) else None))
    m_seen = max([k or 1 for _, _, k in found] + [1])
    m = m if m is not None else m_seen

    def resolve(node: Name) -> Var:
        mt = _UA.match(node.text)
        k = int(mt.group(2)) if mt.group(2) else None
        if k is None:
            if m != 1:
                raise UnknownIdentifierError(f"{node.text!r} needs an index when m = {m}", node.column)
            k = 1
        if k < 1 or k > m:
            raise UnknownIdentifierError(f"{node.text!r} is outside m = {m}", node.column)
        offset = 0 if mt.group(1) == "a" else m
        return Var("u", (offset + k - 1,))

    return _rebuild(root, resolve), m


# -- public types --------------------------------------------------------------------------------------


@dataclass(frozen=True)
class VariableSelector:
    """Which of the blocks ``x``, ``u``, ``xi`` are differentiated; the rest stay frozen."""

    blocks: tuple = ("u", "xi")

    def __post_init__(self):
        blocks = tuple(self.blocks)
        if not blocks:
            raise ValueError("select at least one variable block")
        if any(b not in ("x", "u", "xi") for b in blocks) or len(set(blocks)) != len(blocks):
            raise ValueError(f"invalid variable blocks {blocks}")
        object.__setattr__(self, "blocks", tuple(b for b in ("x", "u", "xi") if b in blocks))

    def layout(self, d: int, m: int) -> dict[str, slice]:
        sizes = {"x": d, "u": m, "xi": m * d}
        out, start = {}, 0
        for b in self.blocks:
            out[b] = slice(start, start + sizes[b])
            start += sizes[b]
        return out

    def dim(self, d: int, m: int) -> int:
        sizes = {"x": d, "u": m, "xi": m * d}
        return sum(sizes[b] for b in self.blocks)


U_XI = VariableSelector(("u", "xi"))
X_XI = VariableSelector(("x", "xi"))


@dataclass(frozen=True)
class IntegrandExpr:
    """
    A parsed expression with resolved variable references.

    ``kind`` is ``"integrand"`` for ``f(x, u, xi)`` and ``"boundary"`` for an
    endpoint function of ``(u(a), u(b))``; for the latter the ``u`` block has
    ``2 m`` entries, left end first.
    """

    root: Node
    d: int
    m: int
    text: str = ""
    kind: str = "integrand"

    def depends_on(self, block: str) -> bool:
        return any(isinstance(n, Var) and n.block == block for n in _walk(self.root))

    def __call__(self, x, u, xi):
        return eval_expr(self, x, u, xi)

    def __str__(self) -> str:
        return self.text

    # endpoint helpers
    def at_ends(self, ya, yb) -> float:
        if self.kind != "boundary":
            raise TypeError("at_ends applies to endpoint functions")
        y = np.concatenate([np.atleast_1d(np.asarray(ya, float)), np.atleast_1d(np.asarray(yb, float))])
        return float(eval_expr(self, np.zeros(1), y, np.zeros((y.shape[0], 1))))

    def codiff_at_ends(self, ya, yb) -> Codifferential:
        """Codifferential in ``(u(a), u(b))``, a vector of length ``2 m``."""
        if self.kind != "boundary":
            raise TypeError("codiff_at_ends applies to endpoint functions")
        y = np.concatenate([np.atleast_1d(np.asarray(ya, float)), np.atleast_1d(np.asarray(yb, float))])
        return codiff_at(self, VariableSelector(("u",)), np.zeros(1), y, np.zeros((y.shape[0], 1)))


def parse(text: str, d: Optional[int] = None, m: Optional[int] = None) -> IntegrandExpr:
    """Parse an integrand; dimensions are inferred from the variables used unless given."""
    root = _Parser(text).parse()
    root, d, m = _resolve_integrand(root, d, m)
    return IntegrandExpr(root, d, m, text, "integrand")


def parse_boundary(text: str, m: Optional[int] = None) -> IntegrandExpr:
    """Parse an endpoint function of ``ua1..uam`` and ``ub1..ubm``."""
    root = _Parser(text).parse()
    root, m = _resolve_boundary(root, m)
    return IntegrandExpr(root, 1, m, text, "boundary")


# -- evaluation ----------------------------------------------------------------------------------------


def _lookup(node: Var, x, u, xi):
    if node.block == "x":
        return x[..., node.index[0]]
    if node.block == "u":
        return u[..., node.index[0]]
    return xi[..., node.index[0], node.index[1]]


def _eval(node: Node, x, u, xi):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return _lookup(node, x, u, xi)
    if isinstance(node, Neg):
        return -_eval(node.arg, x, u, xi)
    if isinstance(node, BinOp):
        a = _eval(node.left, x, u, xi)
        b = _eval(node.right, x, u, xi)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if np.any(np.asarray(b) == 0):
            raise ExprDomainError("division by zero")
        return a / b
    if isinstance(node, Pow):
        base = np.asarray(_eval(node.base, x, u, xi), dtype=float)
        p = node.exponent
        if p != int(p) and np.any(base < 0):
            raise ExprDomainError(f"negative base raised to non-integer power {p}")
        if p < 0 and np.any(base == 0):
            raise ExprDomainError(f"zero raised to negative power {p}")
        return base ** p
    if isinstance(node, Call):
        args = [_eval(a, x, u, xi) for a in node.args]
        if node.fn == "abs":
            return np.abs(args[0])
        if node.fn == "max":
            return _reduce_args(np.maximum, args)
        if node.fn == "min":
            return _reduce_args(np.minimum, args)
        y = np.asarray(args[0], dtype=float)
        if node.fn == "log" and np.any(y <= 0):
            raise ExprDomainError("log of a nonpositive number")
        if node.fn == "sqrt" and np.any(y < 0):
            raise ExprDomainError("sqrt of a negative number")
        return _SMOOTH[node.fn][0](y)
    raise UnsupportedNodeError(f"cannot evaluate node {node!r}")


def _reduce_args(fn, args):
    out = args[0]
    for a in args[1:]:
        out = fn(out, a)
    return out


def _prepare(e: IntegrandExpr, x, u, xi):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if u.ndim == 0:
        u = u.reshape(1)
    if xi.ndim == 0:
        xi = xi.reshape(1, 1)
    elif xi.ndim == 1 and u.ndim == 1:
        xi = xi.reshape(u.shape[0], -1)
    if xi.ndim < 2 or x.shape[-1] < e.d or u.shape[-1] < e.m or xi.shape[-2] < e.m or xi.shape[-1] < e.d:
        raise ValueError(
            f"arguments of shapes x {x.shape}, u {u.shape}, xi {xi.shape} do not cover d = {e.d}, m = {e.m}"
        )
    return x, u, xi


def eval_expr(e: IntegrandExpr, x, u, xi):
    """
    Value of ``e`` at ``(x, u, xi)``.

    Arrays may carry leading batch dimensions: ``x`` has shape ``(..., d)``,
    ``u`` shape ``(..., m)`` and ``xi`` shape ``(..., m, d)``.
    """
    x, u, xi = _prepare(e, x, u, xi)
    out = _eval(e.root, x, u, xi)
    return np.broadcast_to(out, np.broadcast_shapes(x.shape[:-1], u.shape[:-1], xi.shape[:-2])) * 1.0


# -- codifferential propagation ------------------------------------------------------------------------


def codiff_at(e: IntegrandExpr, sel: VariableSelector, x, u, xi) -> Codifferential:
    """Normalized codifferential of ``e`` at one point, in the variables chosen by ``sel``."""
    x, u, xi = _prepare(e, x, u, xi)
    if x.ndim != 1 or u.ndim != 1 or xi.ndim != 2:
        raise ValueError("codiff_at works at a single point")
    d, m = x.shape[0], u.shape[0]
    if xi.shape != (m, d):
        raise ValueError(f"xi has shape {xi.shape}, expected {(m, d)}")
    layout = sel.layout(d, m)
    n = sel.dim(d, m)
    _, cd = _codiff(e.root, x, u, xi, layout, n, d)
    return cd


def _unit(n: int, k: int) -> np.ndarray:
    g = np.zeros(n)
    g[k] = 1.0
    return g


def _codiff(node: Node, x, u, xi, layout, n: int, d: int) -> tuple[float, Codifferential]:
    if isinstance(node, Const):
        return node.value, Codifferential.zero(n)
    if isinstance(node, Var):
        value = float(_lookup(node, x, u, xi))
        sl = layout.get(node.block)
        if sl is None:
            return value, Codifferential.zero(n)
        if node.block == "xi":
            k = sl.start + node.index[0] * d + node.index[1]
        else:
            k = sl.start + node.index[0]
        return value, Codifferential.smooth(_unit(n, k))
    if isinstance(node, Neg):
        v, cd = _codiff(node.arg, x, u, xi, layout, n, d)
        return -v, linear_combine([(-1.0, cd)])
    if isinstance(node, BinOp):
        a, ca = _codiff(node.left, x, u, xi, layout, n, d)
        b, cb = _codiff(node.right, x, u, xi, layout, n, d)
        if node.op == "+":
            return a + b, linear_combine([(1.0, ca), (1.0, cb)])
        if node.op == "-":
            return a - b, linear_combine([(1.0, ca), (-1.0, cb)])
        if node.op == "*":
            return a * b, compose_smooth([b, a], [ca, cb])
        if b == 0:
            raise ExprDomainError("division by zero")
        return a / b, compose_smooth([1.0 / b, -a / (b * b)], [ca, cb])
    if isinstance(node, Pow):
        y, cy = _codiff(node.base, x, u, xi, layout, n, d)
        p = node.exponent
        if p == 0:
            return 1.0, Codifferential.zero(n)
        if p != int(p) and y < 0:
            raise ExprDomainError(f"negative base raised to non-integer power {p}")
        if y == 0 and p < 1:
            raise UnsupportedNodeError(f"power {p} is not differentiable at 0")
        return y ** p, compose_smooth([p * y ** (p - 1)], [cy])
    if isinstance(node, Call):
        parts = [_codiff(a, x, u, xi, layout, n, d) for a in node.args]
        vals = [p[0] for p in parts]
        cds = [p[1] for p in parts]
        if node.fn == "abs":
            y, cy = vals[0], cds[0]
            return abs(y), max_rule([cy, linear_combine([(-1.0, cy)])], [y, -y])
        if node.fn == "max":
            return max(vals), max_rule(cds, vals)
        if node.fn == "min":
            return min(vals), min_rule(cds, vals)
        y = vals[0]
        if node.fn == "log" and y <= 0:
            raise ExprDomainError("log of a nonpositive number")
        if node.fn == "sqrt":
            if y < 0:
                raise ExprDomainError("sqrt of a negative number")
            if y == 0:
                raise UnsupportedNodeError("sqrt is not differentiable at 0")
        f, df = _SMOOTH[node.fn]
        return float(f(y)), compose_smooth([float(df(y))], [cds[0]])
    raise UnsupportedNodeError(f"unsupported node {node!r}")
