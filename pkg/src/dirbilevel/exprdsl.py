"""Problem-file parser, expression trees and forward-mode differentiation.

A problem file looks like::

    dims: n=1 m=1
    F = (x1-y1-1)^(5/3) + 4*(x1+y1+1)^(5/3)
    f = -(x1+y1)^2 + x1^3*(x1+y1-1)
    G = [ -1-x1 ; x1-1 ]
    g = [ -y1-x1-1 ; y1+x1-1 ]
    box: y in [-3,3]^1

Expressions are immutable trees of frozen dataclasses.  Rational powers
``b^(p/q)`` with odd ``q`` use the real signed root, so negative bases are
allowed; even ``q`` is only accepted on bases that are nonnegative by
construction (``abs``, ``sqrt``, ``exp``, even powers, nonnegative constants).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DimensionError, DomainError, ExponentError, ProblemSyntaxError

FUNCTIONS = ("sqrt", "sin", "cos", "exp", "log", "abs")


# ---------------------------------------------------------------------------
# expression nodes


class Expr:
    """Base class of expression nodes."""

    __slots__ = ()


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    kind: str  # "x" or "y"
    index: int  # 1-based


@dataclass(frozen=True)
class Neg(Expr):
    child: Expr


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr
    loc: tuple = field(default=None, compare=False)


@dataclass(frozen=True)
class Pow(Expr):
    """``base ** (p/q)`` with ``gcd(p, q) == 1`` and ``q >= 1``."""

    base: Expr
    p: int
    q: int = 1

    def __post_init__(self):
        if self.q < 1 or math.gcd(self.p, self.q) != 1:
            raise ExponentError(f"exponent {self.p}/{self.q} is not reduced")


@dataclass(frozen=True)
class Func(Expr):
    name: str
    child: Expr
    loc: tuple = field(default=None, compare=False)


@dataclass(frozen=True)
class DualValue:
    """Value and gradient with respect to ``(x1..xn, y1..ym)``."""

    value: float
    derivs: np.ndarray
    kink: bool = False


# ---------------------------------------------------------------------------
# tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),;\[\]=:])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text, line0=1, col0=1):
    toks = []
    pos = 0
    line, col = line0, col0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ProblemSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        s = m.group()
        if kind != "ws":
            toks.append(_Tok(kind, s, line, col))
        nl = s.count("\n")
        if nl:
            line += nl
            col = len(s) - s.rfind("\n")
        else:
            col += len(s)
        pos = m.end()
    toks.append(_Tok("end", "", line, col))
    return toks


class _Parser:
    """Recursive-descent parser for one expression or bracketed list."""

    def __init__(self, toks):
        self.toks = toks
        self.i = 0

    @property
    def tok(self):
        return self.toks[self.i]

    def _error(self, msg, tok=None):
        tok = tok or self.tok
        raise ProblemSyntaxError(msg, tok.line, tok.col)

    def accept(self, text):
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text):
        if not self.accept(text):
            found = self.tok.text or "end of input"
            self._error(f"expected {text!r}, found {found!r}")

    def at_end(self):
        return self.tok.kind == "end"

    def expr(self):
        node = self.term()
        while True:
            if self.accept("+"):
                node = Add(node, self.term())
            elif self.accept("-"):
                node = Sub(node, self.term())
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            tok = self.tok
            if self.accept("*"):
                node = Mul(node, self.unary())
            elif self.accept("/"):
                node = Div(node, self.unary(), loc=(tok.line, tok.col))
            else:
                return node

    def unary(self):
        if self.accept("-"):
            return Neg(self.unary())
        if self.accept("+"):
            return self.unary()
        return self.power()

    def power(self):
        base_tok = self.tok
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.i += 1
            expo = self.exponent()
            if expo.denominator % 2 == 0 and not _nonnegative_by_construction(base):
                raise ExponentError(
                    f"line {base_tok.line}, col {base_tok.col}: exponent {expo} has an "
                    "even denominator; wrap the base in abs()"
                )
            return Pow(base, expo.numerator, expo.denominator)
        return base

    def exponent(self):
        """Signed integer/decimal literal or parenthesised rational literal."""
        if self.accept("("):
            value = self._signed_literal()
            if self.accept("/"):
                den = self._signed_literal()
                if den == 0:
                    self._error("zero denominator in exponent")
                value = value / den
            self.expect(")")
        else:
            value = self._signed_literal()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.i += 1
            nxt = self.exponent()
            if nxt.denominator != 1:
                raise ExponentError("stacked exponent must be an integer to stay rational")
            if value == 0 and nxt < 0:
                raise ExponentError("zero raised to a negative power in exponent")
            value = value ** int(nxt)
        return Fraction(value)

    def _signed_literal(self):
        sign = 1
        while self.tok.kind == "op" and self.tok.text in "+-":
            if self.tok.text == "-":
                sign = -sign
            self.i += 1
        if self.tok.kind != "num":
            raise ExponentError(
                f"line {self.tok.line}, col {self.tok.col}: exponents must be numeric literals"
            )
        value = Fraction(self.tok.text)
        self.i += 1
        return sign * value

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Const(float(tok.text))
        if tok.kind == "name":
            self.i += 1
            name = tok.text
            if name in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Func(name, arg, loc=(tok.line, tok.col))
            m = re.fullmatch(r"([xy])([1-9]\d*)", name)
            if m:
                return Var(m.group(1), int(m.group(2)))
            self._error(f"unknown identifier {name!r}", tok)
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        found = tok.text or "end of input"
        self._error(f"unexpected {found!r}", tok)

    def expr_list(self):
        """``[ e ; e ; ... ]`` or a bare single expression."""
        if self.accept("["):
            rows = []
            if self.accept("]"):
                return rows
            while True:
                rows.append(self.expr())
                if self.accept("]"):
                    return rows
                self.expect(";")
        return [self.expr()]


def _nonnegative_by_construction(node):
    if isinstance(node, Func):
        return node.name in ("abs", "sqrt", "exp")
    if isinstance(node, Const):
        return node.value >= 0
    if isinstance(node, Pow):
        return node.p % 2 == 0 and node.q % 2 == 1
    return False


def parse_expr(text, line=1, col=1):
    """Parse a single expression string."""
    parser = _Parser(_tokenize(text, line, col))
    node = parser.expr()
    if not parser.at_end():
        parser._error(f"unexpected {parser.tok.text!r}")
    return node


# ---------------------------------------------------------------------------
# problem files


def _logical_lines(text):
    """Strip comments and join lines while brackets are open."""
    out = []
    buf, start, depth = [], None, 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip() and depth == 0:
            continue
        if start is None:
            start = lineno
        buf.append(line)
        depth += line.count("[") - line.count("]")
        if depth <= 0:
            out.append((start, "\n".join(buf)))
            buf, start, depth = [], None, 0
    if buf:
        raise ProblemSyntaxError("unclosed '['", start, 1)
    return out


def _const_value(node, where):
    if any(True for _ in _variables(node)):
        raise ProblemSyntaxError("box bounds must be constants", *where)
    return evaluate(node, [], [])


def parse_program(text):
    """Parse problem-file text into a :class:`~dirbilevel.model.BilevelProgram`."""
    from .model import BilevelProgram

    dims = None
    exprs = {}
    box = None
    for lineno, chunk in _logical_lines(text):
        stripped = chunk.strip()
        col = chunk.find(stripped[0]) + 1 if stripped else 1
        head = re.match(r"\s*(dims|box)\s*:", chunk)
        if head:
            key = head.group(1)
            body = chunk[head.end():]
            if key == "dims":
                if dims is not None:
                    raise ProblemSyntaxError("duplicate dims line", lineno, col)
                m = re.fullmatch(r"\s*n\s*=\s*(\d+)\s+m\s*=\s*(\d+)\s*", body)
                if not m:
                    raise ProblemSyntaxError("expected 'dims: n=<int> m=<int>'", lineno, col)
                dims = (int(m.group(1)), int(m.group(2)))
            else:
                if box is not None:
                    raise ProblemSyntaxError("duplicate box line", lineno, col)
                m = re.fullmatch(r"\s*y\s+in\s*\[(.*),(.*)\]\s*(?:\^\s*(\d+))?\s*", body, re.S)
                if not m:
                    raise ProblemSyntaxError("expected 'box: y in [lo,hi]^m'", lineno, col)
                lo = _const_value(parse_expr(m.group(1), lineno), (lineno, col))
                hi = _const_value(parse_expr(m.group(2), lineno), (lineno, col))
                if not lo < hi:
                    raise ProblemSyntaxError("box needs lo < hi", lineno, col)
                box = (lo, hi, None if m.group(3) is None else int(m.group(3)))
            continue
        m = re.match(r"\s*([FfGg])\s*=", chunk)
        if not m:
            raise ProblemSyntaxError(f"cannot parse line {stripped!r}", lineno, col)
        key = m.group(1)
        if key in exprs:
            raise ProblemSyntaxError(f"duplicate definition of {key}", lineno, col)
        rest = chunk[m.end():]
        toks = _tokenize(rest, lineno, m.end() + 1)
        parser = _Parser(toks)
        if key in "Ff":
            value = parser.expr()
        else:
            value = parser.expr_list()
        if not parser.at_end():
            parser._error(f"unexpected {parser.tok.text!r}")
        exprs[key] = value

    if dims is None:
        raise ProblemSyntaxError("missing 'dims:' line", 1, 1)
    if "F" not in exprs:
        raise ProblemSyntaxError("missing upper-level objective F", 1, 1)
    n, m = dims
    F = exprs["F"]
    f = exprs.get("f", Const(0.0))
    G = tuple(exprs.get("G", ()))
    g = tuple(exprs.get("g", ()))
    for label, node in [("F", F), ("f", f)] + [(f"G{i+1}", e) for i, e in enumerate(G)] + [
        (f"g{i+1}", e) for i, e in enumerate(g)
    ]:
        for kind, idx in _variables(node):
            limit = n if kind == "x" else m
            if idx > limit:
                raise DimensionError(f"{label} references {kind}{idx} but {'n' if kind == 'x' else 'm'}={limit}")
    y_box = None
    if box is not None:
        lo, hi, power = box
        if power is not None and power != m:
            raise DimensionError(f"box declares ^{power} but m={m}")
        y_box = (np.full(m, lo), np.full(m, hi))
    return BilevelProgram(n=n, m=m, F=F, f=f, G=G, g=g, y_box=y_box, source=text)


# ---------------------------------------------------------------------------
# structural helpers


def _children(node):
    if isinstance(node, (Add, Sub, Mul, Div)):
        return (node.left, node.right)
    if isinstance(node, (Neg, Func)):
        return (node.child,)
    if isinstance(node, Pow):
        return (node.base,)
    return ()


def _variables(node):
    if isinstance(node, Var):
        yield (node.kind, node.index)
    for c in _children(node):
        yield from _variables(c)


def variables(node):
    """Set of ``(kind, index)`` pairs referenced by ``node``."""
    return set(_variables(node))


def is_constant(node):
    return not variables(node)


def is_affine(node):
    """Structural affinity test (conservative: may say False for affine trees)."""
    if isinstance(node, (Const, Var)):
        return True
    if is_constant(node):
        return True
    if isinstance(node, (Add, Sub)):
        return is_affine(node.left) and is_affine(node.right)
    if isinstance(node, Neg):
        return is_affine(node.child)
    if isinstance(node, Mul):
        return (is_constant(node.left) and is_affine(node.right)) or (
            is_constant(node.right) and is_affine(node.left)
        )
    if isinstance(node, Div):
        return is_constant(node.right) and is_affine(node.left)
    if isinstance(node, Pow):
        return node.p == 1 and node.q == 1 and is_affine(node.base)
    return False


# ---------------------------------------------------------------------------
# unparse

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}
_ATOM = 5


def _prec(node):
    return _PREC.get(type(node), _ATOM)


def _fmt_const(v):
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def unparse(node):
    """Render ``node`` as grammar text; ``parse_expr(unparse(e)) == e``."""
    if isinstance(node, Const):
        if math.copysign(1.0, node.value) < 0:
            raise ValueError("negative constants are represented with Neg")
        return _fmt_const(node.value)
    if isinstance(node, Var):
        return f"{node.kind}{node.index}"
    if isinstance(node, Func):
        return f"{node.name}({unparse(node.child)})"
    if isinstance(node, Neg):
        return "-" + _wrap(node.child, _prec(node.child) < 3)
    if isinstance(node, Pow):
        if node.q != 1:
            expo = f"({node.p}/{node.q})"
        else:
            expo = str(node.p) if node.p >= 0 else f"({node.p})"
        return _wrap(node.base, _prec(node.base) < _ATOM) + "^" + expo
    op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(node)]
    prec = _PREC[type(node)]
    left = _wrap(node.left, _prec(node.left) < prec)
    right = _wrap(node.right, _prec(node.right) <= prec)
    return f"{left} {op} {right}"


def _wrap(node, paren):
    text = unparse(node)
    return f"({text})" if paren else text


def unparse_program(prog):
    """Canonical text of a program (used for fingerprints)."""
    lines = [f"dims: n={prog.n} m={prog.m}", f"F = {unparse(prog.F)}", f"f = {unparse(prog.f)}"]
    if prog.G:
        lines.append("G = [ " + " ; ".join(unparse(e) for e in prog.G) + " ]")
    lines.append("g = [ " + " ; ".join(unparse(e) for e in prog.g) + " ]")
    if prog.y_box is not None:
        lo, hi = prog.y_box
        if np.all(lo == lo[0]) and np.all(hi == hi[0]):
            lines.append(f"box: y in [{repr(float(lo[0]))},{repr(float(hi[0]))}]^{prog.m}")
        else:
            raise ValueError("non-uniform boxes have no file representation")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# strict scalar evaluation


def _signed_pow(b, p, q):
    """Real ``b**(p/q)``: signed root for odd ``q``."""
    if q == 1:
        if b == 0.0 and p < 0:
            raise ZeroDivisionError
        return b**p
    expo = p / q
    if b >= 0:
        if b == 0.0 and p < 0:
            raise ZeroDivisionError
        return b**expo
    if q % 2 == 0:
        raise ValueError
    mag = (-b) ** expo
    return mag if p % 2 == 0 else -mag


def evaluate(node, x, y):
    """Evaluate ``node`` at ``(x, y)``; raises :class:`DomainError` off-domain."""
    if isinstance(node, Const):
        return float(node.value)
    if isinstance(node, Var):
        return float((x if node.kind == "x" else y)[node.index - 1])
    if isinstance(node, Neg):
        return -evaluate(node.child, x, y)
    if isinstance(node, Add):
        return evaluate(node.left, x, y) + evaluate(node.right, x, y)
    if isinstance(node, Sub):
        return evaluate(node.left, x, y) - evaluate(node.right, x, y)
    if isinstance(node, Mul):
        return evaluate(node.left, x, y) * evaluate(node.right, x, y)
    if isinstance(node, Div):
        den = evaluate(node.right, x, y)
        if den == 0.0:
            raise DomainError("division by zero", node.loc)
        return evaluate(node.left, x, y) / den
    if isinstance(node, Pow):
        b = evaluate(node.base, x, y)
        try:
            return _signed_pow(b, node.p, node.q)
        except ZeroDivisionError:
            raise DomainError("zero raised to a negative power") from None
        except ValueError:
            raise DomainError("even root of a negative number") from None
        except OverflowError:
            raise DomainError("power overflow") from None
    if isinstance(node, Func):
        a = evaluate(node.child, x, y)
        name = node.name
        if name == "sqrt":
            if a < 0:
                raise DomainError("sqrt of a negative number", node.loc)
            return math.sqrt(a)
        if name == "log":
            if a <= 0:
                raise DomainError("log of a nonpositive number", node.loc)
            return math.log(a)
        if name == "exp":
            try:
                return math.exp(a)
            except OverflowError:
                raise DomainError("exp overflow", node.loc) from None
        if name == "sin":
            return math.sin(a)
        if name == "cos":
            return math.cos(a)
        if name == "abs":
            return abs(a)
    raise TypeError(f"not an expression node: {node!r}")


# forward mode: each node maps to (value, gradient, kink)


def eval_dual(node, x, y):
    """Value and exact gradient with respect to ``(x, y)``.

    At ``abs(0)`` the derivative 0 is used and ``kink`` is set.
    """
    n, m = len(x), len(y)
    val, grad, kink = _dual(node, [float(v) for v in x], [float(v) for v in y], n, m)
    return DualValue(val, grad, kink)


def _dual(node, x, y, n, m):
    if isinstance(node, Const):
        return float(node.value), np.zeros(n + m), False
    if isinstance(node, Var):
        g = np.zeros(n + m)
        if node.kind == "x":
            g[node.index - 1] = 1.0
            return x[node.index - 1], g, False
        g[n + node.index - 1] = 1.0
        return y[node.index - 1], g, False
    if isinstance(node, Neg):
        v, g, k = _dual(node.child, x, y, n, m)
        return -v, -g, k
    if isinstance(node, (Add, Sub, Mul, Div)):
        a, ga, ka = _dual(node.left, x, y, n, m)
        b, gb, kb = _dual(node.right, x, y, n, m)
        k = ka or kb
        if isinstance(node, Add):
            return a + b, ga + gb, k
        if isinstance(node, Sub):
            return a - b, ga - gb, k
        if isinstance(node, Mul):
            return a * b, ga * b + a * gb, k
        if b == 0.0:
            raise DomainError("division by zero", node.loc)
        return a / b, (ga * b - a * gb) / (b * b), k
    if isinstance(node, Pow):
        b, gb, k = _dual(node.base, x, y, n, m)
        p, q = node.p, node.q
        try:
            val = _signed_pow(b, p, q)
            if p == 0:
                return val, np.zeros(n + m), k
            if b == 0.0:
                ratio = Fraction(p, q)
                if ratio < 1:
                    raise DomainError("power not differentiable at zero base")
                dfac = 1.0 if ratio == 1 else 0.0
            else:
                # d/db b^(p/q) = (p/q) b^((p-q)/q) with the same signed-root rule
                dfac = (p / q) * _signed_pow(b, p - q, q)
        except ZeroDivisionError:
            raise DomainError("zero raised to a negative power") from None
        except ValueError:
            raise DomainError("even root of a negative number") from None
        except OverflowError:
            raise DomainError("power overflow") from None
        return val, dfac * gb, k
    if isinstance(node, Func):
        a, ga, k = _dual(node.child, x, y, n, m)
        name = node.name
        if name == "sqrt":
            if a < 0:
                raise DomainError("sqrt of a negative number", node.loc)
            if a == 0:
                raise DomainError("sqrt not differentiable at zero", node.loc)
            r = math.sqrt(a)
            return r, ga / (2 * r), k
        if name == "log":
            if a <= 0:
                raise DomainError("log of a nonpositive number", node.loc)
            return math.log(a), ga / a, k
        if name == "exp":
            try:
                e = math.exp(a)
            except OverflowError:
                raise DomainError("exp overflow", node.loc) from None
            return e, e * ga, k
        if name == "sin":
            return math.sin(a), math.cos(a) * ga, k
        if name == "cos":
            return math.cos(a), -math.sin(a) * ga, k
        if name == "abs":
            if a == 0.0:
                return 0.0, np.zeros(n + m), True
            return abs(a), math.copysign(1.0, a) * ga, k
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# vectorised evaluation used by the solvers


def _np_spow(b, p, q):
    b = np.asarray(b, dtype=float)
    if q == 1:
        return np.power(b, float(p))
    mag = np.power(np.abs(b), p / q)
    if q % 2 == 0:
        return np.where(b >= 0, mag, np.nan)
    return mag if p % 2 == 0 else np.sign(b) * mag


def _codegen(node):
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"{node.kind}[{node.index - 1}]"
    if isinstance(node, Neg):
        return f"(-{_codegen(node.child)})"
    if isinstance(node, (Add, Sub, Mul, Div)):
        op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(node)]
        if isinstance(node, Div):
            return f"_div({_codegen(node.left)}, {_codegen(node.right)})"
        return f"({_codegen(node.left)} {op} {_codegen(node.right)})"
    if isinstance(node, Pow):
        return f"_spow({_codegen(node.base)}, {node.p}, {node.q})"
    if isinstance(node, Func):
        fn = {"sqrt": "_np.sqrt", "sin": "_np.sin", "cos": "_np.cos", "exp": "_np.exp",
              "log": "_log", "abs": "_np.abs"}[node.name]
        return f"{fn}({_codegen(node.child)})"
    raise TypeError(f"not an expression node: {node!r}")


def _div(a, b):
    return np.divide(a, b)


def _log(a):
    a = np.asarray(a, dtype=float)
    return np.log(np.where(a > 0, a, np.nan))


def compile_rows(exprs):
    """Compile expressions into ``fn(x, y) -> list`` using numpy.

    ``x`` and ``y`` are sequences whose entries may be floats or broadcastable
    arrays.  Off-domain entries evaluate to ``nan`` (no exception) so the
    solvers can reject them.
    """
    body = ", ".join(_codegen(e) for e in exprs)
    src = f"def _fn(x, y):\n    return [{body}]\n"
    scope = {"_np": np, "_spow": _np_spow, "_div": _div, "_log": _log}
    exec(compile(src, "<dirbilevel-expr>", "exec"), scope)  # noqa: S102 - generated from a parsed tree
    fn = scope["_fn"]

    def wrapped(x, y):
        with np.errstate(all="ignore"):
            return fn(x, y)

    return wrapped
