"""Bilevel program container, first-order data and directional geometry."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import exprdsl
from .exprdsl import Expr

TOL_ACT = 1e-8
TOL_ROW = 1e-9


@dataclass(frozen=True, eq=False)
class BilevelProgram:
    """``min F(x,y)`` s.t. ``y in argmin{f(x,.) : g(x,.) <= 0}``, ``G(x,y) <= 0``."""

    n: int
    m: int
    F: Expr
    f: Expr
    G: tuple = ()
    g: tuple = ()
    y_box: Optional[tuple] = None
    source: str = ""
    _lower_fn: Callable = field(init=False, repr=False)
    _upper_fn: Callable = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("dimensions must be positive")
        object.__setattr__(self, "G", tuple(self.G))
        object.__setattr__(self, "g", tuple(self.g))
        if self.y_box is not None:
            lo, hi = (np.asarray(b, dtype=float).reshape(self.m) for b in self.y_box)
            object.__setattr__(self, "y_box", (lo, hi))
        object.__setattr__(self, "_lower_fn", exprdsl.compile_rows((self.f,) + self.g))
        object.__setattr__(self, "_upper_fn", exprdsl.compile_rows((self.F,) + self.G))

    @property
    def p(self):
        return len(self.g)

    @property
    def q(self):
        return len(self.G)

    def lower_rows(self, x, y):
        """Vectorised ``(f, [g_1..g_p])``; off-domain entries are ``nan``."""
        out = self._lower_fn(x, y)
        return out[0], out[1:]

    def upper_rows(self, x, y):
        """Vectorised ``(F, [G_1..G_q])``."""
        out = self._upper_fn(x, y)
        return out[0], out[1:]

    def with_box(self, lo, hi):
        """Copy of the program with a uniform lower-level search box."""
        box = (np.full(self.m, float(lo)), np.full(self.m, float(hi)))
        return BilevelProgram(self.n, self.m, self.F, self.f, self.G, self.g, box, self.source)

    def canonical_text(self):
        return exprdsl.unparse_program(self)


@dataclass(frozen=True)
class FirstOrderData:
    """Values, gradients and active sets at a point ``(x, y)``.

    Gradients are taken with respect to ``(x, y)`` stacked, so each has
    length ``n + m``; the Jacobians ``dg``/``dG`` have one row per constraint.
    """

    x: np.ndarray
    y: np.ndarray
    F: float
    f: float
    g: np.ndarray
    G: np.ndarray
    dF: np.ndarray
    df: np.ndarray
    dg: np.ndarray
    dG: np.ndarray
    I_g: tuple
    I_G: tuple
    tol_act: float = TOL_ACT
    kink: bool = False

    @property
    def n(self):
        return len(self.x)

    @property
    def m(self):
        return len(self.y)

    @property
    def p(self):
        return len(self.g)

    @property
    def q(self):
        return len(self.G)

    @property
    def z(self):
        return np.concatenate([self.x, self.y])

    @property
    def feasible(self):
        return bool(np.all(self.g <= self.tol_act) and np.all(self.G <= self.tol_act))


def first_order(prog, x, y, tol_act=TOL_ACT):
    """Assemble :class:`FirstOrderData` with exact (forward-mode) gradients."""
    x = np.asarray(x, dtype=float).reshape(prog.n)
    y = np.asarray(y, dtype=float).reshape(prog.m)
    k = prog.n + prog.m
    kink = False

    def dual(e):
        nonlocal kink
        d = exprdsl.eval_dual(e, x, y)
        kink = kink or d.kink
        return d

    dF, df = dual(prog.F), dual(prog.f)
    gd = [dual(e) for e in prog.g]
    Gd = [dual(e) for e in prog.G]
    g = np.array([d.value for d in gd], dtype=float)
    G = np.array([d.value for d in Gd], dtype=float)
    dg = np.array([d.derivs for d in gd], dtype=float).reshape(len(gd), k)
    dG = np.array([d.derivs for d in Gd], dtype=float).reshape(len(Gd), k)
    I_g = tuple(int(i) for i in np.flatnonzero(np.abs(g) <= tol_act))
    I_G = tuple(int(i) for i in np.flatnonzero(np.abs(G) <= tol_act))
    return FirstOrderData(x, y, dF.value, df.value, g, G, dF.derivs, df.derivs, dg, dG,
                          I_g, I_G, tol_act, kink)


# ---------------------------------------------------------------------------
# directional neighbourhoods


@dataclass(frozen=True)
class DirectionalContext:
    """Base point, direction and the geometric schedule ``t_k = t0 * beta**k``."""

    base: np.ndarray
    direction: np.ndarray
    eps: float = 1.0
    delta: float = 0.5
    t0: float = 0.1
    beta: float = 0.5
    K: int = 20

    def __post_init__(self):
        base = np.atleast_1d(np.asarray(self.base, dtype=float))
        d = np.atleast_1d(np.asarray(self.direction, dtype=float))
        if base.shape != d.shape:
            raise ValueError("base point and direction must have equal length")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.delta <= 2:
            raise ValueError("delta must lie in (0, 2]")
        if not (self.t0 > 0 and 0 < self.beta < 1 and self.K >= 1):
            raise ValueError("schedule needs t0 > 0, 0 < beta < 1, K >= 1")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "direction", d)

    @property
    def schedule(self):
        return self.t0 * self.beta ** np.arange(self.K)

    def with_direction(self, direction, base=None):
        return DirectionalContext(self.base if base is None else base, direction, self.eps,
                                  self.delta, self.t0, self.beta, self.K)

    def sample_width(self):
        """Relative perturbation width whose samples stay inside the neighbourhood."""
        return self.delta / 4


def perturbed_directions(d, count, width, rng):
    """``count`` directions near ``d``; the first one is ``d`` itself.

    For ``d != 0`` the others are ``d + |d| * width * xi`` with ``xi`` uniform
    in the unit ball.  For ``d == 0`` they are unit vectors (alternating signs
    in one dimension), since every direction is admissible there.
    """
    d = np.asarray(d, dtype=float)
    k = d.size
    norm = np.linalg.norm(d)
    out = []
    if norm == 0:
        if k == 1:
            return [np.array([1.0 if j % 2 == 0 else -1.0]) for j in range(count)]
        for _ in range(count):
            v = rng.standard_normal(k)
            out.append(v / np.linalg.norm(v))
        return out
    out.append(d.copy())
    for _ in range(count - 1):
        xi = rng.standard_normal(k)
        xi *= rng.uniform() ** (1.0 / k) / np.linalg.norm(xi)
        out.append(d + norm * width * xi)
    return out


def in_directional_neighborhood(z, ctx):
    """Membership of ``z`` in ``base + V_{eps,delta}(direction)``."""
    w = np.asarray(z, dtype=float) - ctx.base
    nw = np.linalg.norm(w)
    if not nw < ctx.eps:
        return False
    nd = np.linalg.norm(ctx.direction)
    if nd == 0 or nw == 0:
        return True
    defect = np.linalg.norm(nd * w - nw * ctx.direction)
    return bool(defect <= ctx.delta * nw * nd * (1 + 1e-12))


# ---------------------------------------------------------------------------
# cones of the value-function reformulation


@dataclass(frozen=True)
class ConeRow:
    label: str
    coeff: np.ndarray
    kind: str = "le"  # "le": coeff.w <= rhs ; "eq": |coeff.w - rhs| <= tol
    value_row: bool = False  # rhs is V'(x;u) instead of 0


@dataclass(frozen=True)
class ConeSpec:
    """Cone given by explicit rows plus the directional derivative oracle."""

    n: int
    m: int
    rows: tuple
    vprime: Callable
    tol_row: float = TOL_ROW

    def _rhs(self, row, w):
        return float(self.vprime(w[: self.n])) if row.value_row else 0.0

    def residuals(self, w):
        """Per-row residual; positive means violated (beyond tolerance for ``eq``)."""
        w = np.asarray(w, dtype=float)
        out = {}
        for row in self.rows:
            r = float(row.coeff @ w) - self._rhs(row, w)
            out[row.label] = abs(r) if row.kind == "eq" else r
        return out

    def contains(self, w, tol=None):
        tol = self.tol_row if tol is None else tol
        w = np.asarray(w, dtype=float)
        scale = max(1.0, float(np.linalg.norm(w)))
        for row in self.rows:
            r = float(row.coeff @ w) - self._rhs(row, w)
            r = abs(r) if row.kind == "eq" else r
            if r > tol * scale * max(1.0, float(np.linalg.norm(row.coeff))):
                return False
        return True

    __contains__ = contains


def linearization_cone_vp(fod, vprime, frow="le", tol_row=TOL_ROW):
    """Linearized feasible directions of the value-function reformulation."""
    if frow not in ("le", "eq"):
        raise ValueError("frow must be 'le' or 'eq'")
    rows = [ConeRow("f-V", fod.df.copy(), frow, True)]
    rows += [ConeRow(f"g{i + 1}", fod.dg[i].copy()) for i in fod.I_g]
    rows += [ConeRow(f"G{i + 1}", fod.dG[i].copy()) for i in fod.I_G]
    return ConeSpec(fod.n, fod.m, tuple(rows), vprime, tol_row)


def critical_cone_vp(fod, vprime, frow="le", tol_row=TOL_ROW):
    """Linearization cone intersected with ``{grad F . (u,v) <= 0}``."""
    lin = linearization_cone_vp(fod, vprime, frow, tol_row)
    rows = lin.rows + (ConeRow("F", fod.dF.copy()),)
    return ConeSpec(fod.n, fod.m, rows, vprime, tol_row)
