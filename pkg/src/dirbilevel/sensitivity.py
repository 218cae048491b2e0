"""Directional derivative of the value function and the sets Sigma, W, Theta.

The inner problems are small LPs over the lower-level multiplier set (dual
side) or over the linearized directions (primal side).  Everything is built
from :class:`~dirbilevel.model.FirstOrderData` at the solutions supplied by a
:class:`~dirbilevel.lower.DirectionalSolutionSet`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import model
from .errors import EmptyMultiplierSet, InnerLPUnbounded, NumericalFailure
from .lower import multiplier_polyhedron
from .lpkernel import (LPStatus, Polyhedron, Polytope, Sense, enumerate_vertices,
                       hull_vertices, solve_lp)

V_GUARD = 1e3
TOL_DUALITY = 1e-8


class Method(str, Enum):
    LP_FORMULA = "LP_FORMULA"
    FINITE_DIFF = "FINITE_DIFF"


@dataclass(frozen=True)
class InnerLP:
    """Primal and dual inner problems at one directional solution ``y``."""

    y: np.ndarray
    dual_value: float
    lam: np.ndarray
    primal_value: float
    v: np.ndarray
    guard_active: bool

    @property
    def gap(self):
        return abs(self.primal_value - self.dual_value)


@dataclass(frozen=True)
class DirectionalDerivative:
    """``V'(xbar;u)`` with the pieces that attain it.

    For ``LP_FORMULA`` the value is ``min(p.dual_value for p in pieces)``;
    ``residual`` is the largest primal/dual gap.  For ``FINITE_DIFF`` the
    pieces are empty and ``residual`` is the extrapolation error estimate.
    """

    value: float
    method: Method
    y: Optional[np.ndarray] = None
    lam: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    pieces: tuple = ()
    residual: float = 0.0
    guard_active: bool = False
    quotients: Optional[np.ndarray] = field(default=None, repr=False)


def _dual_lp(fod, u):
    lam_poly = multiplier_polyhedron(fod)
    n = fod.n
    gx = fod.dg[:, :n]
    const = float(fod.df[:n] @ u)
    res = solve_lp(lam_poly, gx @ u, Sense.MAX)
    if res.status == LPStatus.INFEASIBLE:
        raise EmptyMultiplierSet(f"Lambda(x,y) is empty at y={fod.y.tolist()}")
    if res.status == LPStatus.UNBOUNDED:
        raise InnerLPUnbounded(f"max over Lambda(x,y) is unbounded at y={fod.y.tolist()}")
    return const + res.value, res.x


def scaled_guard(u, guard=V_GUARD):
    """Box guard on ``v`` relative to ``u``, so the guarded LPs stay positively homogeneous."""
    return guard * max(1.0, float(np.max(np.abs(u), initial=0.0)))


def linearized_directions(fod, u, guard=V_GUARD):
    """``L(x,y;u) = {v : grad g_i (u,v) <= 0, i active}`` cut by ``|v|_inf <= guard * max(1, |u|_inf)``."""
    n, m = fod.n, fod.m
    guard = scaled_guard(u, guard)
    rows = [fod.dg[i, n:] for i in fod.I_g]
    rhs = [-float(fod.dg[i, :n] @ u) for i in fod.I_g]
    C = np.vstack([np.array(rows).reshape(-1, m), np.eye(m), -np.eye(m)])
    d = np.concatenate([rhs, np.full(2 * m, guard)])
    return Polyhedron.from_rows(m, C=C, d=d)


def _on_guard(v, guard):
    return bool(np.max(np.abs(v), initial=0.0) >= guard * (1 - 1e-9))


def _primal_lp(fod, u, guard=V_GUARD):
    n = fod.n
    poly = linearized_directions(fod, u, guard)
    res = solve_lp(poly, fod.df[n:], Sense.MIN)
    if res.status != LPStatus.OPTIMAL:
        raise NumericalFailure(f"linearized direction set is empty at y={fod.y.tolist()}")
    return float(fod.df[:n] @ u) + res.value, res.x, _on_guard(res.x, scaled_guard(u, guard))


def inner_lp(prog, xbar, y, u, tol_act=model.TOL_ACT, guard=V_GUARD):
    fod = model.first_order(prog, xbar, y, tol_act)
    u = np.asarray(u, dtype=float).reshape(prog.n)
    dval, lam = _dual_lp(fod, u)
    pval, v, hit = _primal_lp(fod, u, guard)
    return InnerLP(np.asarray(y, dtype=float), dval, lam, pval, v, hit)


def dderiv_lp(prog, xbar, u, dirsols, tol_act=model.TOL_ACT, guard=V_GUARD):
    """``min_y max_{lam in Lambda} (grad_x f + grad_x g^T lam) . u`` over ``dirsols``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    reps = dirsols.points
    if reps.shape[0] == 0:
        raise NumericalFailure("directional solution set is empty")
    pieces = tuple(inner_lp(prog, xbar, y, u, tol_act, guard) for y in reps)
    best = min(pieces, key=lambda p: p.dual_value)
    gap = max(p.gap for p in pieces)
    return DirectionalDerivative(best.dual_value, Method.LP_FORMULA, best.y, best.lam, best.v,
                                 pieces, gap, any(p.guard_active for p in pieces))


def _richardson(quotients, beta, depth):
    """Tableau for ``D(t) = D0 + c1 t + c2 t^2 + ...`` sampled at ``t_k = t0 beta^k``."""
    table = [np.asarray(quotients, dtype=float)]
    for j in range(1, depth + 1):
        prev = table[-1]
        if prev.size < 2:
            break
        factor = beta ** j
        table.append((prev[1:] - factor * prev[:-1]) / (1 - factor))
    return table


def dderiv_fd(lower, xbar, u, t0=0.1, beta=0.5, K=20, depth=3):
    """Richardson-extrapolated limit of ``(V(xbar + t u) - V(xbar)) / t``.

    The estimate with the smallest difference to its neighbour in the same
    tableau column is returned; that difference is the residual.
    """
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    ts = t0 * beta ** np.arange(K)
    if np.linalg.norm(u) == 0:
        return DirectionalDerivative(0.0, Method.FINITE_DIFF, quotients=np.zeros(K))
    v0 = lower.value(xbar)
    q = np.array([(lower.value(xbar + t * u) - v0) / t for t in ts])
    best, err = q[-1], np.inf
    for col in _richardson(q, beta, depth):
        if col.size < 2:
            continue
        diffs = np.abs(np.diff(col))
        k = int(np.argmin(diffs))
        if diffs[k] < err:
            best, err = float(col[k + 1]), float(diffs[k])
    return DirectionalDerivative(float(best), Method.FINITE_DIFF, residual=err, quotients=q)


# ---------------------------------------------------------------------------
# Sigma, W, Theta


@dataclass(frozen=True)
class SigmaSet:
    """Optimal-face vertices of the guarded primal inner LP at ``y``."""

    y: np.ndarray
    u: np.ndarray
    directions: np.ndarray
    guard_active: bool
    value: float


def sigma_set(prog, xbar, y, u, vprime, tol_act=model.TOL_ACT, guard=V_GUARD, tol_val=1e-8):
    """Vertices of ``{v in L(x,y;u) : grad f(x,y)(u,v) = V'(x;u)}``.

    Empty when the inner value at ``y`` exceeds ``vprime`` (``y`` does not
    attain the outer minimum).
    """
    fod = model.first_order(prog, xbar, y, tol_act)
    u = np.asarray(u, dtype=float).reshape(prog.n)
    n, m = prog.n, prog.m
    pval, _, _ = _primal_lp(fod, u, guard)
    empty = SigmaSet(fod.y, u, np.zeros((0, m)), False, pval)
    if pval > vprime + tol_val * max(1.0, abs(vprime)):
        return empty
    poly = linearized_directions(fod, u, guard)
    # pin the face at the LP's own optimum so that the equality row is consistent
    face = poly.intersect(A=fod.df[n:].reshape(1, m), b=[pval - float(fod.df[:n] @ u)])
    pts = enumerate_vertices(face).vertices
    if pts.shape[0] == 0:
        return empty
    hit = any(_on_guard(v, scaled_guard(u, guard)) for v in pts)
    return SigmaSet(fod.y, u, pts, hit, pval)


def nonorthogonal_rows(jac, u, v, tol_row=model.TOL_ROW):
    """Rows ``i`` of ``jac`` with ``jac_i . (u,v)`` not zero (scaled tolerance)."""
    w = np.concatenate([np.atleast_1d(np.asarray(u, float)), np.atleast_1d(np.asarray(v, float))])
    nw = float(np.linalg.norm(w))
    out = []
    for i, row in enumerate(np.asarray(jac, float).reshape(-1, w.size)):
        if abs(float(row @ w)) > tol_row * max(1.0, float(np.linalg.norm(row)) * nw):
            out.append(i)
    return tuple(out)


@dataclass(frozen=True)
class WSet:
    """``W(x,y,u,v)`` with the multiplier vertices that generate it."""

    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    polytope: Polytope
    multipliers: Polytope

    @property
    def bounded(self):
        return self.polytope.bounded


def w_set(prog, xbar, y, u, v, tol_act=model.TOL_ACT, tol_row=model.TOL_ROW):
    """Image of ``Lambda(x,y) cap {grad g (u,v)}^perp`` under ``lam -> grad_x f + grad_x g^T lam``."""
    fod = model.first_order(prog, xbar, y, tol_act)
    return _w_from_fod(fod, u, v, tol_row)


def _w_from_fod(fod, u, v, tol_row):
    n = fod.n
    zero = nonorthogonal_rows(fod.dg, u, v, tol_row)
    lam_poly = multiplier_polyhedron(fod, zero)
    lam_verts = enumerate_vertices(lam_poly)
    image = lam_verts.affine_image(fod.dg[:, :n].T.reshape(n, fod.p), fod.df[:n])
    return WSet(fod.y, np.asarray(u, float).reshape(n), np.asarray(v, float).reshape(fod.m),
                image, lam_verts)


def hausdorff(P, Q):
    """Hausdorff distance (infinity norm) between two finite point sets."""
    P, Q = np.asarray(P, float), np.asarray(Q, float)
    if P.shape[0] == 0 or Q.shape[0] == 0:
        return 0.0 if P.shape[0] == Q.shape[0] else np.inf
    D = np.max(np.abs(P[:, None, :] - Q[None, :, :]), axis=2)
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


def w_invariance(prog, xbar, y, u, directions, tol_act=model.TOL_ACT, tol_row=model.TOL_ROW):
    """Largest Hausdorff distance between ``W(.,v)`` sets over the given ``v``."""
    fod = model.first_order(prog, xbar, y, tol_act)
    sets = [_w_from_fod(fod, u, v, tol_row).polytope.vertices for v in directions]
    worst = 0.0
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            worst = max(worst, hausdorff(sets[i], sets[j]))
    return worst


@dataclass(frozen=True)
class ThetaComponent:
    y: np.ndarray
    sigma: SigmaSet
    w: WSet
    invariance: float


@dataclass(frozen=True)
class SubdiffEstimate:
    """Union of W components and its convex hull (the hull surrogate of the
    Clarke directional subdifferential of ``V``)."""

    components: tuple
    hull: Polytope
    u: np.ndarray
    vprime: float
    flags: dict = field(default_factory=dict)

    @property
    def bounded(self):
        return self.hull.bounded

    @property
    def invariance(self):
        return max((c.invariance for c in self.components), default=0.0)


def theta_set(prog, xbar, u, dirsols, vprime=None, tol_act=model.TOL_ACT, tol_row=model.TOL_ROW,
              guard=V_GUARD, flags=None):
    """Theta estimate: W at every attaining directional solution, then hulled.

    ``vprime`` defaults to :func:`dderiv_lp` on the same solutions.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if vprime is None:
        vprime = dderiv_lp(prog, xbar, u, dirsols, tol_act, guard).value
    comps = []
    for y in dirsols.points:
        sig = sigma_set(prog, xbar, y, u, vprime, tol_act, guard)
        if sig.directions.shape[0] == 0:
            continue
        w = w_set(prog, xbar, y, u, sig.directions[0], tol_act, tol_row)
        inv = w_invariance(prog, xbar, y, u, sig.directions, tol_act, tol_row)
        comps.append(ThetaComponent(np.asarray(y, float), sig, w, inv))
    n = prog.n
    pts = [c.w.polytope.vertices for c in comps]
    rays = [c.w.polytope.rays for c in comps]
    allpts = np.vstack(pts) if pts else np.zeros((0, n))
    allrays = np.vstack(rays) if rays else np.zeros((0, n))
    hull = Polytope.from_points(hull_vertices(allpts) if allpts.shape[0] else allpts, n, allrays)
    return SubdiffEstimate(tuple(comps), hull, u, float(vprime), dict(flags or {}))
