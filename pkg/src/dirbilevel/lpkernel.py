"""Dense simplex (Bland's rule), polyhedra and exhaustive vertex enumeration.

Polyhedra are stored in H-form ``{lam : A lam = b, C lam <= d}`` over free
variables.  ``solve_lp`` converts to standard form (``lam = lam+ - lam-`` plus
slacks), runs a two-phase tableau simplex and re-verifies the answer in the
original coordinates before returning it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import DimensionTooLarge, NumericalFailure

TOL_FEAS = 1e-9
TOL_OPT = 1e-9
TOL_VERT = 1e-8
TOL_PIVOT = 1e-11
R_MAX = 8


class Sense(str, Enum):
    MIN = "MIN"
    MAX = "MAX"


class LPStatus(str, Enum):
    OPTIMAL = "OPTIMAL"
    INFEASIBLE = "INFEASIBLE"
    UNBOUNDED = "UNBOUNDED"


def _as2d(M, r):
    if M is None:
        return np.zeros((0, r))
    M = np.asarray(M, dtype=float)
    if r == 0:
        # rows without columns still matter: they read 0 = b or 0 <= d
        return np.zeros((M.shape[0] if M.ndim == 2 else 0, 0))
    return M.reshape(-1, r) if M.size else np.zeros((0, r))


def _as1d(v, k):
    if v is None:
        return np.zeros(k)
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != k:
        raise ValueError(f"right-hand side has length {v.size}, expected {k}")
    return v


@dataclass(frozen=True)
class Polyhedron:
    """``{lam in R^r : A lam = b, C lam <= d}``."""

    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    d: np.ndarray
    r: int

    @classmethod
    def from_rows(cls, r, A=None, b=None, C=None, d=None):
        A = _as2d(A, r)
        C = _as2d(C, r)
        return cls(A, _as1d(b, A.shape[0]), C, _as1d(d, C.shape[0]), int(r))

    @classmethod
    def nonnegative_orthant(cls, r):
        return cls.from_rows(r, C=-np.eye(r), d=np.zeros(r))

    def intersect(self, A=None, b=None, C=None, d=None):
        A2, C2 = _as2d(A, self.r), _as2d(C, self.r)
        return Polyhedron(
            np.vstack([self.A, A2]), np.concatenate([self.b, _as1d(b, A2.shape[0])]),
            np.vstack([self.C, C2]), np.concatenate([self.d, _as1d(d, C2.shape[0])]), self.r,
        )

    def violation(self, lam):
        """Largest scaled row violation at ``lam`` (0 when feasible)."""
        lam = np.asarray(lam, dtype=float).reshape(self.r)
        worst = 0.0
        scale_x = 1.0 + float(np.max(np.abs(lam), initial=0.0))
        if self.A.shape[0]:
            res = np.abs(self.A @ lam - self.b)
            scale = scale_x * (1.0 + np.abs(self.A).sum(axis=1)) + np.abs(self.b)
            worst = max(worst, float(np.max(res / scale)))
        if self.C.shape[0]:
            res = self.C @ lam - self.d
            scale = scale_x * (1.0 + np.abs(self.C).sum(axis=1)) + np.abs(self.d)
            worst = max(worst, float(np.max(np.maximum(res, 0.0) / scale)))
        return worst

    def contains(self, lam, tol=TOL_FEAS):
        return self.violation(lam) <= tol


@dataclass(frozen=True)
class Polytope:
    """V-representation: vertex rows plus (possibly empty) ray rows."""

    vertices: np.ndarray
    rays: np.ndarray

    @classmethod
    def from_points(cls, points, r=None, rays=None):
        pts = np.asarray(points, dtype=float)
        if r is None:
            r = pts.shape[1] if pts.ndim == 2 else (pts.size if pts.size else 0)
        pts = pts.reshape(-1, r) if pts.size else np.zeros((0, r))
        rs = np.zeros((0, r)) if rays is None or np.size(rays) == 0 else np.asarray(rays, float).reshape(-1, r)
        return cls(_dedup(pts), _dedup(rs))

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def bounded(self):
        return self.rays.shape[0] == 0

    @property
    def empty(self):
        return self.vertices.shape[0] == 0

    def affine_image(self, M, c):
        """Image under ``lam -> M lam + c``; zero ray images are dropped."""
        M = np.asarray(M, dtype=float)
        c = np.asarray(c, dtype=float).reshape(-1)
        pts = self.vertices @ M.T + c if self.vertices.shape[0] else np.zeros((0, c.size))
        rays = self.rays @ M.T if self.rays.shape[0] else np.zeros((0, c.size))
        keep = [ray / np.max(np.abs(ray)) for ray in rays if np.max(np.abs(ray)) > TOL_VERT]
        return Polytope(_dedup(pts), _dedup(np.array(keep).reshape(-1, c.size)))


def _dedup(points, tol=TOL_VERT):
    out = []
    for p in points:
        if all(np.max(np.abs(p - o)) > tol for o in out):
            out.append(p)
    if not out:
        return np.zeros((0, points.shape[1] if points.ndim == 2 else 0))
    return np.array(out)


@dataclass(frozen=True)
class LPResult:
    """Solution of ``min/max c.lam`` over a polyhedron.

    On OPTIMAL the duals satisfy ``c = A^T dual_eq - C^T dual_ineq`` with
    ``dual_ineq >= 0`` for MIN (signs flipped for MAX).  On UNBOUNDED ``ray``
    is an improving recession direction.
    """

    status: LPStatus
    value: float
    x: Optional[np.ndarray]
    dual_eq: Optional[np.ndarray] = None
    dual_ineq: Optional[np.ndarray] = None
    ray: Optional[np.ndarray] = None
    iterations: int = 0


# ---------------------------------------------------------------------------
# tableau simplex on  min c.x, Ax = b, x >= 0


def _pivot(T, row, col):
    T[row] /= T[row, col]
    piv = T[row]
    for i in range(T.shape[0]):
        if i != row and T[i, col] != 0.0:
            T[i] -= T[i, col] * piv
    T[:, col] = 0.0
    T[row, col] = 1.0


def _bland_loop(T, basis, ncols, max_iter, tol_opt):
    """Run Bland pivots on tableau ``T`` (objective in the last row).

    Returns ("optimal", iters) or ("unbounded", col).
    """
    k = T.shape[0] - 1
    for it in range(max_iter):
        obj = T[-1, :ncols]
        cand = np.flatnonzero(obj < -tol_opt)
        if cand.size == 0:
            return "optimal", it
        col = int(cand[0])
        column = T[:k, col]
        rows = np.flatnonzero(column > TOL_PIVOT)
        if rows.size == 0:
            return "unbounded", col
        ratios = T[rows, -1] / column[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        row = int(min(ties, key=lambda i: basis[i]))
        _pivot(T, row, col)
        basis[row] = col
    raise NumericalFailure("simplex iteration guard exceeded")


def _standard_simplex(Aeq, beq, c, tol_feas=TOL_FEAS, tol_opt=TOL_OPT):
    k, N = Aeq.shape
    A = Aeq.copy()
    b = beq.copy()
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    max_iter = 50 * (k + N + 10)

    # phase 1
    T = np.zeros((k + 1, N + k + 1))
    T[:k, :N] = A
    T[:k, N:N + k] = np.eye(k)
    T[:k, -1] = b
    T[-1, N:N + k] = 1.0
    T[-1] -= T[:k].sum(axis=0)
    basis = list(range(N, N + k))
    status, it1 = _bland_loop(T, basis, N + k, max_iter, tol_opt)
    scale = 1.0 + float(np.abs(b).max(initial=0.0))
    if -T[-1, -1] > tol_feas * scale:
        return "infeasible", None, None, None, it1

    # drive artificials out, drop redundant rows
    keep_rows = []
    for i in range(k):
        if basis[i] >= N:
            cols = np.flatnonzero(np.abs(T[i, :N]) > 1e-9)
            if cols.size:
                _pivot(T, i, int(cols[0]))
                basis[i] = int(cols[0])
    for i in range(k):
        if basis[i] < N:
            keep_rows.append(i)
    T2 = np.zeros((len(keep_rows) + 1, N + 1))
    T2[:-1, :N] = T[keep_rows, :N]
    T2[:-1, -1] = T[keep_rows, -1]
    basis2 = [basis[i] for i in keep_rows]
    T2[-1, :N] = c
    for i, bv in enumerate(basis2):
        T2[-1] -= c[bv] * T2[i]
    status, info = _bland_loop(T2, basis2, N, max_iter, tol_opt)
    if status == "unbounded":
        col = info
        ray = np.zeros(N)
        ray[col] = 1.0
        for i, bv in enumerate(basis2):
            ray[bv] = -T2[i, col]
        return "unbounded", None, ray, None, it1
    # clean basic solution and duals from the original (row-flipped) data
    B = A[np.ix_(keep_rows, basis2)]
    x = np.zeros(N)
    y = np.zeros(k)
    if basis2:
        x[basis2] = np.maximum(np.linalg.solve(B, b[keep_rows]), 0.0)
        y[keep_rows] = np.linalg.solve(B.T, c[basis2])
    y = np.where(neg, -y, y)
    return "optimal", x, None, y, it1 + info


def solve_lp(poly, objective, sense=Sense.MIN, tol_feas=TOL_FEAS, tol_opt=TOL_OPT):
    """Optimise ``objective . lam`` over ``poly``; certificates are re-verified."""
    sense = Sense(sense)
    r = poly.r
    c = np.asarray(objective, dtype=float).reshape(r)
    if r == 0:
        if poly.contains(np.zeros(0), tol_feas):
            return LPResult(LPStatus.OPTIMAL, 0.0, np.zeros(0), np.zeros(poly.A.shape[0]),
                            np.zeros(poly.C.shape[0]))
        return LPResult(LPStatus.INFEASIBLE, np.nan, None)
    cmin = c if sense == Sense.MIN else -c
    k, l = poly.A.shape[0], poly.C.shape[0]
    Aeq = np.zeros((k + l, 2 * r + l))
    Aeq[:k, :r] = poly.A
    Aeq[:k, r:2 * r] = -poly.A
    Aeq[k:, :r] = poly.C
    Aeq[k:, r:2 * r] = -poly.C
    Aeq[k:, 2 * r:] = np.eye(l)
    beq = np.concatenate([poly.b, poly.d])
    cs = np.concatenate([cmin, -cmin, np.zeros(l)])
    status, xs, ray, y, iters = _standard_simplex(Aeq, beq, cs, tol_feas, tol_opt)
    if status == "infeasible":
        return LPResult(LPStatus.INFEASIBLE, np.nan, None, iterations=iters)
    if status == "unbounded":
        d = ray[:r] - ray[r:2 * r]
        d = d / max(1e-300, float(np.max(np.abs(d))))
        rec = Polyhedron(poly.A, np.zeros_like(poly.b), poly.C, np.zeros_like(poly.d), r)
        if not rec.contains(d, 1e-7) or float(cmin @ d) >= 0:
            raise NumericalFailure("simplex unbounded ray failed verification")
        value = -np.inf if sense == Sense.MIN else np.inf
        return LPResult(LPStatus.UNBOUNDED, value, None, ray=d, iterations=iters)
    lam = xs[:r] - xs[r:2 * r]
    if not poly.contains(lam, 10 * tol_feas):
        raise NumericalFailure(f"simplex returned an infeasible point (violation {poly.violation(lam):.3g})")
    y_eq, y_ineq = y[:k], -y[k:]
    # reduced costs in standard form: for lam+ / lam- they give the
    # stationarity residual; for slacks they give dual sign.
    stat = cmin - poly.A.T @ y_eq + poly.C.T @ y_ineq
    dscale = 1.0 + float(np.abs(cmin).max(initial=0.0))
    if np.max(np.abs(stat), initial=0.0) > 1e-7 * dscale or np.min(y_ineq, initial=0.0) < -1e-7 * dscale:
        raise NumericalFailure("simplex dual certificate failed verification")
    if sense == Sense.MAX:
        y_eq, y_ineq = -y_eq, -y_ineq
    return LPResult(LPStatus.OPTIMAL, float(c @ lam), lam, y_eq, y_ineq, iterations=iters)


def feasible_point(poly, tol_feas=TOL_FEAS):
    """Some point of ``poly`` (phase-1 simplex) or ``None``."""
    res = solve_lp(poly, np.zeros(poly.r), Sense.MIN, tol_feas)
    return res.x if res.status == LPStatus.OPTIMAL else None


# ---------------------------------------------------------------------------
# vertex enumeration


def _independent_rows(A, b, tol=1e-10):
    """Maximal independent subset of equality rows; ``(None, None)`` if inconsistent."""
    keep = []
    basis = np.zeros((0, A.shape[1]))
    for i in range(A.shape[0]):
        cand = np.vstack([basis, A[i]])
        if np.linalg.matrix_rank(cand, tol=tol * max(1.0, np.abs(cand).max())) > basis.shape[0]:
            keep.append(i)
            basis = cand
    Ak, bk = A[keep], b[keep]
    scale = 1.0 + float(np.abs(b).max(initial=0.0))
    for i in range(A.shape[0]):
        if i in keep:
            continue
        if keep:
            alpha, *_ = np.linalg.lstsq(Ak.T, A[i], rcond=None)
            implied = float(alpha @ bk)
        else:
            implied = 0.0
        if abs(implied - b[i]) > 1e-9 * scale:
            return None, None
    return Ak, bk


def enumerate_vertices(poly, r_max=R_MAX, tol_feas=TOL_FEAS, tol_vert=TOL_VERT):
    """All basic feasible solutions and extreme rays of ``poly``."""
    r = poly.r
    if r > r_max:
        raise DimensionTooLarge(f"dimension {r} exceeds r_max={r_max}")
    if r == 0:
        ok = poly.contains(np.zeros(0), tol_feas)
        return Polytope(np.zeros((1 if ok else 0, 0)), np.zeros((0, 0)))
    Ak, bk = _independent_rows(poly.A, poly.b)
    if Ak is None:
        return Polytope(np.zeros((0, r)), np.zeros((0, r)))
    rank_a = Ak.shape[0]
    C, d = poly.C, poly.d
    verts = []
    need = r - rank_a
    for S in itertools.combinations(range(C.shape[0]), need):
        M = np.vstack([Ak, C[list(S)]]) if S else Ak
        rhs = np.concatenate([bk, d[list(S)]]) if S else bk
        sv = np.linalg.svd(M, compute_uv=False)
        if sv.size < r or sv[-1] <= 1e-10 * max(1.0, sv[0]):
            continue
        lam = np.linalg.solve(M, rhs)
        if poly.contains(lam, tol_feas):
            verts.append(lam)
    rays = []
    if need >= 1:
        for S in itertools.combinations(range(C.shape[0]), need - 1):
            M = np.vstack([Ak, C[list(S)]]) if (S or rank_a) else np.zeros((0, r))
            if M.shape[0]:
                _, sv, vt = np.linalg.svd(M)
                sv_full = np.concatenate([sv, np.zeros(r - sv.size)])
                if np.sum(sv_full > 1e-10 * max(1.0, sv_full[0])) != r - 1:
                    continue
                rho = vt[-1]
            else:
                if r != 1:
                    continue
                rho = np.ones(1)
            for s in (1.0, -1.0):
                ray = s * rho / np.max(np.abs(rho))
                if C.shape[0] == 0 or np.max(C @ ray) <= tol_feas * (1 + np.abs(C).max()):
                    rays.append(ray)
    pts = _dedup(np.array(verts).reshape(-1, r), tol_vert)
    return Polytope(pts, _dedup(np.array(rays).reshape(-1, r), tol_vert))


# ---------------------------------------------------------------------------
# convex hull helpers


def _points_of(points):
    if isinstance(points, Polytope):
        return points.vertices
    return np.asarray(points, dtype=float)


def zero_in_convex_hull(points, tol_feas=TOL_FEAS):
    """``(True, mu)`` with convex weights reconstructing 0, or ``(False, a)``
    with ``a . v > 0`` for every point ``v``."""
    P = _points_of(points)
    J = P.shape[0]
    dim = P.shape[1] if P.ndim == 2 else 0
    if J == 0:
        return False, np.zeros(dim)
    poly = Polyhedron.from_rows(J, A=np.vstack([P.T, np.ones((1, J))]),
                                b=np.concatenate([np.zeros(dim), [1.0]]),
                                C=-np.eye(J), d=np.zeros(J))
    mu = feasible_point(poly, tol_feas)
    if mu is not None:
        return True, np.maximum(mu, 0.0)
    # separator: max s subject to s <= a.v_j, -1 <= a <= 1
    r = dim + 1
    C = np.hstack([-P, np.ones((J, 1))])
    box = np.hstack([np.vstack([np.eye(dim), -np.eye(dim)]), np.zeros((2 * dim, 1))])
    sep = Polyhedron.from_rows(r, C=np.vstack([C, box]),
                               d=np.concatenate([np.zeros(J), np.ones(2 * dim)]))
    obj = np.zeros(r)
    obj[-1] = 1.0
    res = solve_lp(sep, obj, Sense.MAX)
    return False, res.x[:dim]


def hull_vertices(points, tol_vert=TOL_VERT):
    """Extreme points among a finite point set (convex hull V-representation)."""
    P = _dedup(_points_of(points), tol_vert)
    if P.shape[0] <= 1:
        return P
    keep = []
    for i in range(P.shape[0]):
        others = np.delete(P, i, axis=0) - P[i]
        inside, _ = zero_in_convex_hull(others)
        if not inside:
            keep.append(P[i])
    return np.array(keep).reshape(-1, P.shape[1])
