"""Directional KKT certificates of the value-function reformulation.

Hull form::

    0 = grad F + lambda_V grad f - (sum_j mu_j w_j, 0) + grad g^T lambda_g + grad G^T lambda_G
    lambda_V = sum_j mu_j,   mu >= 0

with ``w_j`` the vertices of the Theta hull.  The explicit form replaces
``w`` by ``grad_x f + grad_x g^T lam`` for a lower-level multiplier ``lam``
in ``Lambda(xbar,ybar)`` orthogonal to ``grad g (u,v)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import model
from .errors import InconclusiveUnbounded
from .lower import multiplier_polyhedron
from .lpkernel import LPStatus, Polyhedron, Sense, TOL_FEAS, feasible_point, solve_lp, zero_in_convex_hull
from .sensitivity import nonorthogonal_rows

MIN_LAMBDA_V = 1e-6


@dataclass(frozen=True)
class KKTCertificate:
    lambda_v: float
    lambda_g: np.ndarray
    lambda_G: np.ndarray
    u: np.ndarray
    v: np.ndarray
    mu: Optional[np.ndarray] = None
    theta_vertices: Optional[np.ndarray] = None
    lam: Optional[np.ndarray] = None
    residuals: dict = field(default_factory=dict)

    @property
    def form(self):
        if self.mu is not None and self.lam is not None:
            return "hull+explicit"
        return "hull" if self.mu is not None else "explicit"

    def as_dict(self):
        out = {"lambda_v": self.lambda_v, "lambda_g": self.lambda_g.tolist(),
               "lambda_G": self.lambda_G.tolist(), "direction": {"u": self.u.tolist(), "v": self.v.tolist()},
               "form": self.form, "residuals": dict(self.residuals)}
        if self.mu is not None:
            out["mu"] = self.mu.tolist()
            out["theta_vertices"] = self.theta_vertices.tolist()
        if self.lam is not None:
            out["lam"] = self.lam.tolist()
        return out


@dataclass(frozen=True)
class VerificationReport:
    rows: dict
    tol: float

    @property
    def passed(self):
        return all(r <= self.tol for r in self.rows.values())

    @property
    def failed_rows(self):
        return sorted(k for k, r in self.rows.items() if r > self.tol)


def _dirvec(fod, u, v):
    return (np.atleast_1d(np.asarray(u, float)).reshape(fod.n),
            np.atleast_1d(np.asarray(v, float)).reshape(fod.m))


def _theta_vertices(theta_hull, n):
    if theta_hull is None:
        return np.zeros((0, n))
    if not theta_hull.bounded:
        raise InconclusiveUnbounded("the Theta hull has rays")
    return theta_hull.vertices.reshape(-1, n)


def find_certificate(fod, u, v, theta_hull, tol_row=model.TOL_ROW, force_lambda_v=False,
                     min_lambda_v=MIN_LAMBDA_V):
    """Vertex solution of the hull-form KKT LP, or ``None`` when infeasible.

    Inactive and non-orthogonal components of ``lambda_g``/``lambda_G`` are
    fixed to zero; the sum of all multipliers is minimized so the LP is
    bounded.  ``force_lambda_v`` adds ``lambda_V >= min_lambda_v``.
    """
    n, m = fod.n, fod.m
    u, v = _dirvec(fod, u, v)
    W = _theta_vertices(theta_hull, n)
    J = W.shape[0]
    zero_g = nonorthogonal_rows(fod.dg, u, v, tol_row)
    zero_G = nonorthogonal_rows(fod.dG, u, v, tol_row)
    free_g = [i for i in fod.I_g if i not in zero_g]
    free_G = [i for i in fod.I_G if i not in zero_G]
    cols = [fod.df - np.concatenate([w, np.zeros(m)]) for w in W]
    cols += [fod.dg[i] for i in free_g] + [fod.dG[i] for i in free_G]
    r = len(cols)
    if r == 0:
        if np.max(np.abs(fod.dF)) > TOL_FEAS or force_lambda_v:
            return None
        z = np.zeros(0)
    else:
        M = np.array(cols).T.reshape(n + m, r)
        C = [-np.eye(r)]
        d = [np.zeros(r)]
        if force_lambda_v:
            row = np.zeros((1, r))
            row[0, :J] = -1.0
            C.append(row)
            d.append([-min_lambda_v])
        poly = Polyhedron.from_rows(r, A=M, b=-fod.dF, C=np.vstack(C), d=np.concatenate(d))
        res = solve_lp(poly, np.ones(r), Sense.MIN)
        if res.status != LPStatus.OPTIMAL:
            return None
        z = np.maximum(res.x, 0.0)
    mu = z[:J]
    lam_g = np.zeros(fod.p)
    lam_G = np.zeros(fod.q)
    lam_g[free_g] = z[J:J + len(free_g)]
    lam_G[free_G] = z[J + len(free_g):]
    cert = KKTCertificate(float(mu.sum()), lam_g, lam_G, u, v, mu, W)
    lam = recover_lower_multiplier(fod, cert, tol_row)
    if lam is not None:
        cert = KKTCertificate(cert.lambda_v, lam_g, lam_G, u, v, mu, W, lam)
    rep = verify_certificate(fod, cert)
    return KKTCertificate(cert.lambda_v, lam_g, lam_G, u, v, mu, W, cert.lam, rep.rows)


def recover_lower_multiplier(fod, cert, tol_row=model.TOL_ROW):
    """``lam in Lambda cap {grad g (u,v)}^perp`` with ``grad_x f + grad_x g^T lam = w``.

    ``w = sum_j mu_j w_j / lambda_V``; ``None`` when ``lambda_V = 0`` or no
    such ``lam`` exists at ``(xbar, ybar)``.
    """
    if cert.mu is None or cert.lambda_v <= 0:
        return None
    n = fod.n
    w = cert.theta_vertices.T @ cert.mu / cert.lambda_v
    zero = nonorthogonal_rows(fod.dg, cert.u, cert.v, tol_row)
    poly = multiplier_polyhedron(fod, zero)
    poly = poly.intersect(A=fod.dg[:, :n].T.reshape(n, fod.p), b=w - fod.df[:n])
    return feasible_point(poly)


def certificate_from_multipliers(fod, lambda_v, lam, lambda_g, lambda_G=None, u=None, v=None,
                                 theta_hull=None):
    """Build a certificate from explicit multipliers.

    When a hull is given, ``mu`` is obtained from convex weights of
    ``w = grad_x f + grad_x g^T lam`` on the hull vertices; it stays
    ``None`` if ``w`` is not in the hull.
    """
    n, m = fod.n, fod.m
    u = np.zeros(n) if u is None else u
    v = np.zeros(m) if v is None else v
    u, v = _dirvec(fod, u, v)
    lam = np.asarray(lam, float).reshape(fod.p)
    lambda_g = np.asarray(lambda_g, float).reshape(fod.p)
    lambda_G = np.zeros(fod.q) if lambda_G is None else np.asarray(lambda_G, float).reshape(fod.q)
    mu, W = None, None
    if theta_hull is not None:
        W = _theta_vertices(theta_hull, n)
        w = fod.df[:n] + fod.dg[:, :n].T @ lam
        inside, weights = zero_in_convex_hull(W - w)
        if inside:
            mu = float(lambda_v) * weights
    return KKTCertificate(float(lambda_v), lambda_g, lambda_G, u, v, mu, W, lam)


def verify_certificate(fod, cert, theta_hull=None, tol=TOL_FEAS, tol_row=model.TOL_ROW):
    """Recompute every defining row; each residual must be ``<= tol``."""
    n, m = fod.n, fod.m
    u, v = _dirvec(fod, cert.u, cert.v)
    dvec = np.concatenate([u, v])
    lv = float(cert.lambda_v)
    lg, lG = np.asarray(cert.lambda_g, float), np.asarray(cert.lambda_G, float)
    rows = {}
    # sign / complementarity / orthogonality rows
    rows["lambda_v_sign"] = max(0.0, -lv)
    rows["lambda_g_sign"] = max(0.0, -float(np.min(lg, initial=0.0)))
    rows["lambda_G_sign"] = max(0.0, -float(np.min(lG, initial=0.0)))
    rows["lambda_g_compl"] = float(np.max(np.abs(lg * fod.g), initial=0.0))
    rows["lambda_G_compl"] = float(np.max(np.abs(lG * fod.G), initial=0.0))
    rows["lambda_g_orth"] = float(np.max(np.abs(lg * (fod.dg @ dvec)), initial=0.0))
    rows["lambda_G_orth"] = float(np.max(np.abs(lG * (fod.dG @ dvec)), initial=0.0))
    base = fod.dF + fod.dg.T @ lg + fod.dG.T @ lG
    W = cert.theta_vertices
    if W is None and theta_hull is not None:
        W = _theta_vertices(theta_hull, n)
    if cert.mu is not None and W is not None:
        mu = np.asarray(cert.mu, float)
        stat = base + lv * fod.df
        stat[:n] -= W.T @ mu if W.shape[0] else 0.0
        rows["stationarity"] = float(np.max(np.abs(stat), initial=0.0))
        rows["mu_sum"] = abs(float(mu.sum()) - lv)
        rows["mu_sign"] = max(0.0, -float(np.min(mu, initial=0.0)))
    if cert.lam is not None:
        lam = np.asarray(cert.lam, float)
        ex = base.copy()
        ex[:n] -= lv * (fod.dg[:, :n].T @ lam)
        ex[n:] += lv * fod.df[n:]
        rows["explicit_x"] = float(np.max(np.abs(ex[:n]), initial=0.0))
        rows["explicit_y"] = float(np.max(np.abs(ex[n:]), initial=0.0))
        rows["lam_stationarity"] = float(np.max(np.abs(fod.df[n:] + fod.dg[:, n:].T @ lam), initial=0.0))
        rows["lam_sign"] = max(0.0, -float(np.min(lam, initial=0.0)))
        rows["lam_compl"] = float(np.max(np.abs(lam * fod.g), initial=0.0))
        rows["lam_orth"] = float(np.max(np.abs(lam * (fod.dg @ dvec)), initial=0.0))
    if "stationarity" not in rows and "explicit_x" not in rows:
        rows["stationarity"] = np.inf  # nothing to check against
    return VerificationReport(rows, tol)
