"""Global lower-level solver, multiplier sets and directional solution sets.

The lower level ``min_y f(x,y) s.t. g(x,y) <= 0`` is solved by brute force:
a uniform grid over the search box, followed by compass pattern search from
every discrete local minimum.  Infeasible trial points are pulled back onto
the boundary by bisection along the trial segment.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import model
from .errors import BoxMissing, InputError, NoFeasiblePoint
from .lpkernel import Polyhedron
from .model import DirectionalContext, perturbed_directions

log = logging.getLogger(__name__)

MAX_GRID_POINTS = 2_000_000


class Verdict(str, Enum):
    HOLDS = "HOLDS"
    FAILS = "FAILS"
    EVIDENCE = "EVIDENCE"
    VIOLATED = "VIOLATED"
    INCONCLUSIVE = "INCONCLUSIVE"

    @property
    def positive(self):
        return self in (Verdict.HOLDS, Verdict.EVIDENCE)

    @property
    def negative(self):
        return self in (Verdict.FAILS, Verdict.VIOLATED)


@dataclass(frozen=True)
class LowerConfig:
    """Grid and refinement settings of :func:`solve_lower`.

    Attributes
    ----------
    grid : int
        Grid points per axis of the search box.
    refine_iters : int
        Number of step halvings in the pattern search.
    cluster_tol : float or None
        Clustering radius; ``None`` means ``1e-3 * box diameter``.
    tol_val : float
        Solutions within ``tol_val * max(1, |V|)`` of the minimum are kept.
    max_seeds : int
        Discrete local minima refined per solve.
    """

    grid: int = 401
    refine_iters: int = 50
    cluster_tol: Optional[float] = None
    tol_val: float = 1e-7
    max_seeds: int = 8
    tol_act: float = model.TOL_ACT
    n_perturb: int = 5
    seed: int = 0


@dataclass(frozen=True)
class LowerSolveResult:
    x: np.ndarray
    value: float
    solutions: np.ndarray
    multipliers: tuple
    grid_min: float
    grid_points: int
    refine_iters: int


def cluster_radius(prog, cfg):
    if cfg.cluster_tol is not None:
        return float(cfg.cluster_tol)
    lo, hi = prog.y_box
    return 1e-3 * float(np.linalg.norm(hi - lo))


def _axis_counts(m, grid):
    per_axis = grid
    while per_axis ** m > MAX_GRID_POINTS and per_axis > 3:
        per_axis -= 1
    return per_axis


def _point_value(prog, x, y):
    """``f`` at a single point, ``inf`` when infeasible or off-domain."""
    fv, gv = prog.lower_rows(x, y)
    if not np.isfinite(fv):
        return np.inf
    for gi in gv:
        if not gi <= 0.0:
            return np.inf
    return float(fv)


def _feasible(prog, x, y):
    _, gv = prog.lower_rows(x, y)
    return all(gi <= 0.0 for gi in gv)


def _feasible_many(prog, x, Y):
    """Feasibility of the rows of ``Y`` (one vectorised evaluation)."""
    _, gv = prog.lower_rows(list(x), [Y[:, i] for i in range(Y.shape[1])])
    ok = np.ones(Y.shape[0], dtype=bool)
    for gi in gv:
        ok &= np.broadcast_to(np.asarray(gi, dtype=float) <= 0.0, ok.shape)
    return ok


def _snap(prog, x, y_in, y_out, sections=32):
    """Furthest feasible point on the segment from feasible ``y_in`` to ``y_out``.

    Multi-section search: each round evaluates ``sections + 1`` points of
    the bracketing interval at once and keeps the last feasible one.
    """
    a, b = 0.0, 1.0
    seg = y_out - y_in
    length = float(np.max(np.abs(seg)))
    scale = 1.0 + float(np.max(np.abs(y_in)))
    while (b - a) * length > 1e-16 * scale:
        s = np.linspace(a, b, sections + 1)
        ok = _feasible_many(prog, x, y_in + s[:, None] * seg)
        ok[0] = True
        j = int(np.flatnonzero(ok)[-1]) if ok.all() else int(np.argmin(ok)) - 1
        if j == sections:
            a = b
            break
        na, nb = float(s[j]), float(s[j + 1])
        if na == a and nb == b:
            break
        a, b = na, nb
    return y_in + a * seg


def _pattern_search(prog, x, y0, f0, step0, iters, lo, hi):
    y, fy = y0.copy(), f0
    step = step0.copy()
    m = y.size
    for _ in range(iters):
        for _move in range(100):
            best = None
            for i in range(m):
                for s in (1.0, -1.0):
                    trial = y.copy()
                    trial[i] = min(max(trial[i] + s * step[i], lo[i]), hi[i])
                    if trial[i] == y[i]:
                        continue
                    ft = _point_value(prog, x, trial)
                    if ft == np.inf:
                        trial = _snap(prog, x, y, trial)
                        ft = _point_value(prog, x, trial)
                    if ft < fy and (best is None or ft < best[0]):
                        best = (ft, trial)
            if best is None:
                break
            fy, y = best
        step = step / 2
    return y, fy


def solve_lower(prog, x, cfg=LowerConfig()):
    """Global (grid plus pattern search) solve of the lower level at ``x``."""
    if prog.y_box is None:
        raise BoxMissing("the lower-level solver needs 'box: y in [lo,hi]^m'")
    if prog.m > 3:
        raise InputError("grid mode supports m <= 3")
    x = np.asarray(x, dtype=float).reshape(prog.n)
    lo, hi = prog.y_box
    N = _axis_counts(prog.m, cfg.grid)
    axes = [np.linspace(lo[i], hi[i], N) for i in range(prog.m)]
    mesh = np.meshgrid(*axes, indexing="ij")
    ycols = [mm.reshape(-1) for mm in mesh]
    fv, gv = prog.lower_rows(list(x), ycols)
    fv = np.broadcast_to(np.asarray(fv, dtype=float), ycols[0].shape)
    ok = np.isfinite(fv)
    for gi in gv:
        ok &= np.broadcast_to(np.asarray(gi, dtype=float) <= 0.0, ok.shape)
    if not ok.any():
        raise NoFeasiblePoint(f"no feasible grid point at x={x.tolist()}")
    vals = np.where(ok, fv, np.inf).reshape((N,) * prog.m)
    local = ok.reshape(vals.shape).copy()
    for ax in range(prog.m):
        pad = [(0, 0)] * prog.m
        pad[ax] = (1, 1)
        padded = np.pad(vals, pad, constant_values=np.inf)
        sl_prev = [slice(None)] * prog.m
        sl_next = [slice(None)] * prog.m
        sl_prev[ax] = slice(0, -2)
        sl_next[ax] = slice(2, None)
        local &= vals <= padded[tuple(sl_prev)]
        local &= vals <= padded[tuple(sl_next)]
    flat = vals.reshape(-1)
    grid_min = float(flat.min())
    seeds = np.flatnonzero(local.reshape(-1))
    seeds = seeds[np.argsort(flat[seeds], kind="stable")][: cfg.max_seeds]
    step0 = (hi - lo) / (N - 1)
    refined = []
    for idx in seeds:
        y0 = np.array([c[idx] for c in ycols])
        y, fy = _pattern_search(prog, x, y0, float(flat[idx]), step0, cfg.refine_iters, lo, hi)
        refined.append((fy, y))
    refined.sort(key=lambda t: t[0])
    V = refined[0][0]
    tol = cfg.tol_val * max(1.0, abs(V))
    radius = cluster_radius(prog, cfg)
    sols = []
    for fy, y in refined:
        if fy > V + tol:
            break
        if all(np.linalg.norm(y - s) > radius for s in sols):
            sols.append(y)
    sols_arr = np.array(sols)
    mults = tuple(multiplier_set(prog, x, y, cfg.tol_act) for y in sols_arr)
    return LowerSolveResult(x, float(V), sols_arr, mults, grid_min, N ** prog.m, cfg.refine_iters)


def multiplier_set(prog, x, y, tol_act=model.TOL_ACT):
    """``Lambda(x,y)``: ``grad_y f + grad_y g^T lam = 0``, ``lam >= 0``, inactive ``lam_i = 0``."""
    return multiplier_polyhedron(model.first_order(prog, x, y, tol_act))


def multiplier_polyhedron(fod, zero=()):
    """``Lambda`` from first-order data; indices in ``zero`` are also fixed to 0."""
    n, m, p = fod.n, fod.m, fod.p
    dgy = fod.dg[:, n:].reshape(p, m)
    dfy = fod.df[n:]
    fixed = [i for i in range(p) if i not in fod.I_g or i in zero]
    E = np.zeros((len(fixed), p))
    for r, i in enumerate(fixed):
        E[r, i] = 1.0
    A = np.vstack([dgy.T, E])
    b = np.concatenate([-dfy, np.zeros(len(fixed))])
    return Polyhedron.from_rows(p, A=A, b=b, C=-np.eye(p), d=np.zeros(p))


# ---------------------------------------------------------------------------
# solution-map oracles


class NumericLower:
    """Cached :func:`solve_lower` exposing ``value`` and ``solutions``."""

    exact = False

    def __init__(self, prog, cfg=LowerConfig()):
        self.prog = prog
        self.cfg = cfg
        self._cache = {}

    def solve(self, x):
        key = tuple(float(v) for v in np.atleast_1d(x))
        if key not in self._cache:
            self._cache[key] = solve_lower(self.prog, np.array(key), self.cfg)
        return self._cache[key]

    def value(self, x):
        return self.solve(x).value

    def solutions(self, x):
        return self.solve(x).solutions


@dataclass(frozen=True)
class DirectionalSolution:
    """Representative of ``S(xbar;u)`` plus the sequence that reaches it."""

    y: np.ndarray
    t: np.ndarray
    u_seq: np.ndarray
    y_seq: np.ndarray
    dist: np.ndarray


@dataclass(frozen=True)
class DirectionalSolutionSet:
    base: np.ndarray
    direction: np.ndarray
    representatives: tuple
    base_solutions: np.ndarray
    samples: tuple = field(default=(), repr=False)

    @property
    def points(self):
        return np.array([r.y for r in self.representatives]).reshape(-1, self.base_solutions.shape[1])


def default_context(xbar, u, t0=0.1, beta=0.5, K=20, delta=0.5):
    return DirectionalContext(np.atleast_1d(xbar), np.atleast_1d(u), 1.0, delta, t0, beta, K)


def _schedule_samples(lower, xbar, u, ctx, n_perturb, seed):
    """Solve along ``xbar + t_k u^k``; entries are ``(k, t, u_k, solutions or None)``.

    The schedule runs along ``u / |u|`` (``S(xbar;u)`` is invariant under
    positive scaling of ``u``), so the reported ``t`` is ``t_k / |u|``.
    """
    rng = np.random.default_rng(seed)
    norm = float(np.linalg.norm(u))
    scale = 1.0 / norm if norm > 0 else 1.0
    out = []
    for k, t in enumerate(ctx.schedule * scale):
        for uk in perturbed_directions(u, n_perturb, ctx.sample_width(), rng):
            try:
                sols = lower.solutions(xbar + t * uk)
            except NoFeasiblePoint:
                sols = None
            out.append((k, float(t), uk, sols))
    return out


def _tail_start(K):
    return K // 2


def directional_solutions(prog, xbar, u, ctx=None, lower=None, cfg=LowerConfig()):
    """Representatives of ``S(xbar;u)`` (limits of solutions along the schedule)."""
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    ctx = ctx or default_context(xbar, u)
    lower = lower or NumericLower(prog, cfg)
    base = np.asarray(lower.solutions(xbar)).reshape(-1, prog.m)
    if base.shape[0] == 0:
        raise NoFeasiblePoint("S(xbar) is empty")
    K = ctx.K
    if np.linalg.norm(u) == 0:
        reps = tuple(
            DirectionalSolution(y, ctx.schedule, np.zeros((K, prog.n)), np.tile(y, (K, 1)), np.zeros(K))
            for y in base
        )
        return DirectionalSolutionSet(xbar, u, reps, base, ())
    samples = _schedule_samples(lower, xbar, u, ctx, cfg.n_perturb, cfg.seed)
    radius = cluster_radius(prog, cfg) if prog.y_box is not None else 1e-3
    reps = []
    for ybar in base:
        best = [None] * K
        for k, t, uk, sols in samples:
            if sols is None or len(sols) == 0:
                continue
            dists = np.linalg.norm(np.asarray(sols) - ybar, axis=1)
            j = int(np.argmin(dists))
            if best[k] is None or dists[j] < best[k][0]:
                best[k] = (float(dists[j]), t, uk, np.asarray(sols)[j])
        tail = best[_tail_start(K):]
        if all(b is not None and b[0] <= radius for b in tail):
            rows = [b for b in best if b is not None]
            reps.append(DirectionalSolution(
                ybar.copy(),
                np.array([b[1] for b in rows]),
                np.array([b[2] for b in rows]),
                np.array([b[3] for b in rows]),
                np.array([b[0] for b in rows]),
            ))
    return DirectionalSolutionSet(xbar, u, tuple(reps), base, tuple(samples))


@dataclass(frozen=True)
class HypothesisVerdict:
    verdict: Verdict
    detail: str
    witness: Optional[dict] = None


@dataclass(frozen=True)
class HypothesisReport:
    restricted_inf_compactness: HypothesisVerdict
    inner_semicontinuity: tuple  # (ybar, HypothesisVerdict) pairs
    inner_semicompactness: HypothesisVerdict
    omega_is_box: bool = True


def check_hypotheses(prog, xbar, u, ctx=None, lower=None, cfg=LowerConfig()):
    """Three-valued sampled evidence for the compactness/continuity hypotheses."""
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    ctx = ctx or default_context(xbar, u)
    lower = lower or NumericLower(prog, cfg)
    base = np.asarray(lower.solutions(xbar)).reshape(-1, prog.m)
    samples = _schedule_samples(lower, xbar, u, ctx, cfg.n_perturb, cfg.seed)
    radius = cluster_radius(prog, cfg) if prog.y_box is not None else 1e-3
    tail = [s for s in samples if s[0] >= _tail_start(ctx.K)]

    on_box = None
    if prog.y_box is not None:
        lo, hi = prog.y_box
        for k, t, uk, sols in samples:
            if sols is None:
                continue
            for y in sols:
                if np.any(y - lo <= radius) or np.any(hi - y <= radius):
                    on_box = {"k": k, "t": t, "u": uk, "y": y}
                    break
            if on_box:
                break
    if on_box is None:
        ric = HypothesisVerdict(Verdict.EVIDENCE, "all sampled solutions lie inside the search box")
    else:
        ric = HypothesisVerdict(Verdict.INCONCLUSIVE, "a sampled solution touches the search box", on_box)
    isc_verdict = ric.verdict if any(s[3] is not None for s in tail) else Verdict.INCONCLUSIVE
    isc_cpt = HypothesisVerdict(isc_verdict, "solutions exist and stay in the box along the sampled schedule"
                                if isc_verdict == Verdict.EVIDENCE else "box-binding or missing solutions")

    per_point = []
    for ybar in base:
        worst = None
        for k, t, uk, sols in tail:
            if sols is None or len(sols) == 0:
                continue
            dist = float(np.min(np.linalg.norm(np.asarray(sols) - ybar, axis=1)))
            if worst is None or dist > worst["dist"]:
                worst = {"k": k, "t": t, "u": uk, "solutions": np.asarray(sols), "dist": dist}
        if worst is None:
            hv = HypothesisVerdict(Verdict.INCONCLUSIVE, "no feasible samples along the schedule")
        elif worst["dist"] > radius:
            hv = HypothesisVerdict(Verdict.VIOLATED, "solutions along a sampled sequence stay away", worst)
        else:
            hv = HypothesisVerdict(Verdict.EVIDENCE, "nearest solution converges along every sampled sequence")
        per_point.append((ybar, hv))
    return HypothesisReport(ric, tuple(per_point), isc_cpt)
