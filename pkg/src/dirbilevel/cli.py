"""Command-line front end: ``dirbilevel <command> <problem> [options]``.

``<problem>`` is a problem file or a built-in instance id (EX31, EX51).
Reports are JSON on stdout (or ``--json PATH``); a short summary and the
wall-clock timings go to stderr so that the JSON is byte-identical across
runs.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import cq, exprdsl, kkt, lower, model, oracles, sensitivity
from .errors import InconclusiveUnbounded, InputError, NoFeasiblePoint, NumericalError
from .lower import LowerConfig, Verdict
from .lpkernel import TOL_FEAS, enumerate_vertices, feasible_point
from .report import SCHEMA, dumps, fingerprint

log = logging.getLogger("dirbilevel")

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(InputError):
    pass


class InfeasibleBox(InputError):
    """The lower level has no feasible point inside the search box."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass(frozen=True)
class Settings:
    tol_act: float
    tol_feas: float
    tol_row: float
    lower_cfg: LowerConfig
    t0: float
    beta: float
    K: int
    seed: int
    rho_grid: tuple
    kappa_grid: tuple
    seq_budget: int
    delta_seq: float
    frow: str
    numeric: bool

    def ctx(self, base, direction):
        return lower.default_context(base, direction, self.t0, self.beta, self.K)


# ---------------------------------------------------------------------------
# input helpers


def _number(text):
    expr = exprdsl.parse_expr(text.strip())
    if not exprdsl.is_constant(expr):
        raise UsageError(f"{text!r} is not a constant")
    return float(exprdsl.evaluate(expr, [], []))


def parse_vector(text, length=None, what="vector"):
    """Comma separated constants such as ``sqrt(3),-1``."""
    parts = [p for p in text.split(",") if p.strip()] if text.strip() else []
    vec = np.array([_number(p) for p in parts], dtype=float)
    if length is not None and vec.size != length:
        raise UsageError(f"{what} needs {length} entries, got {vec.size}")
    return vec


def _grid(text):
    vals = parse_vector(text, what="grid")
    if vals.size == 0 or np.any(vals <= 0):
        raise UsageError("grids need positive entries")
    return tuple(float(v) for v in vals)


@dataclass
class Problem:
    prog: model.BilevelProgram
    source: str
    instance: object = None

    @property
    def lower_is_exact(self):
        return self.instance is not None


def load_problem(spec, box=None):
    if spec.upper() in oracles.INSTANCES:
        inst = oracles.get_instance(spec)
        prog = inst.program
        source = inst.ident
    else:
        try:
            with open(spec, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            if spec.upper().startswith("EX"):
                oracles.get_instance(spec)  # raises UnknownInstance
            raise UsageError(f"cannot read problem file {spec!r}: {exc.strerror}") from None
        prog = exprdsl.parse_program(text)
        source = spec
        inst = None
    if box is not None:
        lo, hi = parse_vector(box, 2, "--box")
        if not lo < hi:
            raise UsageError("--box needs lo < hi")
        prog = prog.with_box(lo, hi)
    return Problem(prog, source, inst)


def _lower_for(problem, st):
    if problem.instance is not None and not st.numeric:
        return problem.instance
    return lower.NumericLower(problem.prog, st.lower_cfg)


def _point(problem, args, need_y=True):
    prog = problem.prog
    inst = problem.instance
    if args.x is not None:
        x = parse_vector(args.x, prog.n, "--x")
    elif inst is not None:
        x = inst.xbar
    else:
        raise UsageError("--x is required for problem files")
    if not need_y:
        return x, None
    if getattr(args, "y", None) is not None:
        y = parse_vector(args.y, prog.m, "--y")
    elif inst is not None and np.allclose(x, inst.xbar):
        y = inst.ybar
    else:
        raise UsageError("--y is required")
    return x, y


def _u(problem, args):
    if args.dir is None:
        return np.zeros(problem.prog.n)
    return parse_vector(args.dir, problem.prog.n, "--dir")


def _vprime_fn(problem, lw, st, x):
    cache = {}

    def vprime(u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        key = tuple(u.tolist())
        if key not in cache:
            ds = lower.directional_solutions(problem.prog, x, u, st.ctx(x, u), lw, st.lower_cfg)
            cache[key] = sensitivity.dderiv_lp(problem.prog, x, u, ds, st.tol_act).value
        return cache[key]

    return vprime


def _theta(problem, lw, st, x, u):
    ds = lower.directional_solutions(problem.prog, x, u, st.ctx(x, u), lw, st.lower_cfg)
    return ds, sensitivity.theta_set(problem.prog, x, u, ds, tol_act=st.tol_act, tol_row=st.tol_row)


def _v_direction(problem, args, st, fod, u, vprime):
    """``--vdir`` or the first Sigma vertex at ``(x, y)``."""
    if getattr(args, "vdir", None) is not None:
        return parse_vector(args.vdir, problem.prog.m, "--vdir"), "argument"
    if np.linalg.norm(u) == 0:
        return np.zeros(problem.prog.m), "zero"
    sig = sensitivity.sigma_set(problem.prog, fod.x, fod.y, u, vprime(u), st.tol_act)
    if sig.directions.shape[0] == 0:
        raise UsageError("y does not attain V'(x;u); pass --vdir explicitly")
    return sig.directions[0], "sigma_set"


def _hyp_flags(problem, lw, st, x, u):
    rep = lower.check_hypotheses(problem.prog, x, u, st.ctx(x, u), lw, st.lower_cfg)
    return {
        "restricted_inf_compactness": rep.restricted_inf_compactness.verdict,
        "inner_semicompactness": rep.inner_semicompactness.verdict,
        "inner_semicontinuity": [{"y": y, "verdict": hv.verdict, "detail": hv.detail} for y, hv in
                                 rep.inner_semicontinuity],
        "omega_is_box": rep.omega_is_box,
    }


def _cq_dict(res):
    return {"verdict": res.verdict, "detail": res.detail, "witness": res.witness, "data": res.data}


# ---------------------------------------------------------------------------
# commands


def cmd_validate(problem, args, st):
    prog = problem.prog
    return {
        "dims": {"n": prog.n, "m": prog.m, "p": prog.p, "q": prog.q},
        "canonical": prog.canonical_text(),
        "box": None if prog.y_box is None else [prog.y_box[0], prog.y_box[1]],
        "lower_constraints_affine": all(exprdsl.is_affine(e) for e in prog.g),
    }, {"dims": "exprdsl.parse_program"}, True


def _lambda_summary(prog, x, y, st):
    poly = lower.multiplier_set(prog, x, y, st.tol_act)
    pt = feasible_point(poly, st.tol_feas)
    out = {"feasible_point": pt}
    try:
        verts = enumerate_vertices(poly)
        out["vertices"] = verts.vertices
        out["rays"] = verts.rays
    except NumericalError as exc:
        out["vertices_error"] = str(exc)
    return out


def cmd_value(problem, args, st):
    prog = problem.prog
    x, _ = _point(problem, args, need_y=False)
    try:
        res = lower.solve_lower(prog, x, st.lower_cfg)
    except NoFeasiblePoint as exc:
        raise InfeasibleBox(f"{exc}; check the search box") from None
    sols = [{"y": y, "f": float(prog.lower_rows(x, y)[0]), "multipliers": _lambda_summary(prog, x, y, st)}
            for y in res.solutions]
    out = {"x": x, "V": res.value, "solutions": sols, "grid_points": res.grid_points,
           "grid_min": res.grid_min, "refine_iters": res.refine_iters}
    if problem.instance is not None:
        out["oracle_V"] = problem.instance.value(x)
    return out, {"V": "lower.solve_lower", "multipliers": "lower.multiplier_set + lpkernel.enumerate_vertices"}, True


def cmd_dderiv(problem, args, st):
    prog = problem.prog
    lw = _lower_for(problem, st)
    x, _ = _point(problem, args, need_y=False)
    u = _u(problem, args)
    ds = lower.directional_solutions(prog, x, u, st.ctx(x, u), lw, st.lower_cfg)
    lp = sensitivity.dderiv_lp(prog, x, u, ds, st.tol_act)
    fd = sensitivity.dderiv_fd(lw, x, u, st.t0, st.beta, st.K)
    diff = abs(lp.value - fd.value)
    out = {
        "x": x, "u": u,
        "lp": {"value": lp.value, "y": lp.y, "lam": lp.lam, "v": lp.v, "duality_gap": lp.residual,
               "guard_active": lp.guard_active,
               "pieces": [{"y": p.y, "dual": p.dual_value, "primal": p.primal_value, "lam": p.lam, "v": p.v}
                          for p in lp.pieces]},
        "fd": {"value": fd.value, "residual": fd.residual},
        "agreement": {"abs_diff": diff, "tol": max(1e-3, 1e-3 * abs(lp.value)),
                      "agree": bool(diff <= max(1e-3, 1e-3 * abs(lp.value)))},
        "directional_solutions": ds.points,
        "hypotheses": _hyp_flags(problem, lw, st, x, u),
        "lower_exact": problem.lower_is_exact and not st.numeric,
    }
    return out, {"lp": "sensitivity.dderiv_lp", "fd": "sensitivity.dderiv_fd",
                 "hypotheses": "lower.check_hypotheses"}, True


def _subdiff_dict(th):
    return {
        "vprime": th.vprime,
        "components": [{"y": c.y, "sigma": c.sigma.directions, "sigma_guard_active": c.sigma.guard_active,
                        "w_vertices": c.w.polytope.vertices, "w_rays": c.w.polytope.rays,
                        "multiplier_vertices": c.w.multipliers.vertices, "w_invariance": c.invariance}
                       for c in th.components],
        "hull": {"vertices": th.hull.vertices, "rays": th.hull.rays, "bounded": th.hull.bounded},
        "w_invariance": th.invariance,
        "surrogate": "convex hull of Theta",
    }


def cmd_subdiff(problem, args, st):
    lw = _lower_for(problem, st)
    x, _ = _point(problem, args, need_y=False)
    u = _u(problem, args)
    ds, th = _theta(problem, lw, st, x, u)
    out = _subdiff_dict(th)
    out.update({"x": x, "u": u, "hypotheses": _hyp_flags(problem, lw, st, x, u)})
    return out, {"components": "sensitivity.theta_set", "hull": "lpkernel.hull_vertices"}, True


def _members(problem, args):
    prog = problem.prog
    k = prog.n + prog.m
    if args.w:
        return [parse_vector(w, k, "--w") for w in args.w]
    if problem.instance is not None:
        return [np.array(w, float) for w, _ in problem.instance.expected.get("critical_cone_members", [])]
    return [np.zeros(k)]


def cmd_cones(problem, args, st):
    prog = problem.prog
    lw = _lower_for(problem, st)
    x, y = _point(problem, args)
    fod = model.first_order(prog, x, y, st.tol_act)
    vprime = _vprime_fn(problem, lw, st, x)
    lin = model.linearization_cone_vp(fod, vprime, st.frow, st.tol_row)
    crit = model.critical_cone_vp(fod, vprime, st.frow, st.tol_row)
    rows = []
    for w in _members(problem, args):
        rows.append({"w": w, "linearization": lin.contains(w), "critical": crit.contains(w),
                     "residuals": crit.residuals(w)})
    out = {"x": x, "y": y, "active_g": [i + 1 for i in fod.I_g], "active_G": [i + 1 for i in fod.I_G],
           "rows": [{"label": r.label, "coeff": r.coeff, "kind": r.kind, "value_row": r.value_row}
                    for r in crit.rows],
           "members": rows, "frow": st.frow}
    return out, {"members": "model.critical_cone_vp"}, True


def _analysis_inputs(problem, args, st):
    prog = problem.prog
    lw = _lower_for(problem, st)
    x, y = _point(problem, args)
    fod = model.first_order(prog, x, y, st.tol_act)
    if not fod.feasible:
        raise UsageError("(x, y) is not feasible for the lower-level and upper-level constraints")
    u = _u(problem, args)
    vprime = _vprime_fn(problem, lw, st, x)
    v, vsrc = _v_direction(problem, args, st, fod, u, vprime)
    _, th = _theta(problem, lw, st, x, u)
    return lw, x, y, fod, u, v, vsrc, vprime, th


def run_cq(problem, lw, st, fod, u, v, vprime, th):
    prog = problem.prog
    ctx = st.ctx(fod.x, u)
    pctx = st.ctx(fod.z, np.concatenate([u, v]))
    out = []
    for name, fn in (
        ("NNAMCQ", lambda: cq.check_nnamcq(fod, th.hull)),
        ("FOSCMS", lambda: cq.check_foscms(fod, u, v, th.hull, vprime, st.tol_row)),
        ("quasi-normality", lambda: cq.check_dir_quasinormality(
            prog, fod, u, v, th.hull, vprime, lw, ctx, st.tol_row, st.seq_budget, st.delta_seq, st.seed)),
        ("RS", lambda: cq.check_rs_sufficient(prog, fod)),
        ("RCR", lambda: cq.check_rcr(prog, fod.x, fod.y, tol_act=st.tol_act, seed=st.seed)),
        ("MSCQ", lambda: cq.probe_mscq(prog, fod, u, v, lw, pctx, st.kappa_grid, seed=st.seed)),
        ("calmness", lambda: cq.probe_calmness(prog, fod, u, v, lw, pctx, st.rho_grid, seed=st.seed)),
    ):
        try:
            out.append(fn())
        except InconclusiveUnbounded as exc:
            out.append(cq.CQResult(name, Verdict.INCONCLUSIVE, str(exc)))
    return cq.CQReport(tuple(out))


def cmd_check_cq(problem, args, st):
    lw, x, y, fod, u, v, vsrc, vprime, th = _analysis_inputs(problem, args, st)
    rep = run_cq(problem, lw, st, fod, u, v, vprime, th)
    out = {"x": x, "y": y, "u": u, "v": v, "v_source": vsrc, "vprime": vprime(u),
           "theta_hull": th.hull.vertices,
           "results": {r.name: _cq_dict(r) for r in rep.results},
           "hypotheses": _hyp_flags(problem, lw, st, x, u)}
    prov = {r.name: f"cq.{fn}" for r, fn in zip(rep.results, (
        "check_nnamcq", "check_foscms", "check_dir_quasinormality", "check_rs_sufficient", "check_rcr",
        "probe_mscq", "probe_calmness"))}
    return out, prov, True


def cmd_kkt(problem, args, st):
    lw, x, y, fod, u, v, vsrc, vprime, th = _analysis_inputs(problem, args, st)
    out = {"x": x, "y": y, "u": u, "v": v, "v_source": vsrc, "surrogate": "convex hull of Theta"}
    ok = True
    try:
        found = kkt.find_certificate(fod, u, v, th.hull, st.tol_row)
        forced = kkt.find_certificate(fod, u, v, th.hull, st.tol_row, force_lambda_v=True)
    except InconclusiveUnbounded as exc:
        out["status"] = "INCONCLUSIVE"
        out["detail"] = str(exc)
        return out, {}, True
    for key, cert in (("certificate", found), ("certificate_lambda_v_positive", forced)):
        if cert is None:
            out[key] = None
            continue
        rep = kkt.verify_certificate(fod, cert, tol=st.tol_feas)
        out[key] = dict(cert.as_dict(), passed=rep.passed, failed_rows=rep.failed_rows)
    ok = found is not None and out["certificate"]["passed"]
    if args.lambda_v is not None:
        lam = parse_vector(args.lam or "", fod.p, "--lam")
        lg = parse_vector(args.lambda_g or "", fod.p, "--lambda-g")
        lG = parse_vector(args.lambda_G or "", fod.q, "--lambda-G") if fod.q else None
        cert = kkt.certificate_from_multipliers(fod, _number(args.lambda_v), lam, lg, lG, u, v, th.hull)
        rep = kkt.verify_certificate(fod, cert, tol=st.tol_feas)
        out["supplied"] = dict(cert.as_dict(), residuals=rep.rows, passed=rep.passed, failed_rows=rep.failed_rows)
        ok = ok and rep.passed
    out["status"] = "FOUND" if found is not None else "ABSENT"
    return out, {"certificate": "kkt.find_certificate", "supplied": "kkt.verify_certificate"}, ok


def cmd_calmness(problem, args, st):
    prog = problem.prog
    lw = _lower_for(problem, st)
    x, y = _point(problem, args)
    fod = model.first_order(prog, x, y, st.tol_act)
    u = _u(problem, args)
    vprime = _vprime_fn(problem, lw, st, x)
    v, vsrc = _v_direction(problem, args, st, fod, u, vprime)
    pctx = st.ctx(fod.z, np.concatenate([u, v]))
    calm = cq.probe_calmness(prog, fod, u, v, lw, pctx, st.rho_grid, seed=st.seed)
    ms = cq.probe_mscq(prog, fod, u, v, lw, pctx, st.kappa_grid, seed=st.seed)
    out = {"x": x, "y": y, "u": u, "v": v, "v_source": vsrc, "calmness": _cq_dict(calm), "MSCQ": _cq_dict(ms)}
    return out, {"calmness": "cq.probe_calmness", "MSCQ": "cq.probe_mscq"}, True


# ---------------------------------------------------------------------------
# reproduce


def _row(name, expected, observed, tol, passed, provenance):
    return {"name": name, "expected": expected, "observed": observed, "tol": tol,
            "status": "PASS" if passed else "FAIL", "provenance": provenance}


def _oracle_crosscheck(inst, st):
    prog = inst.program
    solver = lower.NumericLower(prog, st.lower_cfg)
    errs = [abs(solver.value([x]) - inst.value(x)) for x in inst.grid()]
    return float(max(errs))


def reproduce(ident, st):
    inst = oracles.get_instance(ident)
    prog = inst.program
    rows = []
    err = _oracle_crosscheck(inst, st)
    rows.append(_row("oracle V matches solve_lower on the validation grid", 0.0, err, 1e-6, err <= 1e-6,
                     "lower.solve_lower"))
    x = inst.xbar
    fod = model.first_order(prog, x, inst.ybar, st.tol_act)
    ident = inst.ident
    if ident == "EX51":
        rows += _reproduce_ex51(inst, prog, fod, st)
    else:
        rows += _reproduce_ex31(inst, prog, fod, st)
    return {"instance": ident, "rows": rows, "all_pass": all(r["status"] == "PASS" for r in rows)}


def _reproduce_ex51(inst, prog, fod, st):
    sq3 = math.sqrt(3.0)
    x = inst.xbar
    rows = []
    u1 = np.array([1.0])
    ds = lower.directional_solutions(prog, x, u1, st.ctx(x, u1), inst)
    lp = sensitivity.dderiv_lp(prog, x, u1, ds, st.tol_act)
    fd = sensitivity.dderiv_fd(inst, x, u1, st.t0, st.beta, st.K)
    exp = inst.expected["dderiv_right"]
    rows.append(_row("V'(0;1) by the LP formula", exp, lp.value, 1e-9, abs(lp.value - exp) <= 1e-9,
                     "sensitivity.dderiv_lp"))
    rows.append(_row("V'(0;1) by finite differences", exp, fd.value, 1e-3, abs(fd.value - exp) <= 1e-3,
                     "sensitivity.dderiv_fd"))
    u = np.array([sq3])
    _, th = _theta(Problem(prog, "EX51", inst), inst, st, x, u)
    hv = th.hull.vertices.reshape(-1)
    exp = inst.expected["theta_singleton"]
    ok = hv.size == 1 and abs(hv[0] - exp) <= 1e-8
    rows.append(_row("Theta(0;sqrt(3)) hull is a singleton", [exp], hv, 1e-8, ok, "sensitivity.theta_set"))
    rows.append(_row("W invariant over Sigma representatives", 0.0, th.invariance, 1e-8, th.invariance <= 1e-8,
                     "sensitivity.w_invariance"))
    verts = enumerate_vertices(lower.multiplier_set(prog, x, inst.ybar, st.tol_act)).vertices
    expv = np.array(inst.expected["multiplier_vertices"])
    dist = sensitivity.hausdorff(verts, expv) if verts.shape == expv.shape else np.inf
    rows.append(_row("vertices of Lambda(0,-sqrt(3))", expv, verts, 1e-8, dist <= 1e-8,
                     "lpkernel.enumerate_vertices"))
    vprime = inst.vprime
    d = np.array(inst.expected["direction"])
    uu, vv = d[:1], d[1:]
    qn = cq.check_dir_quasinormality(prog, fod, uu, vv, th.hull, vprime, inst, st.ctx(x, uu), st.tol_row,
                                     st.seq_budget, st.delta_seq, st.seed)
    rows.append(_row("directional quasi-normality at (sqrt(3),-1)", "HOLDS", qn.verdict,
                     None, qn.verdict == Verdict.HOLDS, "cq.check_dir_quasinormality"))
    u0 = np.zeros(1)
    _, th0 = _theta(Problem(prog, "EX51", inst), inst, st, x, u0)
    qn0 = cq.check_dir_quasinormality(prog, fod, u0, np.zeros(1), th0.hull, vprime, inst, st.ctx(x, u0),
                                      st.tol_row, st.seq_budget, st.delta_seq, st.seed)
    verified = False
    if qn0.witness is not None:
        w = qn0.witness
        verified = cq.verify_sequence_witness(prog, inst, w, cq.SignPattern(w["alpha"], tuple(w["nu_g"]),
                                                                              tuple(w["nu_G"])))
    rows.append(_row("classical quasi-normality (direction 0)", "FAILS", qn0.verdict, None,
                     qn0.verdict == Verdict.FAILS and verified, "cq.check_dir_quasinormality"))
    fo = cq.check_foscms(fod, uu, vv, th.hull, vprime, st.tol_row)
    rows.append(_row("FOSCMS at (sqrt(3),-1)", "FAILS", fo.verdict, None, fo.verdict == Verdict.FAILS,
                     "cq.check_foscms"))
    c = inst.expected["certificate"]
    cert = kkt.certificate_from_multipliers(fod, c["lambda_v"], c["lam"], c["lambda_g"], None, uu, vv, th.hull)
    rep = kkt.verify_certificate(fod, cert, tol=1e-10)
    rows.append(_row("KKT certificate (1/2,(1,0),(1,0)) verifies", 0.0, max(rep.rows.values()), 1e-10,
                     rep.passed, "kkt.verify_certificate"))
    found = kkt.find_certificate(fod, uu, vv, th.hull, st.tol_row)
    ok = found is not None and kkt.verify_certificate(fod, found, tol=st.tol_feas).passed
    rows.append(_row("find_certificate returns a passing certificate", True, ok, st.tol_feas, ok,
                     "kkt.find_certificate"))
    rows += _cone_rows(inst, fod, st)
    return rows


def _cone_rows(inst, fod, st):
    crit = model.critical_cone_vp(fod, inst.vprime, st.frow, st.tol_row)
    rows = []
    for w, member in inst.expected["critical_cone_members"]:
        got = crit.contains(np.array(w, float))
        rows.append(_row(f"critical cone membership of {list(w)}", member, got, st.tol_row, got == member,
                         "model.critical_cone_vp"))
    return rows


def _reproduce_ex31(inst, prog, fod, st):
    x = inst.xbar
    rows = []
    grid = inst.grid()
    closed = np.array([-1.0 - 2 * t ** 3 if t > 0 else -1.0 for t in grid])
    solver = lower.NumericLower(prog, st.lower_cfg)
    err = float(max(abs(solver.value([t]) - c) for t, c in zip(grid, closed)))
    rows.append(_row("V(x) = -1-2x^3 (x>0), -1 (x<=0) on the grid", 0.0, err, 1e-6, err <= 1e-6,
                     "lower.solve_lower"))
    for u in (1.0, -1.0):
        fd = sensitivity.dderiv_fd(inst, x, [u], st.t0, st.beta, st.K)
        rows.append(_row(f"V'(0;{u:g}) by finite differences", 0.0, fd.value, 1e-3, abs(fd.value) <= 1e-3,
                         "sensitivity.dderiv_fd"))
    for key, want in (("calmness_violated_direction", Verdict.VIOLATED),
                      ("calmness_evidence_direction", Verdict.EVIDENCE)):
        d = np.array(inst.expected[key])
        pctx = st.ctx(fod.z, d)
        res = cq.probe_calmness(prog, fod, d[:1], d[1:], inst, pctx, st.rho_grid, seed=st.seed)
        rows.append(_row(f"calmness in direction {d.tolist()}", want.value, res.verdict, None,
                         res.verdict == want, "cq.probe_calmness"))
    rows += _cone_rows(inst, fod, st)
    return rows


def cmd_reproduce(ident, st):
    out = reproduce(ident, st)
    return out, {"rows": "cli.reproduce"}, out["all_pass"]


# ---------------------------------------------------------------------------
# entry point


COMMANDS = ("validate", "value", "dderiv", "subdiff", "cones", "check-cq", "kkt", "calmness", "reproduce")


def build_parser():
    p = _Parser(prog="dirbilevel", description="Directional analysis of bilevel programs via the value function.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("problem", help="problem file or built-in id (EX31, EX51)")
    g = p.add_argument_group("point and direction")
    g.add_argument("--x", help="upper-level point, comma separated (constants like sqrt(3) allowed)")
    g.add_argument("--y", help="lower-level point")
    g.add_argument("--dir", help="x-direction u")
    g.add_argument("--vdir", help="y-direction v (default: a Sigma vertex)")
    g.add_argument("--w", action="append", help="joint direction (u,v) for 'cones'; repeatable")
    g.add_argument("--box", help="override the search box: lo,hi")
    k = p.add_argument_group("kkt")
    k.add_argument("--lambda-v", dest="lambda_v")
    k.add_argument("--lam")
    k.add_argument("--lambda-g", dest="lambda_g")
    k.add_argument("--lambda-G", dest="lambda_G")
    o = p.add_argument_group("global")
    o.add_argument("--tol-act", type=float, default=model.TOL_ACT)
    o.add_argument("--tol-feas", type=float, default=TOL_FEAS)
    o.add_argument("--tol-row", type=float, default=model.TOL_ROW)
    o.add_argument("--grid", type=int, default=LowerConfig.grid)
    o.add_argument("--refine-iters", type=int, default=LowerConfig.refine_iters)
    o.add_argument("--cluster-tol", type=float, default=None)
    o.add_argument("--t0", type=float, default=0.1)
    o.add_argument("--beta", type=float, default=0.5)
    o.add_argument("--K", type=int, default=20)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--rho-grid", default=",".join(f"{r:g}" for r in cq.RHO_GRID))
    o.add_argument("--kappa-grid", default=",".join(f"{r:g}" for r in cq.KAPPA_GRID))
    o.add_argument("--seq-budget", type=int, default=cq.SEQ_DIRS, help="sampled directions per level")
    o.add_argument("--delta-seq", type=float, default=cq.DELTA_SEQ)
    o.add_argument("--frow", choices=("le", "eq"), default="le")
    o.add_argument("--numeric", action="store_true", help="use the grid solver even for built-in instances")
    o.add_argument("--json", dest="json_path", help="write the report here instead of stdout")
    o.add_argument("-v", "--verbose", action="store_true")
    return p


def _settings(args):
    if args.grid < 3 or args.refine_iters < 0:
        raise UsageError("--grid must be >= 3 and --refine-iters >= 0")
    if not (args.t0 > 0 and 0 < args.beta < 1 and args.K >= 2):
        raise UsageError("schedule needs t0 > 0, 0 < beta < 1, K >= 2")
    if args.seq_budget < 1 or args.delta_seq <= 0:
        raise UsageError("--seq-budget and --delta-seq must be positive")
    cfg = LowerConfig(grid=args.grid, refine_iters=args.refine_iters, cluster_tol=args.cluster_tol,
                      tol_act=args.tol_act, seed=args.seed)
    return Settings(args.tol_act, args.tol_feas, args.tol_row, cfg, args.t0, args.beta, args.K, args.seed,
                    _grid(args.rho_grid), _grid(args.kappa_grid), args.seq_budget, args.delta_seq, args.frow,
                    args.numeric)


def _parameters(args):
    keys = ("x", "y", "dir", "vdir", "w", "box", "tol_act", "tol_feas", "tol_row", "grid", "refine_iters",
            "cluster_tol", "t0", "beta", "K", "seed", "rho_grid", "kappa_grid", "seq_budget", "delta_seq",
            "frow", "numeric", "lambda_v", "lam", "lambda_g", "lambda_G")
    return {k: getattr(args, k) for k in keys}


def _emit(report, path):
    text = dumps(report)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _summary(command, result, ok):
    lines = [f"dirbilevel {command}: {'ok' if ok else 'FAIL rows present'}"]
    if command == "reproduce":
        for r in result["rows"]:
            lines.append(f"  {r['status']}  {r['name']}")
    elif command == "check-cq":
        for name, r in result["results"].items():
            lines.append(f"  {name:16s} {r['verdict'].value if hasattr(r['verdict'], 'value') else r['verdict']}")
    elif command == "dderiv":
        lines.append(f"  lp = {result['lp']['value']:.12g}   fd = {result['fd']['value']:.12g}")
    elif command == "value":
        lines.append(f"  V = {result['V']:.12g}   solutions = {len(result['solutions'])}")
    return "\n".join(lines)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    start = time.perf_counter()
    command = argv[0] if argv else None
    json_path = None
    report = {"schema": SCHEMA, "command": command}
    try:
        args = parser.parse_args(argv)
        json_path = args.json_path
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
        st = _settings(args)
        report["command"] = args.command
        report["parameters"] = _parameters(args)
        if args.command == "reproduce":
            oracles.get_instance(args.problem)
            report["program"] = {"id": args.problem.upper(),
                                 "fingerprint": fingerprint(oracles.get_instance(args.problem).program)}
            result, prov, ok = cmd_reproduce(args.problem, st)
        else:
            problem = load_problem(args.problem, args.box)
            prog = problem.prog
            report["program"] = {"source": problem.source, "fingerprint": fingerprint(prog),
                                 "n": prog.n, "m": prog.m, "p": prog.p, "q": prog.q}
            handler = {"validate": cmd_validate, "value": cmd_value, "dderiv": cmd_dderiv,
                       "subdiff": cmd_subdiff, "cones": cmd_cones, "check-cq": cmd_check_cq,
                       "kkt": cmd_kkt, "calmness": cmd_calmness}[args.command]
            result, prov, ok = handler(problem, args, st)
        report["result"] = result
        report["provenance"] = prov
        code = EXIT_OK if ok else EXIT_FAIL
        summary = _summary(report["command"], result, ok)
    except InputError as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        code, summary = EXIT_INPUT, f"dirbilevel: input error: {exc}"
    except NumericalError as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        code, summary = EXIT_NUMERIC, f"dirbilevel: numerical error: {exc}"
    report["exit_code"] = code
    _emit(report, json_path)
    sys.stderr.write(summary + f"\n  elapsed {time.perf_counter() - start:.2f}s\n")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
