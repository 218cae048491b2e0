import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference as ref
from dirbilevel import lower
from dirbilevel.errors import BoxMissing, NoFeasiblePoint
from dirbilevel.exprdsl import parse_program
from dirbilevel.lower import LowerConfig, NumericLower, Verdict, check_hypotheses, directional_solutions, \
    multiplier_set, solve_lower
from dirbilevel.lpkernel import enumerate_vertices, feasible_point

SQ3 = math.sqrt(3.0)
SHIFT = "dims: n=1 m=1\nF = x1^2\nf = (y1-x1)^2\nbox: y in [-10,10]^1\n"


# ---------------------------------------------------------------------------
# solve_lower


def test_ex31_positive_x(ex31):
    res = solve_lower(ex31.program, [0.5])
    assert res.value == pytest.approx(-1.25, abs=1e-6)
    assert res.solutions.shape == (1, 1)
    assert res.solutions[0, 0] == pytest.approx(-1.5, abs=1e-6)


def test_ex51_two_clusters_at_zero(ex51):
    res = solve_lower(ex51.program, [0.0])
    assert res.value == pytest.approx(-2.0, abs=1e-6)
    assert sorted(res.solutions[:, 0]) == pytest.approx([-SQ3, SQ3], abs=1e-6)
    assert len(res.multipliers) == 2


@pytest.mark.parametrize("x", [-3.0, 0.0, 4.2])
def test_unconstrained_shift(x):
    res = solve_lower(parse_program(SHIFT), [x])
    assert res.value == pytest.approx(0.0, abs=1e-12)
    assert res.solutions[:, 0] == pytest.approx([x], abs=1e-6)


def test_solutions_are_feasible_and_optimal(ex51):
    prog = ex51.program
    for x in (-0.7, 0.0, 0.3, 2.5):
        res = solve_lower(prog, [x])
        assert res.value <= res.grid_min + 1e-12
        for y in res.solutions:
            fv, gv = prog.lower_rows([x], list(y))
            assert all(g <= 1e-9 for g in gv)
            assert fv == pytest.approx(res.value, abs=1e-7 * max(1.0, abs(res.value)))


def test_infeasible_and_missing_box(ex51):
    with pytest.raises(NoFeasiblePoint):
        solve_lower(ex51.program, [5.0])
    with pytest.raises(BoxMissing):
        solve_lower(parse_program("dims: n=1 m=1\nF = x1\nf = y1^2\n"), [0.0])


@pytest.mark.parametrize("which", ["ex31", "ex51"])
def test_value_matches_independent_oracles_off_grid(which, request):
    inst = request.getfixturevalue(which)
    f, g = getattr(ref, which + "_lower")()
    closed = getattr(ref, which + "_value")
    for x in np.linspace(-0.9, 0.9, 7):
        got = solve_lower(inst.program, [x]).value
        assert got == pytest.approx(closed(x), abs=1e-6)
        # dense sampling resolves a curved boundary minimum only to |grad_y f| * spacing
        assert got == pytest.approx(ref.dense_value(f, g, x, -3.0, 3.0)[0], abs=1e-4)


# ---------------------------------------------------------------------------
# multiplier sets


def test_ex51_multiplier_set(ex51):
    lam = multiplier_set(ex51.program, [0.0], [-SQ3])
    P = enumerate_vertices(lam)
    got = sorted(map(tuple, P.vertices.round(10)))
    assert got == sorted([(1.0, 0.0), (0.0, round(2 * SQ3, 10))])


def test_unconstrained_stationary_point_has_empty_dimension_multiplier():
    lam = multiplier_set(parse_program(SHIFT), [1.0], [1.0])
    assert lam.r == 0
    assert feasible_point(lam) is not None


def test_nonstationary_point_without_active_rows_is_infeasible():
    prog = parse_program("dims: n=1 m=1\nF = x1\nf = y1\ng = [ y1 - 1 ]\nbox: y in [-2,2]^1\n")
    assert feasible_point(multiplier_set(prog, [0.0], [0.0])) is None


def test_multipliers_exist_at_ex51_solutions(ex51):
    for x in (-0.5, 0.0, 0.5, 1.5):
        res = solve_lower(ex51.program, [x])
        for y, lam in zip(res.solutions, res.multipliers):
            # grid solutions sit within ~1e-12 of the arc; active set needs that slack
            lam_loose = multiplier_set(ex51.program, [x], y, tol_act=1e-8)
            assert feasible_point(lam_loose) is not None, (x, y)


# ---------------------------------------------------------------------------
# directional solution sets


def test_ex51_right_direction(ex51):
    ds = directional_solutions(ex51.program, [0.0], [1.0], lower=ex51)
    assert ds.points[:, 0] == pytest.approx([-SQ3])


def test_ex51_left_direction(ex51):
    ds = directional_solutions(ex51.program, [0.0], [-1.0], lower=ex51)
    assert ds.points[:, 0] == pytest.approx([SQ3])


def test_zero_direction_returns_all_solutions(ex51):
    ds = directional_solutions(ex51.program, [0.0], [0.0], lower=ex51)
    assert sorted(ds.points[:, 0]) == pytest.approx([-SQ3, SQ3])


def test_numeric_solver_agrees_with_oracle_on_directional_set(ex51):
    ds = directional_solutions(ex51.program, [0.0], [1.0], lower=NumericLower(ex51.program))
    assert ds.points[:, 0] == pytest.approx([-SQ3], abs=1e-6)
    rep = ds.representatives[0]
    assert rep.dist[-1] <= 1e-3 * 6


def test_direction_scaling_does_not_change_directional_set(ex51):
    for u in (1e-3, 1.0, 50.0):
        ds = directional_solutions(ex51.program, [0.0], [u], lower=ex51)
        assert ds.points[:, 0] == pytest.approx([-SQ3])


@settings(max_examples=40, deadline=None)
@given(st.floats(-1.0, 1.0).filter(lambda u: abs(u) > 1e-3), st.sampled_from(["EX31", "EX51"]))
def test_directional_set_is_inside_solution_set(u, ident):
    from dirbilevel.oracles import get_instance
    inst = get_instance(ident)
    ds = directional_solutions(inst.program, inst.xbar, [u], lower=inst)
    base = inst.solutions(inst.xbar)
    assert len(ds.points) >= 1
    for y in ds.points:
        assert np.min(np.linalg.norm(base - y, axis=1)) <= 1e-9


# ---------------------------------------------------------------------------
# hypotheses


def _isc_at(report, y):
    for ybar, hv in report.inner_semicontinuity:
        if abs(ybar[0] - y) < 1e-9:
            return hv
    raise AssertionError(f"no verdict for {y}")


def test_inner_semicontinuity_evidence_for_positive_direction(ex51):
    rep = check_hypotheses(ex51.program, [0.0], [1.0], lower=ex51)
    assert _isc_at(rep, -SQ3).verdict == Verdict.EVIDENCE


def test_inner_semicontinuity_violated_for_zero_direction(ex51):
    rep = check_hypotheses(ex51.program, [0.0], [0.0], lower=ex51)
    hv = _isc_at(rep, -SQ3)
    assert hv.verdict == Verdict.VIOLATED
    # witness from x < 0, where the only solution is near +sqrt(3)
    assert hv.witness["t"] * hv.witness["u"][0] < 0
    assert hv.witness["solutions"][0, 0] > 1.0


def test_compact_feasible_set_gives_inf_compactness_evidence():
    prog = parse_program("dims: n=1 m=1\nF = x1\nf = (y1-x1)^2\ng = [ y1^2 - 1 ]\nbox: y in [-3,3]^1\n")
    rep = check_hypotheses(prog, [0.0], [1.0], lower=NumericLower(prog))
    assert rep.restricted_inf_compactness.verdict == Verdict.EVIDENCE
    assert rep.omega_is_box


def test_box_binding_solution_is_inconclusive():
    prog = parse_program("dims: n=1 m=1\nF = x1\nf = y1\nbox: y in [-1,1]^1\n")
    rep = check_hypotheses(prog, [0.0], [1.0], lower=NumericLower(prog, LowerConfig(grid=41)))
    assert rep.restricted_inf_compactness.verdict == Verdict.INCONCLUSIVE
    assert rep.restricted_inf_compactness.witness["y"][0] == pytest.approx(-1.0)


def test_verdict_polarity():
    assert Verdict.HOLDS.positive and Verdict.EVIDENCE.positive
    assert Verdict.FAILS.negative and Verdict.VIOLATED.negative
    assert not Verdict.INCONCLUSIVE.positive and not Verdict.INCONCLUSIVE.negative


def test_grid_is_capped_in_higher_dimensions():
    assert lower._axis_counts(3, 401) ** 3 <= lower.MAX_GRID_POINTS
    assert lower._axis_counts(1, 401) == 401


def test_unconstrained_nonstationary_point_has_empty_multiplier_set():
    assert feasible_point(multiplier_set(parse_program(SHIFT), [1.0], [0.5])) is None
