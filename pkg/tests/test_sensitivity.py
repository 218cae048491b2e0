import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference as ref
from conftest import theta_for
from dirbilevel import sensitivity
from dirbilevel.errors import EmptyMultiplierSet
from dirbilevel.exprdsl import parse_program
from dirbilevel.lower import directional_solutions
from dirbilevel.oracles import get_instance
from dirbilevel.sensitivity import Method, dderiv_fd, dderiv_lp, hausdorff, inner_lp, sigma_set, w_set

SQ3 = math.sqrt(3.0)
SHIFT = "dims: n=1 m=1\nF = x1^2\nf = (y1-x1)^2\nbox: y in [-10,10]^1\n"


def lp_value(inst, u):
    u = np.atleast_1d(np.asarray(u, dtype=float))
    ds = directional_solutions(inst.program, inst.xbar, u, lower=inst)
    return dderiv_lp(inst.program, inst.xbar, u, ds)


# ---------------------------------------------------------------------------
# directional derivative


def test_ex51_right_derivative(ex51):
    d = lp_value(ex51, 1.0)
    assert d.method == Method.LP_FORMULA
    assert d.value == pytest.approx(-(2 * SQ3 + 2), abs=1e-12)
    assert d.y == pytest.approx([-SQ3])
    assert d.lam == pytest.approx([1.0, 0.0])
    assert d.residual <= 1e-8 and not d.guard_active


def test_ex51_derivative_along_sqrt3(ex51):
    d = lp_value(ex51, SQ3)
    assert d.value == pytest.approx(-(6 + 2 * SQ3), abs=1e-12)
    assert d.v == pytest.approx([-1.0], abs=1e-12)


def test_zero_direction_gives_zero(ex51, ex31):
    assert lp_value(ex51, 0.0).value == 0.0
    assert lp_value(ex31, 0.0).value == 0.0


def test_inner_lp_by_hand(ex51):
    # max{-2 sqrt3 + 4 l1 - 6 : 0 <= l1 <= 1} after eliminating l2 = 2 sqrt3 (1 - l1)
    piece = inner_lp(ex51.program, [0.0], [-SQ3], [1.0])
    best = max(-2 * SQ3 - 2 * l1 - SQ3 * 2 * SQ3 * (1 - l1) for l1 in np.linspace(0, 1, 101))
    assert piece.dual_value == pytest.approx(best, abs=1e-12)
    assert piece.gap <= 1e-12


def test_empty_multiplier_set_is_an_error():
    prog = parse_program("dims: n=1 m=1\nF = x1\nf = y1\ng = [ y1 - 1 ]\nbox: y in [-2,2]^1\n")
    with pytest.raises(EmptyMultiplierSet):
        inner_lp(prog, [0.0], [0.0], [1.0])


@pytest.mark.parametrize("ident, u, expected", [
    ("EX31", 1.0, 0.0),
    ("EX31", -1.0, 0.0),
    ("EX51", 1.0, -(2 * SQ3 + 2)),
    ("EX51", -1.0, -(2 * SQ3 - 2)),
])
def test_finite_differences_match_closed_forms_and_lp(ident, u, expected):
    inst = get_instance(ident)
    fd = dderiv_fd(inst, inst.xbar, [u])
    assert fd.method == Method.FINITE_DIFF
    assert fd.value == pytest.approx(expected, abs=1e-3)
    assert lp_value(inst, u).value == pytest.approx(fd.value, abs=max(1e-3, 1e-3 * abs(fd.value)))


def test_finite_differences_from_reference_closed_form():
    # quotients of the independent closed form, extrapolated by hand
    ts = 1e-2 * 0.5 ** np.arange(12)
    q = np.array([(ref.ex51_value(t) - ref.ex51_value(0.0)) / t for t in ts])
    r1 = (q[1:] - 0.5 * q[:-1]) / 0.5
    assert r1[-1] == pytest.approx(-(2 * SQ3 + 2), abs=1e-6)
    assert q[-1] == pytest.approx(dderiv_fd(get_instance("EX51"), [0.0], [1.0]).value, abs=1e-4)


def test_ex31_quotients_are_minus_two_t_squared(ex31):
    fd = dderiv_fd(ex31, [0.0], [1.0], K=6)
    ts = 0.1 * 0.5 ** np.arange(6)
    # V(t) - V(0) cancels against the constant -1, costing about eps / t
    assert fd.quotients == pytest.approx(-2 * ts**2, abs=1e-16 / ts[-1] * 10)


# ---------------------------------------------------------------------------
# Sigma and W


def test_sigma_contains_minus_one(ex51):
    sig = sigma_set(ex51.program, [0.0], [-SQ3], [SQ3], ex51.vprime(SQ3))
    assert [-1.0] in sig.directions.round(12).tolist()
    assert not sig.guard_active


def test_sigma_is_empty_at_a_non_attaining_solution(ex51):
    # at +sqrt3 the inner value for u > 0 exceeds V'
    sig = sigma_set(ex51.program, [0.0], [SQ3], [1.0], ex51.vprime(1.0))
    assert sig.directions.shape[0] == 0


def test_sigma_degenerates_to_the_guard_box_when_f_is_flat_in_v():
    # grad_y f = 0, so every v is optimal; the optimal face is the guard box
    sig = sigma_set(parse_program(SHIFT), [0.0], [0.0], [1.0], 0.0)
    assert sorted(sig.directions[:, 0]) == [-sensitivity.V_GUARD, sensitivity.V_GUARD]
    assert sig.guard_active


def test_ex51_w_singleton(ex51):
    W = w_set(ex51.program, [0.0], [-SQ3], [SQ3], [-1.0])
    assert W.polytope.vertices.shape == (1, 1)
    assert W.polytope.vertices[0, 0] == pytest.approx(-2 * SQ3 - 2, abs=1e-12)
    assert W.bounded


def test_w_without_lower_constraints_is_grad_x_f():
    prog = parse_program("dims: n=1 m=1\nF = x1^2\nf = (y1-x1)^2 + 3*x1\nbox: y in [-10,10]^1\n")
    W = w_set(prog, [0.0], [0.0], [1.0], [1.0])
    assert W.polytope.vertices.tolist() == [[3.0]]


def test_w_is_invariant_over_degenerate_sigma():
    prog = parse_program(SHIFT)
    sig = sigma_set(prog, [0.0], [0.0], [1.0], 0.0)
    assert sensitivity.w_invariance(prog, [0.0], [0.0], [1.0], sig.directions) == 0.0


def test_nonorthogonal_rows_uses_scaled_tolerance():
    jac = np.array([[1.0, 1.0], [1.0, -1.0], [1e-14, 0.0]])
    assert sensitivity.nonorthogonal_rows(jac, [1.0], [1.0]) == (0,)


def test_hausdorff_examples():
    assert hausdorff([[0.0]], [[0.0], [2.0]]) == 2.0
    assert hausdorff(np.zeros((0, 1)), np.zeros((0, 1))) == 0.0
    assert hausdorff(np.zeros((0, 1)), [[1.0]]) == np.inf


# ---------------------------------------------------------------------------
# Theta


def test_theta_singleton_along_sqrt3(ex51):
    th = theta_for(ex51, SQ3)
    assert th.hull.vertices.ravel() == pytest.approx([-2 * SQ3 - 2], abs=1e-12)
    assert th.bounded and th.invariance == 0.0


def test_theta_of_a_smooth_value_function_is_its_gradient():
    prog = parse_program(SHIFT)

    class Shift:
        exact = True

        def value(self, x):
            return 0.0

        def solutions(self, x):
            return np.atleast_1d(np.asarray(x, float)).reshape(1, 1)

    ds = directional_solutions(prog, [0.0], [0.0], lower=Shift())
    th = sensitivity.theta_set(prog, [0.0], [0.0], ds)
    assert th.hull.vertices.tolist() == [[0.0]]


def test_theta_at_zero_direction_has_two_components(ex51):
    th = theta_for(ex51, 0.0)
    assert len(th.components) == 2
    assert sorted(c.y[0] for c in th.components) == pytest.approx([-SQ3, SQ3])
    lo, hi = th.hull.vertices.min(), th.hull.vertices.max()
    # one-sided slopes of the closed-form value function at 0
    for h in (1e-4, -1e-4, 1e-6, -1e-6):
        slope = (ref.ex51_value(h) - ref.ex51_value(0.0)) / h
        assert lo - 1e-3 <= slope <= hi + 1e-3


def test_theta_hull_vertices_come_from_components(ex51):
    th = theta_for(ex51, 0.0)
    union = np.vstack([c.w.polytope.vertices for c in th.components])
    for v in th.hull.vertices:
        assert np.min(np.abs(union - v).max(axis=1)) <= 1e-12


# ---------------------------------------------------------------------------
# properties

directions = st.floats(-3.0, 3.0, allow_nan=False).filter(lambda u: abs(u) > 1e-6)


@settings(max_examples=60, deadline=None)
@given(directions, st.sampled_from(["EX31", "EX51"]))
def test_primal_and_dual_inner_values_agree(u, ident):
    d = lp_value(get_instance(ident), u)
    for piece in d.pieces:
        assert piece.gap <= sensitivity.TOL_DUALITY
    assert d.value == min(p.dual_value for p in d.pieces)


@settings(max_examples=60, deadline=None)
@given(directions, st.floats(1e-3, 1e3), st.sampled_from(["EX31", "EX51"]))
def test_lp_derivative_is_positively_homogeneous(u, alpha, ident):
    inst = get_instance(ident)
    a = lp_value(inst, u).value
    b = lp_value(inst, alpha * u).value
    assert b == pytest.approx(alpha * a, abs=1e-9 * max(1.0, abs(alpha * a)))


@settings(max_examples=40, deadline=None)
@given(directions, st.sampled_from(["EX31", "EX51"]))
def test_lp_derivative_matches_closed_form(u, ident):
    inst = get_instance(ident)
    assert lp_value(inst, u).value == pytest.approx(inst.vprime(u), abs=1e-9 * max(1.0, abs(u)))


@settings(max_examples=40, deadline=None)
@given(directions, st.sampled_from(["EX31", "EX51"]))
def test_w_is_invariant_on_sigma(u, ident):
    th = theta_for(get_instance(ident), u)
    assert th.invariance <= 1e-8
