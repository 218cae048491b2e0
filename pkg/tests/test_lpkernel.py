import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference as ref
from dirbilevel.errors import DimensionTooLarge
from dirbilevel.lpkernel import (LPStatus, Polyhedron, Polytope, Sense, TOL_FEAS, enumerate_vertices, feasible_point,
                                 hull_vertices, solve_lp, zero_in_convex_hull)

SQ3 = math.sqrt(3.0)


def ex51_lambda():
    # 2 sqrt3 - 2 sqrt3 l1 - l2 = 0, l >= 0
    return Polyhedron.from_rows(2, A=[[2 * SQ3, 1.0]], b=[2 * SQ3], C=-np.eye(2), d=np.zeros(2))


def test_ex51_inner_maximum():
    res = solve_lp(ex51_lambda(), [-2.0, -SQ3], Sense.MAX)
    assert res.status == LPStatus.OPTIMAL
    # objective (-2 sqrt3 - 2 l1 - sqrt3 l2) u at u = 1, up to the constant
    assert res.value - 2 * SQ3 == pytest.approx(-(2 * SQ3 + 2), abs=1e-12)
    assert res.x == pytest.approx([1.0, 0.0], abs=1e-12)


def test_dual_certificate_of_optimal_solution():
    poly = ex51_lambda()
    c = np.array([-2.0, -SQ3])
    res = solve_lp(poly, c, Sense.MAX)
    # MAX: c = -(A^T y_eq - C^T y_ineq) sign-flipped, y_ineq <= 0
    assert np.all(res.dual_ineq <= 1e-12)
    assert poly.A.T @ res.dual_eq - poly.C.T @ res.dual_ineq == pytest.approx(c, abs=1e-9)


def test_empty_system():
    res = solve_lp(Polyhedron.from_rows(0), np.zeros(0))
    assert res.status == LPStatus.OPTIMAL and res.value == 0.0
    assert feasible_point(Polyhedron.from_rows(0)).shape == (0,)


def test_unbounded():
    res = solve_lp(Polyhedron.nonnegative_orthant(1), [1.0], Sense.MAX)
    assert res.status == LPStatus.UNBOUNDED and res.value == np.inf
    assert res.ray[0] > 0


def test_infeasible():
    poly = Polyhedron.from_rows(1, A=[[1.0]], b=[1.0], C=[[1.0]], d=[0.0])
    assert feasible_point(poly) is None
    assert solve_lp(poly, [1.0]).status == LPStatus.INFEASIBLE


def test_feasible_point_of_lambda():
    lam = feasible_point(ex51_lambda())
    assert lam is not None
    assert 2 * SQ3 - 2 * SQ3 * lam[0] - lam[1] == pytest.approx(0.0, abs=1e-12)
    assert np.all(lam >= -TOL_FEAS)


def test_vertices_of_lambda():
    P = enumerate_vertices(ex51_lambda())
    assert P.bounded
    got = sorted(map(tuple, P.vertices.round(12)))
    assert got == sorted([(1.0, 0.0), (0.0, round(2 * SQ3, 12))])


def test_vertices_of_simplex():
    P = enumerate_vertices(Polyhedron.from_rows(3, A=np.ones((1, 3)), b=[1.0], C=-np.eye(3), d=np.zeros(3)))
    assert sorted(map(tuple, P.vertices)) == [(0.0, 0.0, 1.0), (0.0, 1.0, 0.0), (1.0, 0.0, 0.0)]
    assert P.bounded


def test_half_line_has_vertex_and_ray():
    P = enumerate_vertices(Polyhedron.nonnegative_orthant(1))
    assert P.vertices.tolist() == [[0.0]]
    assert P.rays.tolist() == [[1.0]]
    assert not P.bounded


def test_dimension_guard():
    with pytest.raises(DimensionTooLarge):
        enumerate_vertices(Polyhedron.nonnegative_orthant(9))


def test_zero_in_hull_examples():
    ok, mu = zero_in_convex_hull(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]))
    assert ok and mu.sum() == pytest.approx(1.0)
    ok, a = zero_in_convex_hull(np.array([[1.0, 1.0], [2.0, 1.0]]))
    assert not ok
    assert np.all(np.array([[1.0, 1.0], [2.0, 1.0]]) @ a > TOL_FEAS)
    ok, mu = zero_in_convex_hull(np.zeros((1, 3)))
    assert ok and mu.tolist() == [1.0]


def test_hull_vertices_drop_interior_points():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.2, 0.2], [0.5, 0.5]])
    hv = hull_vertices(pts)
    assert sorted(map(tuple, hv)) == [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0)]


def test_polytope_affine_image_and_dedup():
    P = Polytope.from_points([[0.0, 0.0], [1.0, 1.0], [1.0, 1.0 + 1e-12]])
    assert P.vertices.shape == (2, 2)
    img = P.affine_image(np.array([[1.0, -1.0]]), [2.0])
    assert img.vertices.tolist() == [[2.0]]


def test_violation_is_scaled():
    poly = Polyhedron.from_rows(1, C=[[1.0]], d=[0.0])
    assert poly.violation([0.0]) == 0.0
    assert poly.violation([1.0]) > 0
    assert poly.contains([1e-12])


# ---------------------------------------------------------------------------
# properties


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_lp_matches_basic_solution_enumeration(seed):
    A, b, C, d, c = ref.random_lp(np.random.default_rng(seed))
    r = C.shape[1]
    res = solve_lp(Polyhedron.from_rows(r, A=A, b=b, C=C, d=d), c)
    bf = ref.brute_force_min(A, b, C, d, c)
    if res.status == LPStatus.OPTIMAL:
        if bf is not None:
            assert res.value == pytest.approx(bf, abs=1e-9)
    elif res.status == LPStatus.INFEASIBLE:
        assert bf is None
    else:
        # unbounded: the ray improves the objective and recedes in the polyhedron
        assert c @ res.ray < 0
        assert np.allclose(A @ res.ray, 0, atol=1e-9) and np.all(C @ res.ray <= 1e-9)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_zero_in_hull_certificates(seed):
    rng = np.random.default_rng(seed)
    J, k = int(rng.integers(1, 7)), int(rng.integers(1, 4))
    pts = rng.normal(size=(J, k)) + rng.normal(size=k) * rng.uniform(0, 3)
    ok, info = zero_in_convex_hull(pts)
    if ok:
        assert np.all(info >= 0) and info.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.max(np.abs(info @ pts)) <= 1e-8
    else:
        assert np.all(pts @ info > TOL_FEAS)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_vertex_enumeration_round_trip(seed):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, 4))
    # bounded by construction: random cuts plus a box
    C = np.vstack([rng.integers(-3, 4, (int(rng.integers(0, 3)), r)), np.eye(r), -np.eye(r)]).astype(float)
    d = np.concatenate([rng.uniform(0.5, 2, C.shape[0] - 2 * r), 2 * np.ones(2 * r)])
    poly = Polyhedron.from_rows(r, C=C, d=d)
    P = enumerate_vertices(poly)
    assert P.bounded and not P.empty
    c = rng.normal(size=r)
    assert np.max(P.vertices @ c) == pytest.approx(solve_lp(poly, c, Sense.MAX).value, abs=1e-9)
    for v in P.vertices:
        assert poly.contains(v)


def test_zero_dimensional_rows_are_kept():
    # 0 = 1 has no solution even though there are no unknowns
    poly = Polyhedron.from_rows(0, A=np.zeros((1, 0)), b=[1.0])
    assert poly.A.shape == (1, 0)
    assert feasible_point(poly) is None
    assert feasible_point(Polyhedron.from_rows(0, A=np.zeros((1, 0)), b=[0.0])) is not None
