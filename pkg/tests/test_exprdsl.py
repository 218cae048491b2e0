import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

import reference as ref
from dirbilevel import exprdsl
from dirbilevel.errors import DimensionError, DomainError, ExponentError, ProblemSyntaxError
from dirbilevel.exprdsl import Add, Const, Func, Neg, Pow, Var, eval_dual, evaluate, parse_expr, parse_program
from dirbilevel.oracles import EX31_TEXT, EX51_TEXT

SQ3 = math.sqrt(3.0)


# ---------------------------------------------------------------------------
# parsing


def test_parse_ex31_program():
    prog = parse_program(EX31_TEXT)
    assert (prog.n, prog.m, prog.q, prog.p) == (1, 1, 2, 2)
    lo, hi = prog.y_box
    assert lo.tolist() == [-3.0] and hi.tolist() == [3.0]


def test_constant_program_without_constraints():
    prog = parse_program("dims: n=1 m=1\nF = 0\n")
    assert prog.p == 0 and prog.q == 0
    assert isinstance(prog.f, Const) and prog.f.value == 0.0


def test_dimension_error_for_out_of_range_variable():
    with pytest.raises(DimensionError):
        parse_program("dims: n=1 m=2\nF = y3\n")


def test_even_denominator_needs_nonnegative_base():
    with pytest.raises(ExponentError):
        parse_expr("x1^(1/2)")
    node = parse_expr("abs(x1)^(1/2)")
    assert evaluate(node, [-4.0], []) == pytest.approx(2.0)


def test_syntax_error_reports_location():
    with pytest.raises(ProblemSyntaxError) as exc:
        parse_program("dims: n=1 m=1\nF = x1 +* y1\n")
    assert exc.value.line == 2


def test_missing_dims_and_objective():
    with pytest.raises(ProblemSyntaxError):
        parse_program("F = x1\n")
    with pytest.raises(ProblemSyntaxError):
        parse_program("dims: n=1 m=1\nf = x1\n")


def test_power_is_right_associative_and_binds_tighter_than_unary_minus():
    assert parse_expr("2^3^2") == Pow(Const(2.0), 9)
    assert evaluate(parse_expr("2^3^2"), [], []) == 512.0
    assert evaluate(parse_expr("-2^2"), [], []) == -4.0


def test_multiline_constraint_list_and_comments():
    text = "dims: n=1 m=1  # sizes\nF = x1\ng = [ y1 - 1 ;\n      -y1 - 1 ]\n"
    prog = parse_program(text)
    assert prog.p == 2


def test_pow_exponents_are_reduced():
    node = parse_expr("x1^(10/6)")
    assert isinstance(node, Pow) and (node.p, node.q) == (5, 3)
    with pytest.raises(ExponentError):
        Pow(Var("x", 1), 2, 4)


# ---------------------------------------------------------------------------
# evaluation


def test_signed_power_of_negative_base():
    node = parse_expr("(x1-y1-1)^(5/3)")
    assert evaluate(node, [-1.0], [0.0]) == pytest.approx(-(2 ** (5 / 3)), abs=1e-12)
    assert evaluate(node, [-1.0], [0.0]) == pytest.approx(-3.17480, abs=1e-5)


def test_simple_values():
    assert evaluate(parse_expr("x1^2"), [0.0], [0.0]) == 0.0
    assert evaluate(parse_expr("sqrt(4-(x1-1)^2)"), [0.0], [0.0]) == pytest.approx(SQ3)
    assert evaluate(parse_expr("sqrt(4-(x1-1)^2)"), [1.0], [0.0]) == 2.0


@pytest.mark.parametrize("text, x", [("log(x1)", 0.0), ("1/x1", 0.0), ("sqrt(x1)", -1.0), ("log(x1 - 1)", 0.5)])
def test_domain_errors(text, x):
    with pytest.raises(DomainError):
        evaluate(parse_expr(text), [x], [0.0])


def test_gradients_of_ex51_at_reference_point():
    prog = parse_program(EX51_TEXT)
    x, y = [0.0], [-SQ3]
    assert eval_dual(prog.F, x, y).derivs == pytest.approx([1.0, SQ3], abs=1e-12)
    assert eval_dual(prog.f, x, y).derivs == pytest.approx([-2 * SQ3, 2 * SQ3], abs=1e-12)


def test_constant_gradient_is_zero():
    d = eval_dual(parse_expr("3.5"), [1.0, 2.0], [3.0])
    assert d.derivs.tolist() == [0.0, 0.0, 0.0]


def test_abs_kink_flag():
    d = eval_dual(parse_expr("abs(x1)"), [0.0], [0.0])
    assert d.kink and d.derivs.tolist() == [0.0, 0.0]
    assert not eval_dual(parse_expr("abs(x1)"), [1.0], [0.0]).kink


def test_polynomial_gradient_is_exact():
    # d/dx (x^3 y - 2 x y^2) = 3x^2 y - 2 y^2 at (2, 3): 36 - 18
    d = eval_dual(parse_expr("x1^3*y1 - 2*x1*y1^2"), [2.0], [3.0])
    assert d.derivs.tolist() == [18.0, 8.0 - 24.0]


def test_compiled_rows_match_scalar_evaluation():
    prog = parse_program(EX31_TEXT)
    xs = np.linspace(-0.9, 0.9, 7)
    ys = np.linspace(-1.5, 1.5, 7)
    F, G = prog.upper_rows([xs], [ys])
    for i in range(7):
        assert F[i] == pytest.approx(evaluate(prog.F, [xs[i]], [ys[i]]), rel=1e-13, abs=1e-13)
        assert G[0][i] == pytest.approx(evaluate(prog.G[0], [xs[i]], [ys[i]]))


# ---------------------------------------------------------------------------
# properties

_leaf = st.one_of(
    st.sampled_from(["x1", "x2", "y1"]),
    st.integers(1, 9).map(str),
    st.tuples(st.integers(1, 9), st.integers(2, 9)).map(lambda t: f"{t[0]}/{t[1]}"),
)


def _extend(children):
    return st.one_of(
        st.tuples(children, children).map(lambda t: f"({t[0]} + {t[1]})"),
        st.tuples(children, children).map(lambda t: f"({t[0]} - {t[1]})"),
        st.tuples(children, children).map(lambda t: f"({t[0]} * {t[1]})"),
        st.tuples(children, children).map(lambda t: f"({t[0]} / (1 + ({t[1]})^2))"),
        st.tuples(children, st.sampled_from(["2", "3", "(1/3)", "(5/3)", "(-1)"])).map(lambda t: f"({t[0]})^{t[1]}"),
        children.map(lambda c: f"sin({c})"),
        children.map(lambda c: f"exp(cos({c}))"),
        children.map(lambda c: f"sqrt(1 + ({c})^2)"),
        children.map(lambda c: f"-({c})"),
    )


expressions = st.recursive(_leaf, _extend, max_leaves=8)
points = st.lists(st.floats(-2, 2, allow_nan=False), min_size=3, max_size=3)


@settings(max_examples=150, deadline=None)
@given(expressions)
def test_parse_unparse_round_trip(text):
    node = parse_expr(text)
    again = parse_expr(exprdsl.unparse(node))
    assert again == node


@settings(max_examples=150, deadline=None)
@given(expressions, points)
def test_forward_mode_matches_central_differences(text, z):
    node = parse_expr(text)
    z = np.array(z)
    x, y = z[:2], z[2:]
    try:
        assume(not _near_singularity(node, x, y))
        dual = eval_dual(node, x, y)
        fd = ref.central_difference(lambda w: evaluate(node, w[:2], w[2:]), z)
    except DomainError:
        assume(False)
    assume(np.all(np.abs(dual.derivs) < 1e6))
    assert np.max(np.abs(dual.derivs - fd) / np.maximum(1.0, np.abs(dual.derivs))) <= 1e-6


def _near_singularity(node, x, y):
    stack = [node]
    while stack:
        e = stack.pop()
        if isinstance(e, Pow) and not (e.q == 1 and e.p >= 0) and abs(evaluate(e.base, x, y)) < 0.05:
            return True
        stack.extend(exprdsl._children(e))
    return False


@settings(max_examples=100, deadline=None)
@given(expressions, points, st.sampled_from([(1, 3), (5, 3), (3, 5), (7, 3)]))
def test_signed_power_is_odd_for_odd_numerator(text, z, pq):
    p, q = pq
    base = parse_expr(text)
    try:
        lhs = evaluate(Pow(base, p, q), z[:2], z[2:])
        rhs = evaluate(Pow(Neg(base), p, q), z[:2], z[2:])
    except DomainError:
        assume(False)
    assert lhs == pytest.approx(-rhs, rel=1e-12, abs=1e-300)


def test_program_round_trip_through_canonical_text():
    for text in (EX31_TEXT, EX51_TEXT, "dims: n=1 m=1\nF = 0\n"):
        prog = parse_program(text)
        again = parse_program(prog.canonical_text())
        assert (again.F, again.f, again.G, again.g) == (prog.F, prog.f, prog.G, prog.g)
        assert again.canonical_text() == prog.canonical_text()


def test_structural_helpers():
    assert exprdsl.variables(parse_expr("x1 + y2*x1")) == {("x", 1), ("y", 2)}
    assert exprdsl.is_affine(parse_expr("-y1-x1-1"))
    assert not exprdsl.is_affine(parse_expr("(x1-1)^2 + y1^2 - 4"))
    assert isinstance(parse_expr("x1 + 1"), Add)
    assert isinstance(parse_expr("abs(x1)"), Func)


def test_power_overflow_is_a_domain_error():
    with pytest.raises(DomainError):
        evaluate(parse_expr("x1^(7/3)"), [-1e142], [])
    with pytest.raises(DomainError):
        evaluate(parse_expr("x1^(7/3)"), [1e142], [])
