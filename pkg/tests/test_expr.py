import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from occlp.expr import (ExpressionDomainError, ExpressionSyntaxError, MomentsRequired,
                        UnknownIdentifier, compile_rpn, evaluate_on, parse_expression)
from occlp._kernels_py import eval_program


def ev(src, *x, m=None):
    return float(parse_expression(src).evaluate(np.array(x, dtype=float), m))


def test_logistic_drift_at_half():
    assert ev("x1*(1-x1)", 0.5) == 0.25


def test_constant_zero():
    assert ev("0", 3.7) == 0.0


def test_gaussian_kernel_at_one():
    assert ev("exp(-x1^2/2)", 1.0) == pytest.approx(math.exp(-0.5), abs=1e-9)
    assert ev("exp(-x1^2/2)", 1.0) == pytest.approx(0.6065306597, abs=1e-9)


@pytest.mark.parametrize("src, x, expected", [
    ("-x1^2", 3.0, -9.0),
    ("2^3^2", 0.0, 512.0),
    ("8/4/2", 0.0, 1.0),
    ("10-4-3", 0.0, 3.0),
    ("1+2*3", 0.0, 7.0),
    ("-2*3", 0.0, -6.0),
    ("x1**2", 4.0, 16.0),
    ("min(x1, 2, -1)", 5.0, -1.0),
    ("max(x1, 2)", 5.0, 5.0),
    ("abs(-x1)", 2.5, 2.5),
    ("sqrt(x1)", 9.0, 3.0),
    ("log(exp(x1))", 1.5, 1.5),
    ("1.5e-3*1000", 0.0, 1.5),
])
def test_precedence_and_associativity(src, x, expected):
    assert ev(src, x) == pytest.approx(expected, rel=1e-15)


def test_two_dimensional_variables():
    assert ev("x1*x2 - x2", 2.0, 5.0) == 5.0


def test_moments():
    node = parse_expression("1 + 0.1*m1")
    assert node.uses_moments()
    assert float(node.evaluate(np.array([0.3]), m=[2.0])) == pytest.approx(1.2)
    with pytest.raises(MomentsRequired):
        node.evaluate(np.array([0.3]))


def test_syntax_error_reports_byte_offset():
    with pytest.raises(ExpressionSyntaxError) as exc:
        parse_expression("x1 + * 2")
    assert exc.value.offset == 5
    with pytest.raises(ExpressionSyntaxError) as exc:
        parse_expression("σ + x1")
    assert exc.value.offset == 0
    with pytest.raises(ExpressionSyntaxError):
        parse_expression("(x1 + 1")
    with pytest.raises(ExpressionSyntaxError):
        parse_expression("")


def test_unknown_identifiers():
    with pytest.raises(UnknownIdentifier):
        parse_expression("y1 + 1")
    with pytest.raises(UnknownIdentifier):
        parse_expression("sin(x1)")
    with pytest.raises(UnknownIdentifier):
        parse_expression("x3", dim=2)


def test_domain_errors():
    with pytest.raises(ExpressionDomainError):
        ev("log(x1)", 0.0)
    with pytest.raises(ExpressionDomainError):
        ev("sqrt(x1)", -1.0)
    with pytest.raises(ExpressionDomainError):
        ev("1/x1", 0.0)


def test_evaluate_on_broadcasts_constants():
    X = np.zeros((4, 2))
    out = evaluate_on(parse_expression("3"), X)
    assert out.shape == (4,)
    assert np.all(out == 3.0)


# grammar-generated expressions for the round-trip property

_leaf = st.one_of(
    st.sampled_from(["x1", "x2", "m1"]),
    st.floats(0, 100, allow_nan=False).map(repr),
    st.integers(0, 5).map(str),
)


def _compound(inner):
    return st.one_of(
        st.tuples(inner, st.sampled_from(["+", "-", "*", "/", "^"]), inner)
        .map(lambda t: f"({t[0]}{t[1]}{t[2]})"),
        inner.map(lambda s: f"-{s}"),
        inner.map(lambda s: f"exp({s})"),
        st.tuples(inner, inner).map(lambda t: f"max({t[0]},{t[1]})"),
        st.tuples(inner, inner).map(lambda t: f"min({t[0]}, {t[1]})"),
        inner.map(lambda s: f"abs({s})"),
    )


expressions = st.recursive(_leaf, _compound, max_leaves=12)


@given(expressions)
@settings(max_examples=300, deadline=None)
def test_print_parse_round_trip(src):
    a = parse_expression(src)
    b = parse_expression(a.to_source())
    assert a == b
    assert parse_expression(b.to_source()) == b


@given(st.recursive(st.sampled_from(["x1", "x2", "2", "0.5", "3"]),
                    lambda inner: st.tuples(inner, st.sampled_from(["+", "-", "*"]), inner)
                    .map(lambda t: f"({t[0]}{t[1]}{t[2]})") | inner.map(lambda s: f"({s})^3")
                    | inner.map(lambda s: f"-{s}"), max_leaves=8),
       st.lists(st.floats(-2, 2, allow_nan=False), min_size=2, max_size=2))
@settings(max_examples=200, deadline=None)
def test_stack_program_matches_tree_evaluation_bitwise(src, x):
    node = parse_expression(src)
    ops, args = compile_rpn(node)
    X = np.array([x])
    with np.errstate(all="ignore"):
        tree = evaluate_on(node, X)
        prog = eval_program(ops, args, 0, len(ops), X)
    assert np.array_equal(tree, prog, equal_nan=True)
