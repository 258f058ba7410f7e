import numpy as np
import pytest
from hypothesis import given, strategies as st

from fluctlab.expr import Expression, ExpressionError, parse, parse_coefficient_expr, to_text


def test_sum_of_two_variables():
    f = parse_coefficient_expr("x + y", ["x", "y"])
    assert float(f(1, 2)) == 3.0


def test_sine_of_zero():
    f = parse_coefficient_expr("sin(x - y)", ["x", "y"])
    assert float(f(0, 0)) == 0.0


def test_unbalanced_parenthesis_reports_offset():
    with pytest.raises(ExpressionError) as err:
        parse_coefficient_expr("sin(", ["x"])
    assert err.value.position == 4


def test_unknown_identifier_is_rejected():
    with pytest.raises(ExpressionError):
        parse_coefficient_expr("x + z", ["x"])


def test_keyword_and_broadcast_call():
    f = Expression("x * y + 1", ["x", "y"])
    out = f(x=np.arange(3.0), y=2.0)
    assert out.shape == (3,)
    assert np.array_equal(out, [1.0, 3.0, 5.0])


def test_constant_broadcasts_to_argument_shape():
    f = Expression("2", ["x"])
    assert f(np.zeros((2, 3))).shape == (2, 3)


def test_wrong_arity_raises():
    f = Expression("x", ["x"])
    with pytest.raises(ExpressionError):
        f(1.0, 2.0)


# random expression trees over x, y
_leaf = st.one_of(st.sampled_from(["x", "y"]), st.integers(1, 9).map(str))


def _node(children):
    binop = st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})")
    call = st.tuples(st.sampled_from(["sin", "cos", "tanh"]), children).map(lambda t: f"{t[0]}({t[1]})")
    neg = children.map(lambda c: f"-{c}")
    return st.one_of(binop, call, neg)


expressions = st.recursive(_leaf, _node, max_leaves=12)


@given(expressions)
def test_pretty_print_round_trip(text):
    f = Expression(text, ["x", "y"])
    g = Expression(f.pretty(), ["x", "y"])
    pts = np.random.default_rng(0).uniform(-2, 2, (2, 100))
    a, b = f(*pts), g(*pts)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    assert parse(to_text(parse(text))) == parse(text)
