import numpy as np
import pytest

from parobs.expr import Expression, ExpressionError


def test_power_and_max():
    f = Expression("0.5*max(x,0)^2")
    np.testing.assert_allclose(f(x=np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])


def test_min_with_several_arguments_and_constants():
    f = Expression("min(x, 1, pi) + e - exp(1)")
    np.testing.assert_allclose(f(x=np.array([0.5, 7.0])), [0.5, 1.0])


def test_space_time_and_spatial():
    g = Expression("x1 + 2*x2 + t").space_time(2)
    assert float(g(1.0, 2.0, 3.0)) == 8.0
    s = Expression("x1*x2").spatial(2)
    assert float(s(2.0, 3.0)) == 6.0
    assert float(Expression("x^2").spatial(1)(3.0)) == 9.0


@pytest.mark.parametrize("text", ["__import__('os')", "x.real", "y + 1", "open(x)", "x if t else 1",
                                  "[x]", "'a'", "True", "exp(x, 2)", "max(x)", "exp(x=1)", "",
                                  "1 +", "x == 1"])
def test_rejected(text):
    with pytest.raises(ExpressionError):
        Expression(text)


def test_spatial_rejects_time_dependence():
    with pytest.raises(ExpressionError):
        Expression("x + t").spatial(1)


def test_wrong_coordinate_count():
    with pytest.raises(ExpressionError):
        Expression("x1").spatial(2)(1.0)


def test_missing_variable_at_evaluation():
    with pytest.raises(ExpressionError):
        Expression("x2")(x1=1.0)
