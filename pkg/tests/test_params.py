from fractions import Fraction

import pytest
import sympy

from invreject.params import ParamPoly, param_content


def test_const_and_zero():
    z = ParamPoly()
    assert z.is_zero and not z
    one = ParamPoly.const(1)
    assert one.is_constant() and one.constant_value() == 1
    assert ParamPoly.const(0).is_zero


def test_arithmetic_identities():
    a = ParamPoly.param("p1")
    b = ParamPoly.param("p2")
    assert a + b == b + a
    assert a * b == b * a
    assert (a + b) * (a - b) == a * a - b * b
    assert a - a == ParamPoly()
    assert (a + 1) * 0 == ParamPoly()


def test_pow():
    a = ParamPoly.param("p1") + ParamPoly.const(1)
    assert a**3 == a * a * a
    assert a**0 == ParamPoly.const(1)
    with pytest.raises(ValueError):
        a ** (-1)


def test_fraction_coefficients_stay_exact():
    third = ParamPoly.const(Fraction(1, 3))
    assert (third + third + third) == ParamPoly.const(1)


def test_float_coercion():
    assert ParamPoly.const(0.5) == ParamPoly.const(Fraction(1, 2))
    with pytest.raises(TypeError):
        ParamPoly.const("nope")


def test_evaluate():
    p = ParamPoly.param("p1", 2) * ParamPoly.param("p2") + ParamPoly.const(3)
    assert p.evaluate({"p1": 2.0, "p2": 5.0}) == pytest.approx(23.0)


def test_sympy_roundtrip():
    p1, p2 = sympy.symbols("p1 p2")
    expr = 3 * p1**2 * p2 - sympy.Rational(1, 2) * p2 + 7
    p = ParamPoly.from_sympy(expr)
    assert sympy.expand(p.to_sympy() - expr) == 0
    assert ParamPoly.from_sympy(p.to_sympy()) == p


def test_params_listing():
    p = ParamPoly.param("p1") * ParamPoly.param("p3") + ParamPoly.param("p2")
    assert p.params() == {"p1", "p2", "p3"}


def test_exact_div():
    a = ParamPoly.param("p1")
    b = ParamPoly.param("p2")
    prod = (a + b) * (a - b)
    assert prod.exact_div(a + b) == a - b
    assert (a * 6).exact_div(ParamPoly.const(3)) == a * 2
    with pytest.raises(ValueError):
        (a + ParamPoly.const(1)).exact_div(b)
    with pytest.raises(ZeroDivisionError):
        a.exact_div(ParamPoly())


def test_param_content():
    a = ParamPoly.param("p1")
    b = ParamPoly.param("p2")
    g = param_content([a * b, a * a * b])
    assert g == a * b
    assert param_content([]) == ParamPoly.const(1)
    assert param_content([a, b]) == ParamPoly.const(1)


def test_hashable():
    a = ParamPoly.param("p1") + ParamPoly.const(2)
    b = ParamPoly.param("p1") + ParamPoly.const(2)
    assert hash(a) == hash(b)
    assert len({a, b}) == 1
