import pytest
import sympy

from invreject.dsl import (
    ParseError,
    ast_to_sympy,
    parse_expression,
    split_sections,
    tokenize,
)

X = {"x": sympy.Symbol("x"), "y": sympy.Symbol("y"), "t": sympy.Symbol("t")}


def _eval(text, symbols=X, allow_functions=False):
    return ast_to_sympy(parse_expression(text), symbols, allow_functions)


def test_tokenize_kinds():
    toks = tokenize("2*x + 3.5e-2")
    kinds = [k for k, *_ in toks]
    assert kinds == ["num", "op", "ident", "op", "num", "end"]


def test_tokenize_bad_character_position():
    with pytest.raises(ParseError) as ei:
        tokenize("x + $y", line_no=3)
    assert "line 3" in str(ei.value)


def test_precedence():
    assert _eval("2 + 3*4") == 14
    assert _eval("2*3 + 4") == 10
    assert _eval("(2 + 3)*4") == 20
    assert _eval("6/3/2") == sympy.Rational(1)  # left-associative
    assert _eval("-x^2") == -X["x"] ** 2  # unary minus binds looser than ^


def test_power_operators():
    assert _eval("x^3") == X["x"] ** 3
    assert _eval("x**3") == X["x"] ** 3
    assert _eval("2^3^2") == 512  # right-associative


def test_unary_signs():
    assert _eval("-x + +y") == -X["x"] + X["y"]
    assert _eval("--x") == X["x"]


def test_undeclared_symbol():
    with pytest.raises(ParseError, match="undeclared symbol 'z'"):
        _eval("x + z")


def test_functions_gated():
    with pytest.raises(ParseError, match="not allowed"):
        _eval("exp(x)")
    assert _eval("exp(-3*t)", allow_functions=True) == sympy.exp(-3 * X["t"])
    with pytest.raises(ParseError, match="unknown function"):
        _eval("sinh(x)", allow_functions=True)


def test_trailing_garbage():
    with pytest.raises(ParseError):
        parse = parse_expression("x + 2 y")
    with pytest.raises(ParseError):
        parse_expression("x +")
    with pytest.raises(ParseError):
        parse_expression("(x + 2")


def test_exact_integers_vs_floats():
    assert _eval("2/4") == sympy.Rational(1, 2)  # integers stay exact
    v = _eval("0.1")
    assert isinstance(v, sympy.Float)


def test_split_sections():
    text = """
# comment line
states: x1(0) = 1, x2(0) = 2
odes:
  dx1 = -x1   # trailing comment
  dx2 = x1 - x2
output: y = x1
"""
    entries = split_sections(text)
    sections = [s for s, _, payload in entries if payload]
    assert sections == ["states", "odes", "odes", "output"]
    assert entries[2][2] == "dx1 = -x1"


def test_split_sections_content_before_header():
    with pytest.raises(ParseError, match="before any section"):
        split_sections("dx1 = -x1")
