"""Exact sparse multivariate polynomials in the model parameters.

Coefficient arithmetic during differential elimination must stay exact, so
terms are kept as {monomial: Fraction} maps and never touch floating point.
A monomial is a sorted tuple of (parameter name, positive exponent) pairs.
"""

from __future__ import annotations

from fractions import Fraction

import sympy

_ONE_KEY = ()


def _as_fraction(v):
    if isinstance(v, Fraction):
        return v
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, float):
        return Fraction(v).limit_denominator(10**12)
    raise TypeError(f"cannot coerce {v!r} to an exact rational")


class ParamPoly:
    """Polynomial over Q in the parameter symbols, canonical sparse form."""

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        self.terms = {k: v for k, v in (terms or {}).items() if v != 0}

    @classmethod
    def const(cls, v) -> "ParamPoly":
        v = _as_fraction(v)
        return cls({_ONE_KEY: v}) if v else cls()

    @classmethod
    def param(cls, name: str, exp: int = 1) -> "ParamPoly":
        return cls({((name, exp),): Fraction(1)})

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def is_constant(self) -> bool:
        return all(k == _ONE_KEY for k in self.terms)

    def constant_value(self) -> Fraction:
        if not self.is_constant():
            raise ValueError("not a constant polynomial")
        return self.terms.get(_ONE_KEY, Fraction(0))

    def params(self):
        out = set()
        for key in self.terms:
            for name, _ in key:
                out.add(name)
        return out

    def __bool__(self):
        return bool(self.terms)

    def __eq__(self, other):
        return isinstance(other, ParamPoly) and self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def __neg__(self):
        return ParamPoly({k: -v for k, v in self.terms.items()})

    def __add__(self, other):
        if not isinstance(other, ParamPoly):
            other = ParamPoly.const(other)
        out = dict(self.terms)
        for k, v in other.terms.items():
            s = out.get(k, Fraction(0)) + v
            if s:
                out[k] = s
            else:
                out.pop(k, None)
        return ParamPoly(out)

    def __sub__(self, other):
        if not isinstance(other, ParamPoly):
            other = ParamPoly.const(other)
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, ParamPoly):
            other = ParamPoly.const(other)
        out = {}
        for k1, v1 in self.terms.items():
            for k2, v2 in other.terms.items():
                k = _mul_keys(k1, k2)
                s = out.get(k, Fraction(0)) + v1 * v2
                if s:
                    out[k] = s
                else:
                    out.pop(k, None)
        return ParamPoly(out)

    __rmul__ = __mul__
    __radd__ = __add__

    def __pow__(self, n: int):
        if n < 0:
            raise ValueError("negative power of a ParamPoly")
        out = ParamPoly.const(1)
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def evaluate(self, values: dict) -> float:
        total = 0.0
        for key, coef in self.terms.items():
            term = float(coef)
            for name, exp in key:
                term *= values[name] ** exp
            total += term
        return total

    def to_sympy(self) -> sympy.Expr:
        expr = sympy.Integer(0)
        for key, coef in self.terms.items():
            term = sympy.Rational(coef.numerator, coef.denominator)
            for name, exp in key:
                term *= sympy.Symbol(name) ** exp
            expr += term
        return expr

    @classmethod
    def from_sympy(cls, expr: sympy.Expr) -> "ParamPoly":
        expr = sympy.expand(expr)
        syms = sorted(expr.free_symbols, key=lambda s: s.name)
        if not syms:
            return cls.const(Fraction(sympy.Rational(expr)))
        poly = sympy.Poly(expr, *syms)
        out = {}
        for monom, coef in poly.terms():
            key = tuple(
                sorted((s.name, e) for s, e in zip(syms, monom) if e > 0)
            )
            out[key] = Fraction(sympy.Rational(coef))
        return cls(out)

    def exact_div(self, other: "ParamPoly") -> "ParamPoly":
        """Divide by `other`, requiring a zero remainder."""
        if other.is_zero:
            raise ZeroDivisionError("division by zero ParamPoly")
        if other.is_constant():
            c = other.constant_value()
            return ParamPoly({k: v / c for k, v in self.terms.items()})
        q, r = sympy.div(self.to_sympy(), other.to_sympy())
        if sympy.expand(r) != 0:
            raise ValueError("inexact ParamPoly division")
        return ParamPoly.from_sympy(q)

    def __repr__(self):
        if self.is_zero:
            return "0"
        parts = []
        for key, coef in sorted(self.terms.items()):
            factors = []
            if coef != 1 or key == _ONE_KEY:
                factors.append(str(coef))
            for name, exp in key:
                factors.append(name if exp == 1 else f"{name}^{exp}")
            parts.append("*".join(factors))
        return " + ".join(parts)


def _mul_keys(k1, k2):
    d = dict(k1)
    for name, exp in k2:
        d[name] = d.get(name, 0) + exp
    return tuple(sorted(d.items()))


def param_content(polys) -> ParamPoly:
    """GCD of a collection of ParamPolys (unit-normalized, via sympy)."""
    exprs = [p.to_sympy() for p in polys if not p.is_zero]
    if not exprs:
        return ParamPoly.const(1)
    g = exprs[0]
    for e in exprs[1:]:
        g = sympy.gcd(g, e)
        if g == 1:
            break
    return ParamPoly.from_sympy(g)
