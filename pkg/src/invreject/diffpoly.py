"""Differential-polynomial arithmetic and Ritt pseudodivision.

Implements the exact symbolic layer used to eliminate unobserved states from
rational ODE models: differential variables, monomials, polynomials with
ParamPoly coefficients, an orderly ranking that eliminates states first,
pseudodivision with a verifiable reduction certificate, and a Wu-Ritt style
autoreduction loop that yields a characteristic set whose state-free members
are the input-output equations.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .params import ParamPoly, param_content

DEFAULT_MAX_ORDER = 12

KINDS = ("x", "y", "u")
_KIND_RANK = {"u": 0, "y": 1, "x": 2}


class DiffAlgebraError(Exception):
    pass


class ZeroPolynomialError(DiffAlgebraError):
    pass


class OrderOverflowError(DiffAlgebraError):
    pass


class EliminationError(DiffAlgebraError):
    pass


class OutOfScopeError(DiffAlgebraError):
    pass


@dataclass(frozen=True, order=False)
class DiffVar:
    """A derivative of a state (x), output (y) or input (u) variable."""

    kind: str
    index: int
    order: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown variable kind {self.kind!r}")
        if self.index < 1 or self.order < 0:
            raise ValueError("index must be >= 1 and order >= 0")

    def derivative(self, times: int = 1, max_order: int = DEFAULT_MAX_ORDER):
        if self.order + times > max_order:
            raise OrderOverflowError(
                f"derivative order {self.order + times} exceeds maximum {max_order}"
            )
        return DiffVar(self.kind, self.index, self.order + times)

    def base(self):
        return (self.kind, self.index)

    def __repr__(self):
        name = f"{self.kind}{self.index}"
        return name if self.order == 0 else f"d{self.order}{name}"


class Ranking:
    """Orderly ranking: states (and their derivatives) above outputs/inputs,
    then by derivative order, with (kind, index) as the final tie-break."""

    def key(self, v: DiffVar):
        return (1 if v.kind == "x" else 0, v.order, _KIND_RANK[v.kind], v.index)

    def higher(self, a: DiffVar, b: DiffVar) -> bool:
        return self.key(a) > self.key(b)

    def max_var(self, vars_):
        return max(vars_, key=self.key)


class DiffMonomial:
    """Power product of DiffVars; the empty product is the monomial 1."""

    __slots__ = ("powers",)

    def __init__(self, powers=None):
        if powers is None:
            powers = ()
        if isinstance(powers, dict):
            powers = tuple(
                sorted(
                    ((v, e) for v, e in powers.items() if e),
                    key=lambda p: (p[0].kind, p[0].index, p[0].order),
                )
            )
        for _, e in powers:
            if e <= 0:
                raise ValueError("exponents must be positive")
        self.powers = powers

    @classmethod
    def one(cls):
        return cls()

    @classmethod
    def of(cls, *vars_and_exps):
        d = {}
        for item in vars_and_exps:
            v, e = item if isinstance(item, tuple) else (item, 1)
            d[v] = d.get(v, 0) + e
        return cls(d)

    @property
    def is_one(self):
        return not self.powers

    def degree(self, v: DiffVar) -> int:
        return dict(self.powers).get(v, 0)

    def total_degree(self) -> int:
        return sum(e for _, e in self.powers)

    def vars(self):
        return [v for v, _ in self.powers]

    def __mul__(self, other: "DiffMonomial"):
        d = dict(self.powers)
        for v, e in other.powers:
            d[v] = d.get(v, 0) + e
        return DiffMonomial(d)

    def mul_var(self, v: DiffVar, e: int = 1):
        d = dict(self.powers)
        d[v] = d.get(v, 0) + e
        return DiffMonomial(d)

    def without(self, v: DiffVar):
        d = dict(self.powers)
        d.pop(v, None)
        return DiffMonomial(d)

    def differentiate(self, max_order: int = DEFAULT_MAX_ORDER):
        """d/dt by the product rule; returns [(integer factor, monomial)]."""
        out = []
        for v, e in self.powers:
            d = dict(self.powers)
            if e == 1:
                del d[v]
            else:
                d[v] = e - 1
            dv = v.derivative(max_order=max_order)
            d[dv] = d.get(dv, 0) + 1
            out.append((e, DiffMonomial(d)))
        return out

    def evaluate(self, values: dict) -> float:
        r = 1.0
        for v, e in self.powers:
            r *= values[v] ** e
        return r

    def __eq__(self, other):
        return isinstance(other, DiffMonomial) and self.powers == other.powers

    def __hash__(self):
        return hash(self.powers)

    def __repr__(self):
        if self.is_one:
            return "1"
        return "*".join(
            repr(v) if e == 1 else f"{v!r}^{e}" for v, e in self.powers
        )


class DiffPolynomial:
    """Sparse sum of DiffMonomials with ParamPoly coefficients."""

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        self.terms = {m: c for m, c in (terms or {}).items() if not c.is_zero}

    @classmethod
    def zero(cls):
        return cls()

    @classmethod
    def one(cls):
        return cls({DiffMonomial.one(): ParamPoly.const(1)})

    @classmethod
    def from_var(cls, v: DiffVar):
        return cls({DiffMonomial.of(v): ParamPoly.const(1)})

    @classmethod
    def from_monomial(cls, m: DiffMonomial, coeff=None):
        return cls({m: coeff if coeff is not None else ParamPoly.const(1)})

    @property
    def is_zero(self):
        return not self.terms

    def __bool__(self):
        return bool(self.terms)

    def __eq__(self, other):
        return isinstance(other, DiffPolynomial) and self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def __neg__(self):
        return DiffPolynomial({m: -c for m, c in self.terms.items()})

    def __add__(self, other):
        out = dict(self.terms)
        for m, c in other.terms.items():
            s = out.get(m)
            s = c if s is None else s + c
            if s.is_zero:
                out.pop(m, None)
            else:
                out[m] = s
        return DiffPolynomial(out)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, ParamPoly):
            return DiffPolynomial({m: c * other for m, c in self.terms.items()})
        if isinstance(other, DiffMonomial):
            return DiffPolynomial({m * other: c for m, c in self.terms.items()})
        if isinstance(other, (int, Fraction)):
            return self * ParamPoly.const(other)
        out = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = m1 * m2
                s = out.get(m)
                s = c1 * c2 if s is None else s + c1 * c2
                if s.is_zero:
                    out.pop(m, None)
                else:
                    out[m] = s
        return DiffPolynomial(out)

    def vars(self):
        out = set()
        for m in self.terms:
            out.update(m.vars())
        return out

    def params(self):
        out = set()
        for c in self.terms.values():
            out |= c.params()
        return out

    def degree_in(self, v: DiffVar) -> int:
        return max((m.degree(v) for m in self.terms), default=0)

    def coeff_in(self, v: DiffVar, power: int) -> "DiffPolynomial":
        """Coefficient of v**power, as a polynomial in the other variables."""
        out = {}
        for m, c in self.terms.items():
            if m.degree(v) == power:
                out[m.without(v)] = c
        return DiffPolynomial(out)

    def leader(self, ranking: Ranking) -> DiffVar:
        vs = self.vars()
        if not vs:
            raise ZeroPolynomialError("no leader: polynomial has no variables")
        return ranking.max_var(vs)

    def differentiate(self, max_order: int = DEFAULT_MAX_ORDER):
        out = DiffPolynomial.zero()
        for m, c in self.terms.items():
            for k, dm in m.differentiate(max_order=max_order):
                out = out + DiffPolynomial({dm: c * ParamPoly.const(k)})
        return out

    def is_reduced_wrt(self, other: "DiffPolynomial", ranking: Ranking) -> bool:
        """No proper derivative of other's leader, and lower degree in it."""
        lead = other.leader(ranking)
        deg = other.degree_in(lead)
        for v in self.vars():
            if v.base() == lead.base():
                if v.order > lead.order:
                    return False
                if v.order == lead.order and self.degree_in(v) >= deg:
                    return False
        return True

    def evaluate(self, var_values: dict, param_values: dict) -> float:
        total = 0.0
        for m, c in self.terms.items():
            total += c.evaluate(param_values) * m.evaluate(var_values)
        return total

    def sorted_terms(self, ranking: Ranking):
        def mkey(m: DiffMonomial):
            return tuple(
                sorted(
                    ((ranking.key(v), e) for v, e in m.powers),
                    reverse=True,
                )
            )

        return sorted(self.terms.items(), key=lambda t: mkey(t[0]), reverse=True)

    def render(self, ranking: Ranking = None) -> str:
        if self.is_zero:
            return "0"
        ranking = ranking or Ranking()
        parts = []
        for m, c in self.sorted_terms(ranking):
            cs = repr(c)
            if len(c.terms) > 1:
                cs = f"({cs})"
            if m.is_one:
                parts.append(cs)
            elif cs == "1":
                parts.append(repr(m))
            else:
                parts.append(f"{cs}*{m!r}")
        return " + ".join(parts)

    def __repr__(self):
        return self.render()


def primitive(p: DiffPolynomial, ranking: Ranking = None) -> DiffPolynomial:
    """Strip rational and ParamPoly content; fix sign of the leading term."""
    if p.is_zero:
        return p
    content = param_content(p.terms.values())
    if not content.is_constant() or content.constant_value() != 1:
        p = DiffPolynomial(
            {m: c.exact_div(content) for m, c in p.terms.items()}
        )
    fracs = [f for c in p.terms.values() for f in c.terms.values()]
    from math import gcd

    g = 0
    lcm = 1
    for f in fracs:
        g = gcd(g, f.numerator)
        lcm = lcm * f.denominator // gcd(lcm, f.denominator)
    scale = Fraction(lcm, g) if g else Fraction(1)
    ranking = ranking or Ranking()
    lead_m, lead_c = p.sorted_terms(ranking)[0]
    lead_frac = sorted(lead_c.terms.items())[0][1]
    if lead_frac * scale < 0:
        scale = -scale
    if scale != 1:
        p = p * ParamPoly.const(scale)
    return p


def compare_rank(a: DiffPolynomial, b: DiffPolynomial, ranking: Ranking) -> str:
    """'lower' | 'equal' | 'higher': rank of a relative to b."""
    if a.is_zero or b.is_zero:
        raise ZeroPolynomialError("no leader: zero polynomial has no rank")
    la, lb = a.leader(ranking), b.leader(ranking)
    ka, kb = ranking.key(la), ranking.key(lb)
    if ka != kb:
        return "lower" if ka < kb else "higher"
    da, db = a.degree_in(la), b.degree_in(lb)
    if da == db:
        return "equal"
    return "lower" if da < db else "higher"


@dataclass
class PseudoDivision:
    """Result of reducing A_i with respect to A_j.

    The certificate identity multiplier * A_i - remainder == sum(q * B for
    q, B in steps) holds exactly, where each B is a prolongation (possibly
    the zeroth) of A_j.
    """

    remainder: DiffPolynomial
    multiplier: DiffPolynomial
    steps: list

    def multiplier_param(self) -> ParamPoly:
        """The multiplier as a ParamPoly, when it involves no variables."""
        if self.multiplier.is_zero:
            return ParamPoly()
        if set(self.multiplier.terms) != {DiffMonomial.one()}:
            raise EliminationError("multiplier involves differential variables")
        return self.multiplier.terms[DiffMonomial.one()]


def pseudo_divide(
    A_i: DiffPolynomial,
    A_j: DiffPolynomial,
    ranking: Ranking = None,
    max_order: int = DEFAULT_MAX_ORDER,
) -> PseudoDivision:
    """Ritt pseudodivision of A_i by A_j and its prolongations."""
    ranking = ranking or Ranking()
    if A_j.is_zero:
        raise ZeroPolynomialError("cannot pseudodivide by the zero polynomial")
    lead = A_j.leader(ranking)
    deg_j = A_j.degree_in(lead)
    rem = A_i
    mult = DiffPolynomial.one()
    steps = []
    prolonged = {0: A_j}
    while not rem.is_zero:
        k = _reduction_order(rem, lead, deg_j)
        if k is None:
            break
        if k not in prolonged:
            B = prolonged[0]
            for i in range(1, k + 1):
                if i not in prolonged:
                    prolonged[i] = prolonged[i - 1].differentiate(
                        max_order=max_order
                    )
            B = prolonged[k]
        B = prolonged[k]
        v = lead if k == 0 else lead.derivative(k, max_order=max_order)
        e = B.degree_in(v)
        init = B.coeff_in(v, e)
        # classical pseudodivision with respect to v
        while not rem.is_zero and rem.degree_in(v) >= e:
            d = rem.degree_in(v)
            lc = rem.coeff_in(v, d)
            q = lc * DiffMonomial.of((v, d - e)) if d > e else lc
            rem = rem * init - q * B
            mult = mult * init
            steps = [(qq * init, BB) for qq, BB in steps]
            steps.append((q, B))
    return PseudoDivision(remainder=rem, multiplier=mult, steps=steps)


def _reduction_order(rem, lead, deg_j):
    """Highest k for which rem is not reduced w.r.t. the k-th prolongation."""
    best = None
    for v in rem.vars():
        if v.base() != lead.base() or v.order < lead.order:
            continue
        k = v.order - lead.order
        if k == 0 and rem.degree_in(v) < deg_j:
            continue
        if best is None or k > best:
            best = k
    return best


@dataclass
class CharSet:
    """An autoreduced chain; the first n_state_free members are state-free."""

    members: list
    ranking: Ranking

    @property
    def n_state_free(self):
        n = 0
        for p in self.members:
            if any(v.kind == "x" for v in p.vars()):
                break
            n += 1
        return n

    def state_free(self):
        return self.members[: self.n_state_free]


def _check_scope(generators):
    states = set()
    outputs = set()
    inputs = set()
    for g in generators:
        for v in g.vars():
            {"x": states, "y": outputs, "u": inputs}[v.kind].add(v.index)
    if len(states) > 3 or len(outputs) > 1 or len(inputs) > 1:
        raise OutOfScopeError(
            "built-in elimination supports at most 3 states, 1 output, 1 input "
            f"(got {len(states)} states, {len(outputs)} outputs, {len(inputs)} inputs)"
        )


def _basic_set(working, ranking):
    def sort_key(p):
        lead = p.leader(ranking)
        return (ranking.key(lead), p.degree_in(lead), len(p.terms))

    chosen = []
    for p in sorted(working, key=sort_key):
        if all(p.is_reduced_wrt(c, ranking) for c in chosen):
            chosen.append(p)
    return chosen


def _prem_chain(p, chain, ranking, max_order, budget):
    ordered = sorted(
        chain, key=lambda c: ranking.key(c.leader(ranking)), reverse=True
    )
    changed = True
    while changed and not p.is_zero:
        changed = False
        for c in ordered:
            if not p.is_reduced_wrt(c, ranking):
                p = pseudo_divide(p, c, ranking, max_order).remainder
                budget[0] -= 1
                if budget[0] <= 0:
                    raise EliminationError("reduction did not stabilize")
                changed = True
                if p.is_zero:
                    break
    return p


def characteristic_set(
    generators,
    ranking: Ranking = None,
    max_order: int = DEFAULT_MAX_ORDER,
    max_steps: int = 10000,
) -> CharSet:
    """Wu-Ritt autoreduction of the generator set down to a characteristic set."""
    ranking = ranking or Ranking()
    if any(g.is_zero for g in generators):
        raise ZeroPolynomialError("degenerate generator: identically zero")
    _check_scope(generators)
    working = []
    for g in generators:
        g = primitive(g, ranking)
        if g not in working:
            working.append(g)
    budget = [max_steps]
    while True:
        basic = _basic_set(working, ranking)
        new = []
        for p in working:
            if p in basic:
                continue
            r = _prem_chain(p, basic, ranking, max_order, budget)
            if r.is_zero:
                continue
            if not r.vars():
                raise EliminationError(
                    "inconsistent system: nonzero parameter-only remainder"
                )
            r = primitive(r, ranking)
            if r not in working and r not in new:
                new.append(r)
        if not new:
            break
        working.extend(new)
    members = sorted(
        basic,
        key=lambda p: (
            1 if any(v.kind == "x" for v in p.vars()) else 0,
            ranking.key(p.leader(ranking)),
        ),
    )
    return CharSet(members=members, ranking=ranking)


def extract_input_output(cs: CharSet):
    """The state-free members of the characteristic set."""
    out = cs.state_free()
    if not out:
        raise EliminationError("elimination produced no state-free member")
    return list(out)
