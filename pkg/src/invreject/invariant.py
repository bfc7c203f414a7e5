"""Model and invariant representations: parsing, monic normalization,
known-parameter substitution, and parameter/coefficient counting.

A ModelSpec is the parsed `.model` file (rational ODE system plus output and
optional closed-form inputs). An InvariantSpec is a monic input-output
equation: unknown coefficient slots attached to differential monomials on the
left, and a fully known differential polynomial xi on the right.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field

import sympy

from . import dsl
from .diffpoly import (
    DEFAULT_MAX_ORDER,
    DiffMonomial,
    DiffPolynomial,
    DiffVar,
    Ranking,
    characteristic_set,
    extract_input_output,
)
from .dsl import ParseError
from .params import ParamPoly

_SLOT_RE = re.compile(r"^c\d+$")
_DIFFVAR_RE = re.compile(r"^(?:d(\d+))?(y(\d*)|u(\d+))$")
_STATE_TOKEN_RE = re.compile(r"^(?:d(\d+))?x(\d+)$")
_DPREFIX_RE = re.compile(r"^d\d")


def var_token(v: DiffVar) -> str:
    if v.kind == "y":
        base = "y" if v.index == 1 else f"y{v.index}"
    elif v.kind == "u":
        base = f"u{v.index}"
    else:
        base = f"x{v.index}"
    return base if v.order == 0 else f"d{v.order}{base}"


def token_var(name: str):
    """DiffVar for a DSL token, or None if the name is not a derivative token."""
    m = _DIFFVAR_RE.match(name)
    if m:
        order = int(m.group(1)) if m.group(1) else 0
        if m.group(2).startswith("y"):
            idx = int(m.group(3)) if m.group(3) else 1
            return DiffVar("y", idx, order)
        return DiffVar("u", int(m.group(4)), order)
    return None


# ---------------------------------------------------------------------------
# Model specification


@dataclass
class ModelSpec:
    """A rational ODE model with one output and optional closed-form inputs."""

    name: str
    states: list
    x0: dict
    params: list
    param_values: dict
    inputs: dict
    odes: dict
    output: sympy.Expr
    t: sympy.Symbol = field(default_factory=lambda: sympy.Symbol("t"))

    @property
    def n_states(self):
        return len(self.states)

    @property
    def n_params(self):
        return len(self.params)

    def state_symbols(self):
        return [sympy.Symbol(s) for s in self.states]

    def input_symbols(self):
        return [sympy.Symbol(u) for u in self.inputs]


def parse_model(text: str, name: str = "") -> ModelSpec:
    """Parse the sectioned `.model` format into a validated ModelSpec."""
    entries = dsl.split_sections(text)
    sections = {}
    for sec, ln, payload in entries:
        sections.setdefault(sec, [])
        if payload is not None:
            sections[sec].append((ln, payload))
    for required in ("states", "odes", "output"):
        if required not in sections:
            raise ParseError(f"missing required section {required!r}")

    params, param_values = [], {}
    for ln, payload in sections.get("params", []):
        for item in payload.split(","):
            item = item.strip()
            if not item:
                continue
            m = re.match(r"^([A-Za-z_]\w*)\s*(?:=\s*(.+))?$", item)
            if not m:
                raise ParseError(f"bad parameter entry {item!r}", ln, 1)
            params.append(m.group(1))
            if m.group(2) is not None:
                param_values[m.group(1)] = float(sympy.Rational(m.group(2).strip()))

    states, x0 = [], {}
    for ln, payload in sections["states"]:
        for item in payload.split(","):
            item = item.strip()
            if not item:
                continue
            m = re.match(r"^(x\d+)\s*\(\s*0\s*\)\s*=\s*(\S+)$", item)
            if not m:
                raise ParseError(
                    f"bad state entry {item!r} (expected xK(0) = value)", ln, 1
                )
            states.append(m.group(1))
            x0[m.group(1)] = float(sympy.Rational(m.group(2)))

    t = sympy.Symbol("t")
    param_syms = {p: sympy.Symbol(p) for p in params}
    inputs = {}
    for ln, payload in sections.get("inputs", []):
        lhs, _, rhs = payload.partition("=")
        uname = lhs.strip()
        if not re.match(r"^u\d+$", uname) or not rhs.strip():
            raise ParseError(f"bad input entry {payload!r} (expected uJ = expr)", ln, 1)
        ast = dsl.parse_expression(rhs, ln)
        inputs[uname] = dsl.ast_to_sympy(
            ast, {**param_syms, "t": t}, allow_functions=True
        )

    rhs_symbols = {
        **param_syms,
        **{s: sympy.Symbol(s) for s in states},
        **{u: sympy.Symbol(u) for u in inputs},
    }
    odes = {}
    for ln, payload in sections["odes"]:
        lhs, eq, rhs = payload.partition("=")
        key = lhs.strip()
        m = re.match(r"^d(x\d+)$", key)
        if not m or not eq:
            raise ParseError(f"bad ODE entry {payload!r} (expected dxK = expr)", ln, 1)
        state = m.group(1)
        if state not in states:
            raise ParseError(f"undeclared state {state!r}", ln, 1)
        ast = dsl.parse_expression(rhs, ln)
        expr = dsl.ast_to_sympy(ast, rhs_symbols, allow_functions=False)
        if not expr.is_rational_function(*[sympy.Symbol(s) for s in states]):
            raise ParseError(f"right-hand side for {state} is not rational", ln, 1)
        odes[state] = expr
    missing = [s for s in states if s not in odes]
    if missing:
        raise ParseError(f"states without ODEs: {missing}")

    ln, payload = sections["output"][0]
    lhs, eq, rhs = payload.partition("=")
    if lhs.strip() != "y" or not eq:
        raise ParseError(f"bad output entry {payload!r} (expected y = expr)", ln, 1)
    ast = dsl.parse_expression(rhs, ln)
    out_expr = dsl.ast_to_sympy(ast, rhs_symbols, allow_functions=False)

    return ModelSpec(
        name=name,
        states=states,
        x0=x0,
        params=params,
        param_values=param_values,
        inputs=inputs,
        odes=odes,
        output=out_expr,
        t=t,
    )


def _sympy_poly_to_diffpoly(expr, varmap):
    """Expand a sympy polynomial in the mapped symbols into a DiffPolynomial."""
    expr = sympy.expand(expr)
    terms = expr.args if expr.is_Add else (expr,)
    out = DiffPolynomial.zero()
    for term in terms:
        powers = {}
        coeff = sympy.Integer(1)
        for base, exp in term.as_powers_dict().items():
            if base in varmap:
                if not (exp.is_Integer and exp > 0):
                    raise ValueError(f"non-polynomial power of {base} in generator")
                powers[varmap[base]] = powers.get(varmap[base], 0) + int(exp)
            else:
                coeff *= base ** exp
        out = out + DiffPolynomial(
            {DiffMonomial(powers): ParamPoly.from_sympy(coeff)}
        )
    return out


def model_generators(model: ModelSpec):
    """Differential-ideal generators dxK - f_K and y - g for a ModelSpec."""
    varmap = {}
    dvarmap = {}
    for i, s in enumerate(model.states, start=1):
        varmap[sympy.Symbol(s)] = DiffVar("x", int(s[1:]), 0)
        dvarmap[s] = DiffVar("x", int(s[1:]), 1)
    for u in model.inputs:
        varmap[sympy.Symbol(u)] = DiffVar("u", int(u[1:]), 0)
    gens = []
    for s in model.states:
        num, den = sympy.fraction(sympy.together(model.odes[s]))
        dterm = _sympy_poly_to_diffpoly(den, varmap) * DiffMonomial.of(dvarmap[s])
        gens.append(dterm - _sympy_poly_to_diffpoly(num, varmap))
    num, den = sympy.fraction(sympy.together(model.output))
    yterm = _sympy_poly_to_diffpoly(den, varmap) * DiffMonomial.of(DiffVar("y", 1, 0))
    gens.append(yterm - _sympy_poly_to_diffpoly(num, varmap))
    return gens


# ---------------------------------------------------------------------------
# Invariant specification


@dataclass
class Slot:
    """One unknown coefficient: the term `id * expr * monomial` on the LHS.

    `opaque` marks slots whose id came from the source text as an unknown
    placeholder (c1, c2, ...); their value is never resolvable by parameter
    substitution. Non-opaque slots carry the concrete coefficient expression
    produced by elimination, and `id` is just a label.
    """

    id: str
    expr: sympy.Expr
    monomial: DiffMonomial
    opaque: bool = False

    def __eq__(self, other):
        return (
            isinstance(other, Slot)
            and self.id == other.id
            and self.monomial == other.monomial
            and self.opaque == other.opaque
            and sympy.expand(self.expr - other.expr) == 0
        )


@dataclass
class InvariantSpec:
    """Monic input-output equation: sum(slot terms) = xi."""

    slots: list
    xi: dict  # DiffMonomial -> parameter-free sympy coefficient
    name: str = ""
    output_index: int = 1
    known: dict = field(default_factory=dict)

    @property
    def n_slots(self):
        return len(self.slots)

    def monomials(self):
        return [s.monomial for s in self.slots] + list(self.xi.keys())

    def max_order(self, kind: str) -> int:
        orders = [
            v.order
            for m in self.monomials()
            for v in m.vars()
            if v.kind == kind
        ]
        return max(orders, default=0)

    def variables(self):
        out = set()
        for m in self.monomials():
            out.update(m.vars())
        return out

    def __eq__(self, other):
        if not isinstance(other, InvariantSpec):
            return NotImplemented
        if self.slots != other.slots:
            return False
        if set(self.xi) != set(other.xi):
            return False
        return all(
            sympy.expand(self.xi[m] - other.xi[m]) == 0 for m in self.xi
        )


def _monomial_sort_key(m: DiffMonomial, ranking: Ranking):
    return tuple(sorted(((ranking.key(v), e) for v, e in m.powers), reverse=True))


def _sorted_monomials(monomials, ranking=None):
    ranking = ranking or Ranking()
    return sorted(monomials, key=lambda m: _monomial_sort_key(m, ranking), reverse=True)


def parse_invariant(text: str, name: str = "") -> InvariantSpec:
    """Parse the `.inv` format: one equation line plus optional known: lines."""
    equation = None
    eq_line_no = None
    known = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.match(r"^known\s*:\s*(.*)$", line)
        if m:
            for item in m.group(1).split(","):
                item = item.strip()
                if not item:
                    continue
                km = re.match(r"^([A-Za-z_]\w*)\s*=\s*(\S+)$", item)
                if not km:
                    raise ParseError(f"bad known entry {item!r}", ln, 1)
                known[km.group(1)] = float(sympy.Rational(km.group(2)))
            continue
        if equation is not None:
            raise ParseError("more than one equation line", ln, 1)
        equation, eq_line_no = line, ln
    if equation is None:
        raise ParseError("no equation found")
    if equation.count("=") != 1:
        raise ParseError("equation must contain exactly one '='", eq_line_no, 1)

    lhs_text, rhs_text = equation.split("=")
    symbols = _InvariantSymbols(eq_line_no)
    lhs = dsl.ast_to_sympy(dsl.parse_expression(lhs_text, eq_line_no), symbols)
    rhs = dsl.ast_to_sympy(dsl.parse_expression(rhs_text, eq_line_no), symbols)
    F = sympy.expand(lhs - rhs)

    diff_syms = symbols.diff_syms
    slot_syms = symbols.slot_syms
    by_monomial = {}
    for term in F.args if F.is_Add else (F,):
        powers = {}
        coeff = sympy.Integer(1)
        for base, exp in term.as_powers_dict().items():
            if base in diff_syms:
                if not (exp.is_Integer and exp > 0):
                    raise ParseError(
                        f"non-polynomial power of {base}", eq_line_no, 1
                    )
                v = diff_syms[base]
                powers[v] = powers.get(v, 0) + int(exp)
            else:
                coeff *= base ** exp
        mono = DiffMonomial(powers)
        by_monomial[mono] = by_monomial.get(mono, sympy.Integer(0)) + coeff

    slots = []
    xi = {}
    used_ids = set()
    ranking = Ranking()
    for mono in _sorted_monomials(by_monomial, ranking):
        e = sympy.expand(by_monomial[mono])
        if e == 0:
            continue
        present = sorted(
            (s for s in e.free_symbols if s in slot_syms), key=lambda s: s.name
        )
        if len(present) > 1:
            raise ParseError(
                f"duplicate monomial {mono!r}: slots "
                f"{[s.name for s in present]} attach to it", eq_line_no, 1,
            )
        if len(present) == 1:
            c = present[0]
            p = sympy.Poly(e, c)
            if p.degree() != 1 or sympy.expand(p.coeff_monomial(1)) != 0:
                raise ParseError(
                    f"coefficient of {mono!r} mixes slot {c.name} with other terms",
                    eq_line_no, 1,
                )
            if c.name in used_ids:
                raise ParseError(
                    f"slot {c.name} attached to more than one monomial",
                    eq_line_no, 1,
                )
            used_ids.add(c.name)
            slots.append(
                Slot(id=c.name, expr=p.coeff_monomial(c), monomial=mono, opaque=True)
            )
        elif e.free_symbols:
            slots.append(Slot(id="", expr=e, monomial=mono, opaque=False))
        else:
            xi[mono] = -e
    counter = 1
    for s in slots:
        if not s.id:
            while f"c{counter}" in used_ids:
                counter += 1
            s.id = f"c{counter}"
            used_ids.add(s.id)

    spec = InvariantSpec(slots=slots, xi=xi, name=name)
    if known:
        spec = substitute_known(spec, known)
        spec.known = known
    return spec


class _InvariantSymbols(dict):
    """Symbol table for invariant equations; classifies names on first use."""

    def __init__(self, line_no):
        super().__init__()
        self.line_no = line_no
        self.diff_syms = {}
        self.slot_syms = set()

    def __contains__(self, name):
        return True

    def __getitem__(self, name):
        sym = sympy.Symbol(name)
        if _STATE_TOKEN_RE.match(name):
            raise ParseError(
                f"state variable {name!r} not allowed in an invariant", self.line_no, 1
            )
        v = token_var(name)
        if v is not None:
            if v.order > DEFAULT_MAX_ORDER:
                raise ParseError(
                    f"derivative order of {name!r} exceeds maximum", self.line_no, 1
                )
            self.diff_syms[sym] = v
            return sym
        if _DPREFIX_RE.match(name):
            raise ParseError(f"malformed derivative token {name!r}", self.line_no, 1)
        if _SLOT_RE.match(name):
            self.slot_syms.add(sym)
        return sym


def render_invariant(spec: InvariantSpec) -> str:
    """Canonical text form; parse_invariant(render_invariant(s)) == s."""

    def mono_str(m: DiffMonomial):
        if m.is_one:
            return "1"
        parts = []
        for v, e in sorted(
            m.powers, key=lambda p: Ranking().key(p[0]), reverse=True
        ):
            tok = var_token(v)
            parts.append(tok if e == 1 else f"{tok}^{e}")
        return "*".join(parts)

    def coeff_str(expr):
        expr = sympy.sympify(expr)
        s = sympy.sstr(expr)
        if expr.is_Add or s.startswith("-"):
            return f"({s})"
        return s

    lhs_parts = []
    for slot in spec.slots:
        factors = []
        if slot.opaque:
            factors.append(slot.id)
            if slot.expr != 1:
                factors.append(coeff_str(slot.expr))
        else:
            factors.append(coeff_str(slot.expr))
        factors.append(mono_str(slot.monomial))
        lhs_parts.append("*".join(factors))
    lhs = " + ".join(lhs_parts) if lhs_parts else "0"
    rhs_parts = []
    for m in _sorted_monomials(spec.xi):
        c = spec.xi[m]
        if c == 1:
            rhs_parts.append(mono_str(m))
        else:
            rhs_parts.append(f"{coeff_str(sympy.sympify(c))}*{mono_str(m)}")
    rhs = " + ".join(rhs_parts) if rhs_parts else "0"
    return f"{lhs} = {rhs}"


def choose_pivot(p: DiffPolynomial, ranking: Ranking = None) -> DiffMonomial:
    """The normalization pivot: among monomials containing the leader, prefer
    degree one in the leader, then the highest monomial."""
    ranking = ranking or Ranking()
    lead = p.leader(ranking)
    candidates = [m for m in p.terms if m.degree(lead) >= 1]
    deg1 = [m for m in candidates if m.degree(lead) == 1]
    pool = deg1 or candidates
    return max(pool, key=lambda m: _monomial_sort_key(m, ranking))


def normalize_monic(
    p: DiffPolynomial, pivot: DiffMonomial = None, name: str = ""
) -> InvariantSpec:
    """Divide through by the pivot coefficient and split into slots and xi."""
    ranking = Ranking()
    if pivot is None:
        pivot = choose_pivot(p, ranking)
    if pivot not in p.terms:
        raise ValueError(f"pivot {pivot!r} does not occur in the polynomial")
    a = p.terms[pivot].to_sympy()
    slots = []
    xi = {}
    for m in _sorted_monomials(p.terms, ranking):
        c = sympy.cancel(p.terms[m].to_sympy() / a)
        if c.free_symbols:
            slots.append(Slot(id="", expr=sympy.cancel(-c), monomial=m, opaque=False))
        else:
            xi[m] = c
    for i, s in enumerate(slots, start=1):
        s.id = f"c{i}"
    return InvariantSpec(slots=slots, xi=xi, name=name)


def substitute_known(spec: InvariantSpec, known: dict) -> InvariantSpec:
    """Apply known parameter values; fully resolved slot terms move into xi."""
    for k, v in known.items():
        if not sympy.sympify(v).is_finite:
            raise ValueError(f"known value for {k} is not finite")
    referenced = set()
    for s in spec.slots:
        referenced |= {sym.name for sym in s.expr.free_symbols}
    unused = set(known) - referenced
    if unused:
        warnings.warn(f"known parameters not present in invariant: {sorted(unused)}")

    subs = {sympy.Symbol(k): v for k, v in known.items()}
    new_slots = []
    xi = dict(spec.xi)
    for slot in spec.slots:
        e = sympy.expand(slot.expr.subs(subs))
        if slot.opaque:
            if e != 0:
                new_slots.append(
                    Slot(slot.id, e, slot.monomial, opaque=True)
                )
            continue
        numeric = sympy.Integer(0)
        unknown = sympy.Integer(0)
        for term in e.args if e.is_Add else (e,):
            if term.free_symbols:
                unknown += term
            else:
                numeric += term
        if numeric != 0:
            xi[slot.monomial] = sympy.expand(xi.get(slot.monomial, 0) - numeric)
            if xi[slot.monomial] == 0:
                del xi[slot.monomial]
        if unknown != 0:
            new_slots.append(Slot(slot.id, unknown, slot.monomial, opaque=False))
    merged_known = dict(spec.known)
    merged_known.update(known)
    return InvariantSpec(
        slots=new_slots,
        xi=xi,
        name=spec.name,
        output_index=spec.output_index,
        known=merged_known,
    )


@dataclass
class IdentifiabilityReport:
    n_params: int
    n_slots: int
    flag: str  # "unidentifiable" | "possibly identifiable"


def identifiability_count(spec: InvariantSpec, model: ModelSpec) -> IdentifiabilityReport:
    """Parameters versus coefficient slots; more parameters than slots means
    the model cannot be identifiable."""
    n_params = model.n_params
    n_slots = spec.n_slots
    flag = "unidentifiable" if n_params > n_slots else "possibly identifiable"
    return IdentifiabilityReport(n_params=n_params, n_slots=n_slots, flag=flag)


def eliminate(model: ModelSpec, name: str = None):
    """Full elimination pipeline: generators -> characteristic set -> monic
    invariant. Returns (InvariantSpec, CharSet)."""
    gens = model_generators(model)
    cs = characteristic_set(gens)
    io_eqs = extract_input_output(cs)
    spec = normalize_monic(io_eqs[0], name=name if name is not None else model.name)
    return spec, cs
