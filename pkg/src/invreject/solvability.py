"""Solvability testing of an invariant against data.

The invariant's slot terms evaluated at sampled times give a linear system
A kappa = b in the unknown coefficients. The test statistic is the smallest
singular value of the augmented matrix; Weyl's inequality converts it into a
deterministic rejection rule, and Hadamard noise-scale matrices feed the
Tropp and Frobenius-chi tail bounds for a statistically calibrated verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.special

from .diffpoly import DiffMonomial, DiffVar
from .invariant import InvariantSpec
from .simulate import TimeSeries

UNINFORMATIVE_WARNING = "uninformative: m <= n (more unknowns than rows)"
# below this the statistic is treated as numerically zero (consistent system)
TAU_ZERO_TOL = 1e-8
LOW_RANK_WARNING = "A is numerically low-rank"


class SolvabilityError(Exception):
    pass


@dataclass
class LinearSystem:
    A: np.ndarray  # m x n, rows = time points, columns = slots
    b: np.ndarray  # m
    CA: np.ndarray  # m x n noise-scale matrix (epsilon NOT included)
    Cb: np.ndarray  # m noise-scale vector
    eps: float  # relative noise level
    times: np.ndarray
    slot_ids: list
    blocks: list = None  # [(row_start, row_stop, col_start, col_stop), ...]
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if self.A.size == 0:
            self.A = self.A.reshape(len(self.b), 0)
        self.b = np.asarray(self.b, dtype=float)
        self.CA = np.asarray(self.CA, dtype=float).reshape(self.A.shape)
        self.Cb = np.asarray(self.Cb, dtype=float)
        m, n = self.A.shape
        if self.b.shape != (m,) or self.Cb.shape != (m,):
            raise ValueError("inconsistent system dimensions")
        if np.any(self.CA < 0) or np.any(self.Cb < 0):
            raise ValueError("noise scales must be entrywise non-negative")
        for arr in (self.A, self.b, self.CA, self.Cb):
            if not np.all(np.isfinite(arr)):
                raise ValueError("linear system contains NaN or Inf")
        if self.blocks is None:
            self.blocks = [(0, m, 0, n)]

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.A.shape[1]


@dataclass
class SolvabilityReport:
    tau: float
    sv_A: np.ndarray
    sv_Ab: np.ndarray
    sigmaA2: float
    sigmaB2: float
    P1: float
    P2: float
    p_bound: float
    alpha: float
    verdict: str  # "reject" | "compatible"
    warnings: list
    m: int = 0
    n: int = 0

    def to_dict(self):
        return {
            "m": self.m,
            "n": self.n,
            "tau": self.tau,
            "sv_A": [float(v) for v in self.sv_A],
            "sv_Ab": [float(v) for v in self.sv_Ab],
            "sigmaA2": self.sigmaA2,
            "sigmaB2": self.sigmaB2,
            "P1": self.P1,
            "P2": self.P2,
            "p_bound": self.p_bound,
            "alpha": self.alpha,
            "verdict": self.verdict,
            "warnings": list(self.warnings),
        }


def _series_value(est: TimeSeries, v: DiffVar, idx):
    if v.kind == "y":
        if v.order == 0:
            return est.y[idx]
        if v.order not in est.y_derivs:
            raise SolvabilityError(
                f"data does not provide output derivative order {v.order}"
            )
        return est.y_derivs[v.order][idx]
    if v.kind == "u":
        name = f"u{v.index}"
        per = est.inputs.get(name)
        if per is None or v.order not in per:
            raise SolvabilityError(
                f"data does not provide input {name} derivative order {v.order}"
            )
        return per[v.order][idx]
    raise SolvabilityError(f"state variable {v!r} cannot appear in an invariant")


def _eval_monomial(m: DiffMonomial, est, idx):
    val = np.ones_like(np.asarray(est.t, dtype=float)[idx])
    for v, e in m.powers:
        val = val * _series_value(est, v, idx) ** e
    return val


def monomial_noise_scale(psi: DiffMonomial, values: dict, eps: float = 1.0, noisy=None):
    """Hadamard noise scale of one monomial entry: ||grad psi(x) o x||.

    For psi = prod x_k^{a_k} this is |psi(x)| * sqrt(sum a_k^2), summing over
    the variables regarded as noisy (all of them by default)."""
    val = 1.0
    ssq = 0.0
    for v, e in psi.powers:
        val *= values[v] ** e
        if noisy is None or v in noisy:
            ssq += e * e
    return eps * abs(val) * math.sqrt(ssq)


def _gradient_circ_x(coeff_monos, est, idx, noisy):
    """Components of (grad of sum_m c_m * m) o x over the noisy variables,
    evaluated at every row in idx. Returns dict var -> array."""
    comps = {}
    for c, mono in coeff_monos:
        for v, e in mono.powers:
            if v not in noisy:
                continue
            # (d m / d v) * v = e * m(x)
            term = float(c) * e * _eval_monomial(mono, est, idx)
            comps[v] = comps.get(v, 0.0) + term
    return comps


def build_system(
    spec: InvariantSpec, est: TimeSeries, rows=None, eps: float = 0.0
) -> LinearSystem:
    """Evaluate the invariant's slot monomials and xi on the data.

    A_{ij} = (slot j multiplier) * psi_j at row i; b_i = xi at row i. The
    noise-scale matrices follow the monomial-gradient rule with only the
    output and its derivatives treated as noisy (inputs are closed-form)."""
    times = np.asarray(est.t, dtype=float)
    if rows is None:
        idx = np.arange(len(times))
    else:
        rows = np.asarray(rows, dtype=float)
        idx = []
        for r in rows:
            j = np.flatnonzero(np.isclose(times, r, rtol=0, atol=1e-12))
            if len(j) == 0:
                raise SolvabilityError(f"row time {r} is not a prediction time")
            idx.append(j[0])
        idx = np.asarray(idx, dtype=int)
    sel_t = times[idx]
    m = len(idx)
    n = spec.n_slots

    noisy = {v for v in spec.variables() if v.kind == "y"}
    warnings = []
    A = np.zeros((m, n))
    CA = np.zeros((m, n))
    slot_ids = []
    for j, slot in enumerate(spec.slots):
        if slot.opaque:
            if slot.expr.free_symbols:
                raise SolvabilityError(
                    f"slot {slot.id} multiplier {slot.expr} is not numeric"
                )
            mult = float(slot.expr)
        else:
            mult = 1.0
        psi = _eval_monomial(slot.monomial, est, idx)
        A[:, j] = mult * psi
        a2 = sum(e * e for v, e in slot.monomial.powers if v in noisy)
        CA[:, j] = abs(mult) * np.abs(psi) * math.sqrt(a2)
        slot_ids.append(slot.id)

    b = np.zeros(m)
    coeff_monos = [(float(c), mono) for mono, c in spec.xi.items()]
    for c, mono in coeff_monos:
        b += c * _eval_monomial(mono, est, idx)
    comps = _gradient_circ_x(coeff_monos, est, idx, noisy)
    Cb = np.sqrt(sum(np.asarray(v) ** 2 for v in comps.values())) if comps else np.zeros(m)
    Cb = np.broadcast_to(np.asarray(Cb, dtype=float), (m,)).copy()

    if m <= n:
        warnings.append(UNINFORMATIVE_WARNING)
    return LinearSystem(
        A=A, b=b, CA=CA, Cb=Cb, eps=float(eps), times=sel_t,
        slot_ids=slot_ids, warnings=warnings,
    )


def block_diagonal(systems) -> LinearSystem:
    """Stack per-output systems into the block-diagonal multi-output layout."""
    if not systems:
        raise ValueError("no systems to combine")
    m = sum(s.m for s in systems)
    n = sum(s.n for s in systems)
    A = np.zeros((m, n))
    CA = np.zeros((m, n))
    b = np.zeros(m)
    Cb = np.zeros(m)
    times = np.concatenate([s.times for s in systems])
    blocks = []
    slot_ids = []
    warnings = []
    r = c = 0
    for s in systems:
        A[r : r + s.m, c : c + s.n] = s.A
        CA[r : r + s.m, c : c + s.n] = s.CA
        b[r : r + s.m] = s.b
        Cb[r : r + s.m] = s.Cb
        blocks.append((r, r + s.m, c, c + s.n))
        slot_ids.extend(s.slot_ids)
        warnings.extend(w for w in s.warnings if w != UNINFORMATIVE_WARNING)
        r += s.m
        c += s.n
    eps = max(s.eps for s in systems)
    if m <= n:
        warnings.append(UNINFORMATIVE_WARNING)
    return LinearSystem(
        A=A, b=b, CA=CA, Cb=Cb, eps=eps, times=times,
        slot_ids=slot_ids, blocks=blocks, warnings=warnings,
    )


def test_statistic(sys: LinearSystem) -> float:
    """tau = sigma_{n+1} of the augmented matrix [A, b]."""
    aug = np.column_stack([sys.A, sys.b])
    try:
        sv = np.linalg.svd(aug, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise SolvabilityError(f"SVD failed: {exc}") from exc
    k = sys.n  # zero-based index of sigma_{n+1}
    return float(sv[k]) if k < len(sv) else 0.0


def singular_values(sys: LinearSystem):
    sv_A = (
        np.linalg.svd(sys.A, compute_uv=False)
        if sys.n > 0
        else np.array([])
    )
    sv_Ab = np.linalg.svd(np.column_stack([sys.A, sys.b]), compute_uv=False)
    return sv_A, sv_Ab


def coefficient_conditioning(sys: LinearSystem) -> float:
    """Condition number of A after column equilibration.

    Rescaling column j rescales kappa_j, which leaves solvability unchanged,
    so this measures intrinsic degeneracy rather than monomial scale spread.
    A large value means the data cannot pin down the coefficients: the system
    is solvable only through a numerically rank-deficient fit."""
    if sys.n == 0:
        return 1.0
    norms = np.linalg.norm(sys.A, axis=0)
    if np.any(norms == 0):
        return float("inf")
    sv = np.linalg.svd(sys.A / norms, compute_uv=False)
    return float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")


def deterministic_reject(sys: LinearSystem, perturbation_norm_bound: float) -> str:
    """Weyl-inequality verdict: reject iff tau exceeds the supplied bound on
    ||[A_tilde - A, b_tilde - b]|| (Frobenius norm upper-bounds the spectral)."""
    if perturbation_norm_bound < 0:
        raise ValueError("perturbation norm bound must be non-negative")
    tau = test_statistic(sys)
    return "reject" if tau > perturbation_norm_bound else "compatible"


def _hadamard_variance(C) -> float:
    """Tropp variance parameter: max squared row/column norm of C."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.size == 0:
        return 0.0
    rows = np.sum(C * C, axis=1).max()
    cols = np.sum(C * C, axis=0).max()
    return float(max(rows, cols))


def tropp_tail(C, x: float) -> float:
    """Pr(||C o Z|| >= x) <= (m+n) exp(-x^2 / (2 sigma^2)), capped at 1."""
    if x < 0:
        raise ValueError("x must be non-negative")
    C = np.atleast_2d(np.asarray(C, dtype=float))
    m, n = C.shape
    s2 = _hadamard_variance(C)
    if s2 == 0.0:
        return 0.0 if x > 0 else 1.0
    return min(1.0, (m + n) * math.exp(-(x * x) / (2.0 * s2)))


def frobenius_chi_tail(C, x: float) -> float:
    """Cross-check bound: ||C o Z||_F <= ||C||_F ||Z'||... more precisely
    Pr(chi_{mn} >= x / ||C||_F) via the upper regularized incomplete gamma."""
    if x < 0:
        raise ValueError("x must be non-negative")
    C = np.atleast_2d(np.asarray(C, dtype=float))
    m, n = C.shape
    fro = float(np.linalg.norm(C))
    if fro == 0.0:
        return 0.0 if x > 0 else 1.0
    z = x / fro
    return min(1.0, float(scipy.special.gammaincc(m * n / 2.0, z * z / 2.0)))


def _phi(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def pvalue_bound(sys: LinearSystem, tau: float):
    """(P1, P2, p_bound) per the completed-square closed form.

    sigma_A^2 and sigma_B^2 come from CA and Cb by the Tropp variance rule,
    scaled by the relative noise level eps."""
    eps = sys.eps
    sA2 = eps * eps * _hadamard_variance(sys.CA)
    sB2 = eps * eps * _hadamard_variance(sys.Cb.reshape(-1, 1))
    return _pvalue_bound_from_scales(sA2, sB2, tau, sys.m, sys.n)


def _pvalue_bound_from_scales(sA2, sB2, x, m, n):
    tot = sA2 + sB2
    if tot == 0.0:
        p = 0.0 if x > TAU_ZERO_TOL else 1.0
        return 0.0, p, p
    if sA2 > 0:
        P2 = (m + n) * math.exp(-(x * x) / (2.0 * sA2))
    else:
        P2 = 0.0 if x > 0 else (m + n)
    if sA2 > 0 and sB2 > 0:
        s2 = sA2 * sB2 / tot
        s = math.sqrt(s2)
        a = sA2 / tot
        P1 = (
            math.sqrt(2.0 * math.pi)
            * s
            * (m + n) ** 2
            * (_phi((1.0 - a) * x / s) - _phi(-a * x / s))
            * math.exp(-(x * x) / (2.0 * tot))
        )
    else:
        P1 = 0.0
    return float(P1), float(P2), float(min(1.0, P1 + P2))


def decide(sys: LinearSystem, alpha: float = 0.05) -> SolvabilityReport:
    """Full statistical verdict for one system."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    tau = test_statistic(sys)
    sv_A, sv_Ab = singular_values(sys)
    P1, P2, p_bound = pvalue_bound(sys, tau)
    warnings = list(sys.warnings)
    disqualified = UNINFORMATIVE_WARNING in warnings
    if sys.n > 0 and len(sv_A) == sys.n and sv_A[0] > 0:
        if sv_A[-1] < 1e-8 * sv_A[0]:
            warnings.append(LOW_RANK_WARNING)
    eps = sys.eps
    sA2 = eps * eps * _hadamard_variance(sys.CA)
    sB2 = eps * eps * _hadamard_variance(sys.Cb.reshape(-1, 1))
    verdict = "reject" if (p_bound <= alpha and not disqualified) else "compatible"
    return SolvabilityReport(
        tau=tau,
        sv_A=sv_A,
        sv_Ab=sv_Ab,
        sigmaA2=sA2,
        sigmaB2=sB2,
        P1=P1,
        P2=P2,
        p_bound=p_bound,
        alpha=alpha,
        verdict=verdict,
        warnings=warnings,
        m=sys.m,
        n=sys.n,
    )
