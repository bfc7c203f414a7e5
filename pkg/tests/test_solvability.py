import math

import numpy as np
import pytest
import scipy.integrate

from invreject.diffpoly import DiffMonomial, DiffVar
from invreject.simulate import example31_timeseries
from invreject.solvability import (
    LOW_RANK_WARNING,
    TAU_ZERO_TOL,
    UNINFORMATIVE_WARNING,
    LinearSystem,
    SolvabilityError,
    block_diagonal,
    build_system,
    coefficient_conditioning,
    decide,
    deterministic_reject,
    frobenius_chi_tail,
    monomial_noise_scale,
    pvalue_bound,
    singular_values,
    tropp_tail,
)
from invreject.solvability import test_statistic as tau_statistic
from invreject.solvability import _pvalue_bound_from_scales

y = DiffVar("y", 1, 0)
dy = DiffVar("y", 1, 1)


def _system(A, b, CA=None, Cb=None, eps=0.0, warnings=None):
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    return LinearSystem(
        A=A,
        b=b,
        CA=np.abs(A) if CA is None else CA,
        Cb=np.abs(b) if Cb is None else Cb,
        eps=eps,
        times=np.arange(len(b), dtype=float),
        slot_ids=[f"c{j+1}" for j in range(A.shape[1])],
        warnings=list(warnings or []),
    )


class TestBuildSystem:
    def test_coefficient_recovery(self, comp3_spec):
        # the benchmark model's true input-output relation is
        # d3y + 7 d2y + 14 d1y + 8 y = d2u1 + 5 d1u1 + 5 u1
        est = example31_timeseries(np.linspace(0.0, 1.0, 6))
        sys = build_system(comp3_spec, est)
        kappa, *_ = np.linalg.lstsq(sys.A, sys.b, rcond=None)
        got = dict(zip(sys.slot_ids, kappa))
        want = {"c1": 7.0, "c2": 14.0, "c3": 8.0, "c4": 5.0, "c5": 5.0}
        for k, v in want.items():
            assert got[k] == pytest.approx(v, abs=1e-5), k
        assert tau_statistic(sys) < 1e-6

    def test_row_selection(self, comp3_spec):
        est = example31_timeseries(np.linspace(0.0, 1.0, 6))
        sub = build_system(comp3_spec, est, rows=[0.0, 0.4, 0.8])
        assert sub.m == 3
        assert np.allclose(sub.times, [0.0, 0.4, 0.8])
        with pytest.raises(SolvabilityError, match="not a prediction time"):
            build_system(comp3_spec, est, rows=[0.3])

    def test_uninformative_warning(self, comp3_spec):
        est = example31_timeseries(np.linspace(0.0, 1.0, 6))
        sys = build_system(comp3_spec, est, rows=[0.0, 0.2, 0.4, 0.6])
        assert UNINFORMATIVE_WARNING in sys.warnings  # m=4 <= n=5

    def test_input_columns_have_zero_noise_scale(self, comp3_spec):
        # inputs are closed-form, so their columns carry no noise scale
        est = example31_timeseries(np.linspace(0.0, 1.0, 6))
        sys = build_system(comp3_spec, est)
        cols = dict(zip(sys.slot_ids, sys.CA.T))
        assert np.all(cols["c4"] == 0) and np.all(cols["c5"] == 0)
        assert np.all(cols["c1"] > 0)

    def test_missing_derivative_order(self, comp3_spec):
        est = example31_timeseries(np.linspace(0.0, 1.0, 6))
        est.y_derivs.pop(3)
        with pytest.raises(SolvabilityError, match="order 3"):
            build_system(comp3_spec, est)


class TestMonomialNoiseScale:
    def test_hand_oracle(self):
        psi = DiffMonomial.of((y, 2), dy)
        vals = {y: 3.0, dy: 2.0}
        # |y^2 dy| * sqrt(2^2 + 1^2) = 18 sqrt(5)
        assert monomial_noise_scale(psi, vals) == pytest.approx(18 * math.sqrt(5))
        assert monomial_noise_scale(psi, vals, eps=0.1) == pytest.approx(1.8 * math.sqrt(5))

    def test_noisy_subset(self):
        psi = DiffMonomial.of((y, 2), dy)
        vals = {y: 3.0, dy: 2.0}
        assert monomial_noise_scale(psi, vals, noisy={y}) == pytest.approx(36.0)
        assert monomial_noise_scale(psi, vals, noisy=set()) == 0.0


class TestStatistic:
    def test_exact_consistency(self):
        # b in the column span of A: augmenting adds no new singular direction
        A = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        b = A @ np.array([2.0, -1.0])
        assert tau_statistic(_system(A, b)) == pytest.approx(0.0, abs=1e-14)

    def test_inconsistency_measured(self):
        A = np.array([[1.0], [1.0], [1.0]])
        b = np.array([0.0, 1.0, 2.0])
        tau = tau_statistic(_system(A, b))
        # residual of the best fit is sqrt(2); tau is bounded by it
        assert 0 < tau <= math.sqrt(2.0) + 1e-12

    def test_wide_system_zero_padded(self):
        # m <= n: sigma_{n+1} does not exist and is treated as zero
        A = np.ones((2, 3))
        sys = _system(A, [1.0, 2.0])
        assert tau_statistic(sys) == 0.0
        assert UNINFORMATIVE_WARNING not in sys.warnings  # only build_system adds it

    def test_singular_values_shapes(self):
        sys = _system(np.eye(3), [1.0, 0.0, 0.0])
        sv_A, sv_Ab = singular_values(sys)
        assert len(sv_A) == 3 and len(sv_Ab) == 3


class TestConditioning:
    def test_orthonormal_columns(self):
        q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((8, 3)))
        assert coefficient_conditioning(_system(q, np.zeros(8))) == pytest.approx(1.0)

    def test_column_scale_invariance(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((10, 4))
        c1 = coefficient_conditioning(_system(A, np.zeros(10)))
        c2 = coefficient_conditioning(_system(A * [1e6, 1.0, 1e-6, 42.0], np.zeros(10)))
        assert c1 == pytest.approx(c2, rel=1e-10)

    def test_duplicate_column_degenerate(self):
        A = np.column_stack([np.arange(1.0, 6.0), np.arange(1.0, 6.0)])
        assert coefficient_conditioning(_system(A, np.zeros(5))) > 1e10

    def test_zero_column_infinite(self):
        A = np.column_stack([np.arange(1.0, 6.0), np.zeros(5)])
        assert coefficient_conditioning(_system(A, np.zeros(5))) == float("inf")

    def test_empty_system(self):
        sys = LinearSystem(
            A=np.zeros((3, 0)), b=np.zeros(3), CA=np.zeros((3, 0)),
            Cb=np.zeros(3), eps=0.0, times=np.arange(3.0), slot_ids=[],
        )
        assert coefficient_conditioning(sys) == 1.0


class TestDeterministicRule:
    def test_weyl_rule(self):
        A = np.array([[1.0], [1.0], [1.0]])
        sys = _system(A, [0.0, 1.0, 2.0])
        tau = tau_statistic(sys)
        assert deterministic_reject(sys, tau / 2) == "reject"
        assert deterministic_reject(sys, tau * 2) == "compatible"
        with pytest.raises(ValueError):
            deterministic_reject(sys, -1.0)


class TestTailBounds:
    def _empirical(self, C, stat, n=4000, seed=0):
        rng = np.random.default_rng(seed)
        C = np.atleast_2d(C)
        vals = np.array(
            [stat(C * rng.standard_normal(C.shape)) for _ in range(n)]
        )
        return vals

    def test_tropp_dominates_monte_carlo(self):
        C = np.array([[1.0, 0.5], [0.2, 0.8], [0.4, 0.1]])
        vals = self._empirical(C, lambda M: np.linalg.svd(M, compute_uv=False)[0])
        for x in (1.0, 2.0, 3.0, 4.0):
            emp = np.mean(vals >= x)
            assert emp <= tropp_tail(C, x) + 0.02

    def test_chi_dominates_monte_carlo(self):
        C = np.array([[1.0, 0.5], [0.2, 0.8], [0.4, 0.1]])
        vals = self._empirical(C, lambda M: np.linalg.norm(M))
        for x in (1.0, 2.0, 3.0):
            emp = np.mean(vals >= x)
            assert emp <= frobenius_chi_tail(C, x) + 0.02

    def test_degenerate_cases(self):
        Z = np.zeros((2, 2))
        assert tropp_tail(Z, 1.0) == 0.0 and tropp_tail(Z, 0.0) == 1.0
        assert frobenius_chi_tail(Z, 1.0) == 0.0 and frobenius_chi_tail(Z, 0.0) == 1.0
        with pytest.raises(ValueError):
            tropp_tail(Z, -1.0)
        with pytest.raises(ValueError):
            frobenius_chi_tail(Z, -1.0)


class TestPValueBound:
    def test_p1_matches_quadrature(self):
        sA2, sB2, m, n = 0.3, 0.07, 6, 4
        for x in (0.1, 0.5, 1.3):
            P1, _, _ = _pvalue_bound_from_scales(sA2, sB2, x, m, n)
            integrand = lambda u: math.exp(
                -((x - u) ** 2) / (2 * sA2) - u * u / (2 * sB2)
            )
            quad, _ = scipy.integrate.quad(integrand, 0.0, x, epsabs=1e-14)
            assert P1 == pytest.approx((m + n) ** 2 * quad, rel=1e-8)

    def test_zero_scales_branch(self):
        P1, P2, p = _pvalue_bound_from_scales(0.0, 0.0, 0.0, 3, 2)
        assert (P1, P2, p) == (0.0, 1.0, 1.0)
        P1, P2, p = _pvalue_bound_from_scales(0.0, 0.0, 2 * TAU_ZERO_TOL, 3, 2)
        assert p == 0.0

    def test_scaling_invariance(self):
        # rescaling the whole system rescales tau and the noise scales alike,
        # so the p-value bound is unchanged
        rng = np.random.default_rng(2)
        A = rng.standard_normal((8, 3))
        b = rng.standard_normal(8)
        base = _system(A, b, eps=0.05)
        scaled = _system(1e3 * A, 1e3 * b, eps=0.05)
        p0 = pvalue_bound(base, tau_statistic(base))[2]
        p1 = pvalue_bound(scaled, tau_statistic(scaled))[2]
        assert p0 == pytest.approx(p1, rel=1e-10)


class TestDecide:
    def test_exact_data_compatible(self, comp3_spec):
        est = example31_timeseries(np.linspace(0.0, 1.0, 6))
        rep = decide(build_system(comp3_spec, est, eps=0.0))
        assert rep.verdict == "compatible"
        assert rep.tau <= TAU_ZERO_TOL
        assert rep.p_bound == 1.0

    def test_genuine_violation_rejected(self):
        # a well-conditioned system whose b has a residual component far
        # larger than the noise scales must be rejected
        rng = np.random.default_rng(4)
        A = 100.0 * rng.standard_normal((12, 2))
        resid = rng.standard_normal(12)
        resid -= A @ np.linalg.lstsq(A, resid, rcond=None)[0]
        b = A @ np.array([1.0, -2.0]) + 5.0 * resid / np.linalg.norm(resid)
        rep = decide(_system(A, b, eps=1e-4))
        assert rep.verdict == "reject"
        assert rep.p_bound < 1e-10

    def test_wide_system_disqualified(self, comp3_spec):
        est = example31_timeseries(np.linspace(0.0, 1.0, 6))
        sys = build_system(comp3_spec, est, rows=[0.0, 0.2, 0.4, 0.6], eps=1e-4)
        sys.b = sys.b + 50.0
        rep = decide(sys)
        assert rep.verdict == "compatible"
        assert UNINFORMATIVE_WARNING in rep.warnings

    def test_low_rank_warning(self):
        A = np.column_stack([np.arange(1.0, 7.0), np.arange(1.0, 7.0) * (1 + 1e-14)])
        rep = decide(_system(A, np.ones(6), eps=0.01))
        assert LOW_RANK_WARNING in rep.warnings

    def test_alpha_validation(self):
        sys = _system(np.eye(3), np.zeros(3))
        with pytest.raises(ValueError):
            decide(sys, alpha=0.0)
        with pytest.raises(ValueError):
            decide(sys, alpha=1.5)

    def test_report_serializes(self, comp3_spec):
        est = example31_timeseries(np.linspace(0.0, 1.0, 6))
        d = decide(build_system(comp3_spec, est)).to_dict()
        assert d["m"] == 6 and d["n"] == 5
        assert d["verdict"] == "compatible"
        assert isinstance(d["sv_A"], list) and len(d["sv_A"]) == 5


class TestBlockDiagonal:
    def test_structure(self):
        s1 = _system(np.ones((3, 2)), np.ones(3), eps=0.1)
        s2 = _system(2 * np.ones((4, 1)), np.zeros(4), eps=0.2)
        combo = block_diagonal([s1, s2])
        assert combo.A.shape == (7, 3)
        assert np.all(combo.A[:3, :2] == 1) and np.all(combo.A[3:, 2:] == 2)
        assert np.all(combo.A[:3, 2:] == 0) and np.all(combo.A[3:, :2] == 0)
        assert combo.eps == 0.2
        assert combo.blocks == [(0, 3, 0, 2), (3, 7, 2, 3)]
        assert combo.slot_ids == ["c1", "c2", "c1"]

    def test_empty(self):
        with pytest.raises(ValueError):
            block_diagonal([])


class TestLinearSystemValidation:
    def test_negative_noise_scale(self):
        with pytest.raises(ValueError, match="non-negative"):
            _system(np.eye(2), np.zeros(2), CA=-np.eye(2), Cb=np.zeros(2))

    def test_nonfinite(self):
        with pytest.raises(ValueError, match="NaN or Inf"):
            _system(np.eye(2), [np.nan, 0.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimensions"):
            _system(np.eye(2), np.zeros(3))
