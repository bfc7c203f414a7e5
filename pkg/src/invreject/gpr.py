"""Gaussian-process regression with the squared-exponential kernel.

Hyperparameters are fitted by multi-start maximum likelihood; the posterior
supplies means and variances for the output and its first three derivatives,
since mixed derivatives of the SE kernel are Hermite-polynomial multiples of
the kernel itself.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
import scipy.optimize

from .simulate import TimeSeries

MAX_HERMITE_ORDER = 8
MAX_KERNEL_DERIV_ORDER = 6
_JITTER_ESCALATIONS = 3


class GPError(Exception):
    pass


@dataclass(frozen=True)
class Hyperparams:
    theta2: float  # signal variance
    ell: float  # length scale
    sigma2: float  # observation noise variance

    def __post_init__(self):
        vals = (self.theta2, self.ell, self.sigma2)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("hyperparameters must be finite")
        if self.theta2 <= 0 or self.ell <= 0 or self.sigma2 < 0:
            raise ValueError("require theta2 > 0, ell > 0, sigma2 >= 0")


@dataclass(frozen=True)
class GPPosterior:
    s: np.ndarray  # prediction times
    means: dict  # order -> array aligned with s
    variances: dict  # order -> array aligned with s
    hyperparams: Hyperparams
    nll: float

    @property
    def max_order(self):
        return max(self.means)


def hermite(n: int, x):
    """Probabilists' Hermite polynomial H_n(x) by the three-term recurrence."""
    if n < 0 or n > MAX_HERMITE_ORDER:
        raise ValueError(f"unsupported Hermite order {n} (max {MAX_HERMITE_ORDER})")
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if n == 0:
        return prev if prev.ndim else float(prev)
    cur = x.copy()
    for k in range(1, n):
        prev, cur = cur, x * cur - k * prev
    return cur if cur.ndim else float(cur)


def se_kernel(t, tp, h: Hyperparams):
    d = np.subtract.outer(np.asarray(t, float), np.asarray(tp, float))
    return h.theta2 * np.exp(-(d * d) / (2.0 * h.ell**2))


def se_kernel_deriv(m: int, n: int, t, tp, h: Hyperparams):
    """d^m/dt^m d^n/dt'^n of the SE kernel:
    ((-1)^m / ell^(m+n)) * H_{m+n}((t-t')/ell) * k(t,t')."""
    if m < 0 or n < 0 or m + n > MAX_KERNEL_DERIV_ORDER:
        raise ValueError(f"unsupported kernel derivative order ({m},{n})")
    d = np.subtract.outer(np.asarray(t, float), np.asarray(tp, float))
    r = d / h.ell
    k = h.theta2 * np.exp(-(r * r) / 2.0)
    out = ((-1.0) ** m / h.ell ** (m + n)) * hermite(m + n, r) * k
    return out


def _chol_with_jitter(K, theta2):
    jitter = 0.0
    for attempt in range(_JITTER_ESCALATIONS + 1):
        try:
            M = K if jitter == 0.0 else K + jitter * np.eye(len(K))
            return scipy.linalg.cho_factor(M, lower=True), jitter
        except scipy.linalg.LinAlgError:
            jitter = 1e-10 * theta2 * (10.0**attempt)
    raise GPError("ill-conditioned kernel")


def log_marginal_likelihood(data: TimeSeries, h: Hyperparams) -> float:
    """Negative log marginal likelihood of the observations under a
    zero-mean GP prior with covariance Sigma(t,t) + sigma2*I."""
    if data.n < 1:
        raise GPError("need at least one data point")
    K = se_kernel(data.t, data.t, h) + h.sigma2 * np.eye(data.n)
    cf, _ = _chol_with_jitter(K, h.theta2)
    alpha = scipy.linalg.cho_solve(cf, data.y)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    return float(
        0.5 * data.y @ alpha + 0.5 * logdet + 0.5 * data.n * np.log(2.0 * np.pi)
    )


def _nll_and_grad(log_params, t, y, D2):
    """NLL and its gradient w.r.t. (log theta2, log ell, log sigma2)."""
    # line searches probe extreme log-parameters whose over/underflow is
    # handled by the caller's retry logic; suppress the noise here
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        theta2, ell, sigma2 = np.exp(log_params)
        n = len(y)
        Kse = theta2 * np.exp(-D2 / (2.0 * ell * ell))
        K = Kse + sigma2 * np.eye(n)
        cf, _ = _chol_with_jitter(K, theta2)
        alpha = scipy.linalg.cho_solve(cf, y)
        logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
        nll = 0.5 * y @ alpha + 0.5 * logdet + 0.5 * n * np.log(2.0 * np.pi)

        Kinv = scipy.linalg.cho_solve(cf, np.eye(n))
        W = Kinv - np.outer(alpha, alpha)  # dNLL/dK contracted against dK
        dK_dlt = Kse  # d/d log theta2
        dK_dll = Kse * (D2 / (ell * ell))  # d/d log ell
        grad = np.array(
            [
                0.5 * np.sum(W * dK_dlt),
                0.5 * np.sum(W * dK_dll),
                0.5 * sigma2 * np.trace(W),
            ]
        )
        return float(nll), grad


def grid_starts(data: TimeSeries):
    """The 3x3x3 multi-start grid in (theta2, ell, sigma2)."""
    var = float(np.var(data.y))
    if var <= 0:
        var = 1e-12
    gap = float(np.median(np.diff(data.t))) if data.n > 1 else 1.0
    ell0 = gap * 10.0
    starts = []
    for ft in (0.1, 1.0, 10.0):
        for fl in (0.1, 1.0, 10.0):
            for fs in (1e-4, 1e-2, 1.0):
                starts.append(Hyperparams(ft * var, fl * ell0, fs * var))
    return starts


def fit_hyperparameters(data: TimeSeries, maxiter: int = 200) -> Hyperparams:
    """Maximum-likelihood hyperparameters: 27 grid starts, each refined by
    nonlinear conjugate gradient on the log-parameters."""
    if data.n < 8:
        raise GPError("need at least 8 points to fit hyperparameters")
    y = data.y - np.mean(data.y)
    D2 = np.subtract.outer(data.t, data.t) ** 2
    best = None
    failures = []
    for start in grid_starts(data):
        x0 = np.log([start.theta2, start.ell, start.sigma2])
        try:
            res = scipy.optimize.minimize(
                _nll_and_grad,
                x0,
                args=(data.t, y, D2),
                jac=True,
                method="CG",
                options={"maxiter": maxiter, "gtol": 1e-5},
            )
            cand = (float(res.fun), res.x)
        except (GPError, FloatingPointError, ValueError) as exc:
            failures.append(f"start {start}: {exc}")
            continue
        if not np.isfinite(cand[0]):
            failures.append(f"start {start}: non-finite NLL")
            continue
        if best is None or cand[0] < best[0]:
            best = cand
    if best is None:
        raise GPError("all fitting starts failed: " + "; ".join(failures))
    theta2, ell, sigma2 = np.exp(best[1])
    return Hyperparams(float(theta2), float(ell), float(sigma2))


def posterior_derivatives(
    data: TimeSeries, h: Hyperparams, s, max_order: int = 3
) -> GPPosterior:
    """Posterior mean and variance of y^(i) at times s for i = 0..max_order.

    The Cholesky factorization of Sigma(t,t) + sigma2*I is computed once and
    reused across derivative orders."""
    if not 0 <= max_order <= 3:
        raise ValueError("max_order must be in 0..3")
    s = np.asarray(s, dtype=float)
    if len(s) and (s.min() < data.t.min() - h.ell or s.max() > data.t.max() + h.ell):
        raise GPError("prediction times extrapolate beyond the data range")
    import warnings as _warnings

    if len(s) and (s.min() < data.t.min() or s.max() > data.t.max()):
        _warnings.warn("prediction times extrapolate outside the data range")

    mean_y = float(np.mean(data.y))
    yc = data.y - mean_y
    K = se_kernel(data.t, data.t, h) + h.sigma2 * np.eye(data.n)
    cf, _ = _chol_with_jitter(K, h.theta2)
    alpha = scipy.linalg.cho_solve(cf, yc)
    nll = float(
        0.5 * yc @ alpha
        + np.sum(np.log(np.diag(cf[0])))
        + 0.5 * data.n * np.log(2.0 * np.pi)
    )

    means, variances = {}, {}
    for i in range(max_order + 1):
        cross = se_kernel_deriv(i, 0, s, data.t, h)  # Sigma^(i,0)(s, t)
        prior_diag = np.diag(se_kernel_deriv(i, i, s, s, h))
        mu = cross @ alpha
        V = scipy.linalg.cho_solve(cf, cross.T)
        var = prior_diag - np.einsum("ij,ji->i", cross, V)
        if np.any(var < -1e-10):
            raise GPError(
                f"negative posterior variance at order {i}: min {var.min():.3e}"
            )
        means[i] = mu + mean_y if i == 0 else mu
        variances[i] = np.maximum(var, 0.0)
    return GPPosterior(s=s, means=means, variances=variances, hyperparams=h, nll=nll)


def fit_and_predict(data: TimeSeries, s=None, max_order: int = 3) -> GPPosterior:
    h = fit_hyperparameters(data)
    return posterior_derivatives(data, h, data.t if s is None else s, max_order)


@dataclass(frozen=True)
class GateResult:
    passed: bool
    reasons: tuple
    excluded_points: tuple  # indices into p.s flagged for downstream exclusion


def quality_gate(
    p: GPPosterior, data: TimeSeries, nll_threshold: float = 0.0
) -> GateResult:
    """Gate unreliable fits: a non-negative NLL at the optimum, or too many
    high-variance top-order derivative estimates, disqualify the posterior.
    Individually noisy points are flagged for row exclusion downstream."""
    reasons = []
    if p.nll >= nll_threshold:
        reasons.append(
            f"positive log-likelihood objective (NLL = {p.nll:.4g} >= "
            f"{nll_threshold:.4g}); higher-order derivatives unreliable"
        )
    top = max(p.variances)
    std = np.sqrt(p.variances[top])
    med = float(np.median(std))
    bad = np.flatnonzero(std > 10.0 * med) if med > 0 else np.array([], dtype=int)
    if len(p.s) and len(bad) > 0.2 * len(p.s):
        reasons.append(
            f"{len(bad)}/{len(p.s)} points have order-{top} posterior std "
            f"exceeding 10x the median: indices {bad.tolist()}"
        )
    return GateResult(
        passed=not reasons, reasons=tuple(reasons), excluded_points=tuple(bad.tolist())
    )


def posterior_to_timeseries(p: GPPosterior, data: TimeSeries) -> TimeSeries:
    """Package posterior means as a TimeSeries with estimated derivatives,
    keeping the exact input columns interpolated at the prediction times."""
    inputs = {}
    for u, per in data.inputs.items():
        inputs[u] = {
            k: np.interp(p.s, data.t, arr) if not np.array_equal(p.s, data.t) else arr
            for k, arr in per.items()
        }
    return replace(
        data,
        t=p.s,
        y=p.means[0],
        inputs=inputs,
        y_derivs={k: v for k, v in p.means.items() if k > 0},
    )
