"""Kullback-Leibler neighbourhoods, prior-mass conditions and variance-prior audits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .priors import HalfCauchy, InverseGamma, PointMass, SigmaPriorSpec, Tabulated
from .stat_core import ErrorEstimate, ParamPoint, make_rng, metric_d_many


@dataclass(frozen=True)
class ConditionReport:
    """Outcome of checking ``lhs`` against ``rhs`` for a named condition."""

    condition: str
    lhs: float
    rhs: float
    satisfied: bool
    margin: float
    detail: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class PosteriorSample:
    mu: np.ndarray
    sigma: float


# --------------------------------------------------------------------------
# KL divergence and variation
# --------------------------------------------------------------------------

def _check_pair(truth: ParamPoint, point: ParamPoint):
    if truth.n != point.n:
        raise ValueError(f"dimension mismatch: {truth.n} != {point.n}")


def kl_divergence(truth: ParamPoint, point: ParamPoint) -> float:
    """``K(P_truth, P_point)`` for ``N_n(mu, sigma^2 I)`` laws."""
    _check_pair(truth, point)
    n = truth.n
    ratio = truth.sigma ** 2 / point.sigma ** 2
    dmu2 = float(np.sum((point.mu - truth.mu) ** 2))
    # -log(ratio) - (1 - ratio) is computed stably as -log1p(w) + w
    w = ratio - 1.0
    core = -math.log1p(w) + w
    return max(0.0, 0.5 * n * core + dmu2 / (2.0 * point.sigma ** 2))


def kl_variation(truth: ParamPoint, point: ParamPoint) -> float:
    """``V(P_truth, P_point)``: variance of the log-likelihood ratio under the truth."""
    _check_pair(truth, point)
    n = truth.n
    ratio = truth.sigma ** 2 / point.sigma ** 2
    dmu2 = float(np.sum((point.mu - truth.mu) ** 2))
    return 0.5 * n * (1.0 - ratio) ** 2 + truth.sigma ** 2 * dmu2 / point.sigma ** 4


def log_likelihood_ratio(truth: ParamPoint, point: ParamPoint, y: np.ndarray) -> np.ndarray:
    """``log p_truth(y) - log p_point(y)`` for each row of ``y``."""
    y = np.atleast_2d(y)
    n = truth.n
    r0 = np.sum((y - truth.mu) ** 2, axis=1)
    r1 = np.sum((y - point.mu) ** 2, axis=1)
    return (n * math.log(point.sigma / truth.sigma)
            - r0 / (2 * truth.sigma ** 2) + r1 / (2 * point.sigma ** 2))


# --------------------------------------------------------------------------
# prior mass
# --------------------------------------------------------------------------

def prior_mass_d_box(mu_prior_sampler, sigma_prior: SigmaPriorSpec, truth: ParamPoint,
                     eps: float, reps: int, seed=None) -> ErrorEstimate:
    """Monte Carlo prior mass of ``{||mu - mu0||^2 <= n eps^2, |s - sigma0^2| <= sigma0 eps}``.

    ``mu_prior_sampler(rng, size)`` returns a ``(size, n)`` array of prior
    draws of ``mu``; the variance is drawn independently from
    ``sigma_prior``.  A result with no hits is flagged.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    rng = make_rng(seed)
    n = truth.n
    hits = 0
    chunk = max(1, 1_000_000 // n)
    for start in range(0, reps, chunk):
        m = min(chunk, reps - start)
        mus = np.asarray(mu_prior_sampler(rng, m), dtype=float).reshape(m, n)
        s = np.asarray(sigma_prior.rvs(rng, m), dtype=float).reshape(m)
        ok_mu = np.sum((mus - truth.mu) ** 2, axis=1) <= n * eps ** 2
        ok_s = np.abs(s - truth.sigma ** 2) <= truth.sigma * eps
        hits += int(np.sum(ok_mu & ok_s))
    est = ErrorEstimate.from_counts(hits, reps)
    if hits == 0:
        est = ErrorEstimate(0.0, 0.0, reps, True, "mass below Monte Carlo resolution")
    return est


def sigma_window_mass(spec: SigmaPriorSpec, sigma0: float, eps: float) -> float:
    """``Pi{|sigma^2 - sigma0^2| <= sigma0 eps}`` from the prior CDF."""
    s0 = sigma0 ** 2
    return float(spec.cdf(s0 + sigma0 * eps) - spec.cdf(max(s0 - sigma0 * eps, 0.0)))


# --------------------------------------------------------------------------
# variance prior audits
# --------------------------------------------------------------------------

def lipschitz_constant(spec: SigmaPriorSpec, grid_size: int = 20001):
    """``max |g'|`` over a log-spaced grid on ``(0, q_0.9999]``.

    For parametric families the grid maximum is polished with a bounded
    scalar search on the two neighbouring cells.  Returns ``(L, s_at_max,
    at_lower_edge)``.
    """
    if isinstance(spec, Tabulated):
        slopes = np.abs(spec._slopes)
        i = int(np.argmax(slopes))
        return float(slopes[i]), float(spec.grid[i]), False
    if isinstance(spec, PointMass):
        raise ValueError("a point-mass prior has no density to audit")
    hi = float(spec.ppf(0.9999))
    lo = min(float(spec.ppf(1e-12)), hi * 1e-12)
    lo = max(lo, hi * 1e-15)
    s = np.geomspace(lo, hi, grid_size)
    vals = np.abs(spec.dpdf(s))
    i = int(np.argmax(vals))
    best, s_best = float(vals[i]), float(s[i])
    if 0 < i < grid_size - 1:
        res = optimize.minimize_scalar(lambda x: -abs(float(spec.dpdf(x))),
                                       bounds=(s[i - 1], s[i + 1]), method="bounded",
                                       options={"xatol": 1e-14 * s[i]})
        if -res.fun > best:
            best, s_best = float(-res.fun), float(res.x)
    return best, s_best, i == 0


def tail_profile(spec: SigmaPriorSpec, decades: float = 8.0, points: int = 400):
    """``t * Pi{sigma^2 > t}`` on a log grid from the median out ``decades`` past q_0.9999."""
    t0 = float(spec.ppf(0.5))
    t1 = float(spec.ppf(0.9999)) * 10.0 ** decades
    t = np.geomspace(t0, t1, points)
    return t, t * spec.sf(t)


def audit_sigma_prior(spec: SigmaPriorSpec, sigma0: float, eps_n: float,
                      tail_tol: float = 0.01) -> list[ConditionReport]:
    """Lipschitz, polynomial-tail and density-floor audits of a variance prior.

    * ``lipschitz``: ``L = max |g'|`` is finite and not attained at the
      lower edge of the grid (an edge maximum signals an unbounded slope).
    * ``tail``: ``t Pi{sigma^2 > t}`` stays bounded; operationally its
      log-log slope over the last two decades of the grid is ``<= tail_tol``.
    * ``floor``: ``g(sigma0^2) >= 2 L sigma0 eps_n``.
    """
    if not (sigma0 > 0 and eps_n > 0):
        raise ValueError("sigma0 and eps_n must be positive")
    L, s_at, edge = lipschitz_constant(spec)
    lip = ConditionReport("lipschitz", L, math.inf, bool(math.isfinite(L) and not edge),
                          math.inf if math.isfinite(L) else -math.inf,
                          {"argmax": s_at, "edge": edge})

    t, prof = tail_profile(spec)
    tail_part = t >= t[-1] / 100.0
    with np.errstate(divide="ignore"):
        lt, lp = np.log(t[tail_part]), np.log(prof[tail_part])
    if np.all(np.isfinite(lp)):
        slope = float(np.polyfit(lt, lp, 1)[0])
    else:
        # survival underflowed to zero: tail lighter than any polynomial
        slope = -math.inf
    sup = float(np.max(prof))
    tail = ConditionReport("tail", slope, tail_tol, slope <= tail_tol, tail_tol - slope,
                           {"sup_t_times_sf": sup, "t_max": float(t[-1])})

    g0 = float(spec.pdf(sigma0 ** 2))
    need = 2.0 * L * sigma0 * eps_n
    floor = ConditionReport("floor", g0, need, g0 >= need, g0 - need)
    return [lip, tail, floor]


def _window_report(name, s, lower, upper, detail):
    ok = lower <= s <= upper
    return ConditionReport(name, s, upper, bool(ok), min(s - lower, upper - s),
                           dict(detail, lower=lower, upper=upper))


def example_window_inverse_gamma(a: float, b: float, xi: float, n: int, sigma0_sq: float,
                                 slack: float | None = None) -> ConditionReport:
    """Whether ``sigma0^2`` lies in ``[b / (xi log n), n^{xi/(a+2)} / slack]``.

    ``slack`` defaults to ``log n`` and makes the asymptotic "much less than"
    on the upper side concrete.
    """
    if not 0 < xi < 0.5:
        raise ValueError("xi must lie in (0, 1/2)")
    if n < 2:
        raise ValueError("n must be at least 2")
    logn = math.log(n)
    slack = logn if slack is None else slack
    lower = b / (xi * logn)
    upper = n ** (xi / (a + 2.0)) / slack
    return _window_report("window_inverse_gamma", sigma0_sq, lower, upper,
                          {"a": a, "b": b, "xi": xi, "n": n})


def example_window_half_cauchy(r: float, xi: float, n: int, sigma0_sq: float,
                               slack: float | None = None) -> ConditionReport:
    """Whether ``sigma0^2 <= n^{xi/2} / slack`` (slack defaults to ``log n``)."""
    if not 0 < xi < 0.5:
        raise ValueError("xi must lie in (0, 1/2)")
    if n < 2:
        raise ValueError("n must be at least 2")
    slack = math.log(n) if slack is None else slack
    upper = n ** (xi / 2.0) / slack
    return _window_report("window_half_cauchy", sigma0_sq, 0.0, upper,
                          {"r": r, "xi": xi, "n": n})


# --------------------------------------------------------------------------
# rate sequences
# --------------------------------------------------------------------------

@dataclass
class ContractionConfig:
    """Rate and variance sequences on an ``n`` grid, with the constants they must obey."""

    n_grid: list
    eps_n: list
    sigma0_n: list
    B: float = 1.0
    M: float = 10.0
    xi: float = 0.25

    def check(self) -> list[ConditionReport]:
        n = np.asarray(self.n_grid, dtype=float)
        eps = np.asarray(self.eps_n, dtype=float)
        s0 = np.asarray(self.sigma0_n, dtype=float)
        if not (n.shape == eps.shape == s0.shape) or n.size == 0:
            raise ValueError("n_grid, eps_n and sigma0_n must be nonempty and equally long")
        if np.any(eps <= 0) or np.any(s0 <= 0):
            raise ValueError("eps_n and sigma0_n must be positive")
        if not 0 < self.xi < 0.5:
            raise ValueError("xi must lie in (0, 1/2)")
        ratio = eps / s0
        info = n * ratio ** 2 - np.log(n)
        floor = s0 ** 2 - n ** (-self.B)
        out = [
            ConditionReport("ratio_decreasing", float(np.max(np.diff(ratio))) if n.size > 1 else 0.0,
                            0.0, bool(np.all(np.diff(ratio) < 0)),
                            float(-np.max(np.diff(ratio))) if n.size > 1 else 0.0,
                            {"eps_over_sigma0": ratio.tolist()}),
            ConditionReport("n_eps2_over_sigma2_ge_log_n", float(np.min(info)), 0.0,
                            bool(np.all(info >= 0)), float(np.min(info))),
            ConditionReport("sigma0_sq_gt_n_pow_minus_B", float(np.min(floor)), 0.0,
                            bool(np.all(floor > 0)), float(np.min(floor))),
        ]
        return out


# --------------------------------------------------------------------------
# posterior diagnostics
# --------------------------------------------------------------------------

def bad_set_mass(mus: np.ndarray, sigmas: np.ndarray, truth: ParamPoint, radius: float) -> float:
    """Fraction of draws with ``d((mu, sigma), truth) >= radius``."""
    d = metric_d_many(mus, sigmas, truth)
    return float(np.mean(d >= radius))


def contraction_diagnostic(posterior_samples, truth: ParamPoint, eps_n: float, M: float) -> float:
    """Posterior mass of ``{d >= M eps_n}`` estimated from samples."""
    samples = list(posterior_samples)
    if not samples:
        raise ValueError("need at least one posterior sample")
    mus = np.array([s.mu for s in samples], dtype=float)
    sig = np.array([s.sigma for s in samples], dtype=float)
    return bad_set_mass(mus, sig, truth, M * eps_n)


def fit_rate_exponent(n_values, error_values) -> tuple[float, float]:
    """OLS slope of ``log(error)`` on ``log(n)`` and its R^2."""
    n = np.asarray(n_values, dtype=float)
    e = np.asarray(error_values, dtype=float)
    if n.size < 3 or n.shape != e.shape:
        raise ValueError("need at least 3 (n, error) pairs of equal length")
    if np.any(n <= 0) or np.any(e <= 0):
        raise ValueError("n and error values must be positive")
    x, yv = np.log(n), np.log(e)
    if np.ptp(x) == 0:
        raise ValueError("n values are all equal")
    slope, intercept = np.polyfit(x, yv, 1)
    ss_tot = float(((yv - yv.mean()) ** 2).sum())
    ss_res = float(((yv - slope * x - intercept) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(r2)


__all__ = [
    "ConditionReport", "PosteriorSample", "ContractionConfig", "InverseGamma", "HalfCauchy",
    "Tabulated", "kl_divergence", "kl_variation", "log_likelihood_ratio", "prior_mass_d_box",
    "sigma_window_mass", "lipschitz_constant", "audit_sigma_prior", "example_window_inverse_gamma",
    "example_window_half_cauchy", "bad_set_mass", "contraction_diagnostic", "fit_rate_exponent",
]
