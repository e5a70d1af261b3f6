"""Core numerics shared by every other module.

The parameter space is pairs ``(mu, sigma)`` with ``mu`` in R^n and
``sigma > 0``.  Distances are measured with

    d((mu1, s1), (mu2, s2))^2 = ||mu1 - mu2||^2 / n + (s1 - s2)^2

which is the Euclidean distance between ``(mu / sqrt(n), sigma)`` vectors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special


class ConvergenceError(RuntimeError):
    """A series or quadrature did not reach its tolerance."""


# --------------------------------------------------------------------------
# random streams
# --------------------------------------------------------------------------

def make_rng(seed=None) -> np.random.Generator:
    """Return a counter-based (Philox) generator for ``seed``.

    Generators are passed through unchanged so callers can share a stream.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def task_seed(seed: int, *key: int) -> np.random.SeedSequence:
    """Independent stream for a task identified by an integer key.

    The stream depends only on ``(seed, key)``, never on scheduling order.
    """
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))


# --------------------------------------------------------------------------
# parameter points
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamPoint:
    """A mean vector and a standard deviation."""

    mu: np.ndarray
    sigma: float

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", float(self.sigma))
        if mu.size == 0:
            raise ValueError("mu must have at least one entry")
        if not np.all(np.isfinite(mu)):
            raise ValueError("mu must be finite")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")

    @property
    def n(self) -> int:
        return self.mu.size

    def embed(self) -> np.ndarray:
        """The vector ``(mu / sqrt(n), sigma)`` in which d is Euclidean."""
        return np.append(self.mu / math.sqrt(self.n), self.sigma)


@dataclass(frozen=True)
class ErrorEstimate:
    """A Monte Carlo proportion with its binomial standard error."""

    estimate: float
    std_error: float
    reps: int
    flagged: bool = False
    note: str = ""

    @classmethod
    def from_counts(cls, hits: int, reps: int, note: str = "") -> "ErrorEstimate":
        if reps < 1:
            raise ValueError("reps must be >= 1")
        p = hits / reps
        se = math.sqrt(p * (1.0 - p) / reps)
        flagged = hits == 0
        return cls(p, se, reps, flagged, note or ("zero hits" if flagged else ""))


def metric_d(a: ParamPoint, b: ParamPoint) -> float:
    if a.n != b.n:
        raise ValueError(f"dimension mismatch: {a.n} != {b.n}")
    diff = a.mu - b.mu
    return math.sqrt(float(diff @ diff) / a.n + (a.sigma - b.sigma) ** 2)


def metric_d_many(mus: np.ndarray, sigmas: np.ndarray, ref: ParamPoint) -> np.ndarray:
    """Vectorised ``metric_d`` of rows ``(mus[i], sigmas[i])`` to ``ref``."""
    mus = np.atleast_2d(mus)
    if mus.shape[1] != ref.n:
        raise ValueError(f"dimension mismatch: {mus.shape[1]} != {ref.n}")
    diff = mus - ref.mu
    return np.sqrt(np.einsum("ij,ij->i", diff, diff) / ref.n + (np.asarray(sigmas) - ref.sigma) ** 2)


def sample_observation(truth: ParamPoint, rng_seed=None, size: int | None = None) -> np.ndarray:
    """Draw ``y ~ N_n(mu, sigma^2 I)``; ``size`` adds a leading batch axis."""
    rng = make_rng(rng_seed)
    shape = (truth.n,) if size is None else (size, truth.n)
    return truth.mu + truth.sigma * rng.standard_normal(shape)


# --------------------------------------------------------------------------
# chi-squared tails
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TailBoundReport:
    k: int
    t: float
    bound: float
    exact: float

    @property
    def valid(self) -> bool:
        return self.bound >= self.exact


def _check_kt(k, t):
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")


def chi2_cdf(k: float, x):
    """Central chi-squared CDF, ``P(chi2_k <= x)``, via the regularized gamma."""
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    return special.gammainc(k / 2.0, x / 2.0)


def chi2_sf(k: float, x):
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    return special.gammaincc(k / 2.0, x / 2.0)


def chi2_upper_tail_bound(k: int, t: float) -> float:
    """Bound ``e^{-t}`` on ``P(chi2_k - k >= 2 sqrt(kt) + 2t)``."""
    _check_kt(k, t)
    return math.exp(-t)


def chi2_lower_tail_bound(k: int, t: float) -> float:
    """Bound ``e^{-t}`` on ``P(chi2_k - k <= -2 sqrt(kt))``."""
    _check_kt(k, t)
    return math.exp(-t)


def chi2_upper_tail_report(k: int, t: float) -> TailBoundReport:
    exact = float(chi2_sf(k, k + 2.0 * math.sqrt(k * t) + 2.0 * t))
    return TailBoundReport(k, t, chi2_upper_tail_bound(k, t), exact)


def chi2_lower_tail_report(k: int, t: float) -> TailBoundReport:
    x = k - 2.0 * math.sqrt(k * t)
    # P(chi2 <= x) is zero once x <= 0
    exact = float(chi2_cdf(k, x)) if x > 0 else 0.0
    return TailBoundReport(k, t, chi2_lower_tail_bound(k, t), exact)


def chi2_cdf_lower_bound(k: int, t: float) -> float:
    """``(t/2)^{k/2} e^{-t/2} / Gamma(k/2 + 1)``, a lower bound on ``P(chi2_k <= t)``."""
    _check_kt(k, t)
    log_b = 0.5 * k * math.log(t / 2.0) - t / 2.0 - math.lgamma(k / 2.0 + 1.0)
    return min(1.0, math.exp(log_b))


def expected_l1_norm(n: int) -> float:
    """``E ||z||_1`` for ``z ~ N_n(0, I)``."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    return n * math.sqrt(2.0 / math.pi)


def noncentral_chi2_cdf(k: float, lam: float, t: float, tol: float = 1e-10,
                        max_terms: int = 100_000) -> float:
    """CDF of the noncentral chi-squared distribution by Poisson mixing.

    ``P(chi2_{k,lam} <= t) = sum_j Pois(j; lam/2) P(chi2_{k+2j} <= t)``.
    Summation starts at the Poisson mode and walks outwards until the
    neglected Poisson mass is below ``tol``, which bounds the truncation
    error because every central CDF term is at most one.
    """
    if not (k > 0 and lam >= 0 and t >= 0) or not all(map(math.isfinite, (k, lam, t))):
        raise ValueError("k must be positive, lam and t nonnegative and finite")
    if t == 0:
        return 0.0
    half = lam / 2.0
    if half == 0.0:  # lam zero or so small that lam / 2 underflows
        return float(chi2_cdf(k, t))
    mode = int(math.floor(half))

    def log_w(j):
        return -half + j * math.log(half) - math.lgamma(j + 1.0)

    total = 0.0
    mass = 0.0
    j = mode
    up_done = False
    lo = mode - 1
    terms = 0
    # upward from the mode
    while not up_done:
        w = math.exp(log_w(j))
        total += w * float(chi2_cdf(k + 2 * j, t))
        mass += w
        j += 1
        terms += 1
        # remaining upper mass is bounded by a geometric tail once j > half
        if j > half:
            ratio = half / (j + 1)
            up_done = w * ratio / (1.0 - ratio) < tol / 2
        if terms > max_terms:
            raise ConvergenceError("noncentral chi2 series did not converge")
    # downward from the mode
    while lo >= 0:
        w = math.exp(log_w(lo))
        total += w * float(chi2_cdf(k + 2 * lo, t))
        mass += w
        lo -= 1
        terms += 1
        if w < tol * 1e-3 and 1.0 - mass < tol:
            break
        if terms > max_terms:
            raise ConvergenceError("noncentral chi2 series did not converge")
    if 1.0 - mass > 10 * tol:
        raise ConvergenceError(f"Poisson mass captured only {mass!r}")
    return min(1.0, max(0.0, total))


# --------------------------------------------------------------------------
# L1-norm concentration
# --------------------------------------------------------------------------

@dataclass
class L1DecayFit:
    """Empirical tail frequencies of ``| ||z||_1 - E||z||_1 |`` and their fit."""

    t: np.ndarray
    freq: np.ndarray
    slope: float
    k_hat: float
    r_squared: float
    extra: dict = field(default_factory=dict)


def fit_l1_tail_decay(n: int, reps: int, t_values, seed=None) -> L1DecayFit:
    """Regress log tail frequency on ``t^2 / n``; ``k_hat = -slope``.

    Points with zero observed exceedances are dropped before fitting.
    """
    rng = make_rng(seed)
    t_values = np.asarray(t_values, dtype=float)
    dev = np.empty(reps)
    chunk = max(1, 2_000_000 // n)
    for start in range(0, reps, chunk):
        m = min(chunk, reps - start)
        z = rng.standard_normal((m, n))
        dev[start:start + m] = np.abs(z).sum(axis=1) - expected_l1_norm(n)
    dev = np.abs(dev)
    freq = np.array([(dev > t).mean() for t in t_values])
    keep = freq > 0
    x = t_values[keep] ** 2 / n
    yv = np.log(freq[keep])
    if keep.sum() < 2:
        raise ValueError("too few nonzero tail frequencies to fit")
    slope, intercept = np.polyfit(x, yv, 1)
    resid = yv - (slope * x + intercept)
    ss_tot = float(((yv - yv.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return L1DecayFit(t_values, freq, float(slope), float(-slope), r2)
