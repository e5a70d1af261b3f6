"""Sparse linear regression with a support prior, Gaussian slab and unknown variance.

Prior::

    Pi{S = s} ∝ C(p, |s|)^{-1} p^{-A |s|}
    beta_S | S ~ N(0, tau2 I),  beta_{S^c} = 0
    sigma^2 ~ g   (independent of S and beta)

The posterior over supports is available exactly by enumeration for small
``p`` and by a Metropolis-within-Gibbs sampler otherwise.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .contraction import bad_set_mass
from .hyptest import cover_mean_set
from .marginal import GaussianLinearMarginal
from .priors import InverseGamma, SigmaPriorSpec
from .stat_core import ErrorEstimate, ParamPoint, make_rng, task_seed


@dataclass
class HighDimModel:
    X: np.ndarray
    A: float = 1.0
    tau2: float = 1.0
    sigma_prior: SigmaPriorSpec = field(default_factory=lambda: InverseGamma(1.0, 1.0))

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2:
            raise ValueError("X must be a 2-D design matrix")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("X must be finite")
        if not (self.A > 0 and self.tau2 > 0):
            raise ValueError("A and tau2 must be positive")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def x_inf(self) -> float:
        return float(np.max(np.abs(self.X)))


@dataclass
class HighDimTruth:
    beta0: np.ndarray
    sigma0: float

    def __post_init__(self):
        self.beta0 = np.asarray(self.beta0, dtype=float)
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")
        if not np.any(self.beta0 != 0):
            raise ValueError("the true support must be nonempty")

    @property
    def S0(self) -> tuple:
        return tuple(int(i) for i in np.flatnonzero(self.beta0))

    @property
    def beta_inf(self) -> float:
        return float(np.max(np.abs(self.beta0)))


def _log_binom(p, k):
    return gammaln(p + 1) - gammaln(k + 1) - gammaln(p - k + 1)


def support_log_prior(S, p: int, A: float) -> float:
    """Unnormalised ``log Pi{S}`` = ``-log C(p, |S|) - A |S| log p``."""
    k = len(tuple(S))
    if k > p:
        raise ValueError("support larger than p")
    return float(-_log_binom(p, k) - A * k * math.log(p))


def log_support_normalizer(p: int, A: float, max_card: int | None = None) -> float:
    """Log of the sum of unnormalised support masses over ``|S| <= max_card``."""
    kmax = p if max_card is None else min(max_card, p)
    k = np.arange(kmax + 1)
    # C(p,k) supports of size k, each with mass C(p,k)^{-1} p^{-Ak}
    return float(logsumexp(-A * k * math.log(p)))


def cardinality_log_probs(p: int, A: float, max_card: int | None = None) -> np.ndarray:
    kmax = p if max_card is None else min(max_card, p)
    k = np.arange(kmax + 1)
    lw = -A * k * math.log(p)
    return lw - logsumexp(lw)


def marginal_log_likelihood(S, y, model: HighDimModel, tol: float | None = None) -> float:
    """``log p(y | S)`` with beta integrated in closed form and sigma^2 by quadrature."""
    S = tuple(sorted(S))
    y = np.asarray(y, dtype=float)
    if len(S) > model.n:
        raise ValueError(f"|S|={len(S)} exceeds n={model.n}")
    m = GaussianLinearMarginal(model.X[:, list(S)], y, model.tau2)
    return m.log_evidence(model.sigma_prior, tol=tol)


@dataclass
class SupportPosterior:
    probs: dict
    p: int
    max_card: int

    def mode(self) -> tuple:
        return max(self.probs, key=self.probs.get)

    def inclusion_probs(self) -> np.ndarray:
        out = np.zeros(self.p)
        for S, w in self.probs.items():
            out[list(S)] += w
        return out

    def total_variation(self, other: dict) -> float:
        keys = set(self.probs) | set(other)
        return 0.5 * sum(abs(self.probs.get(k, 0.0) - other.get(k, 0.0)) for k in keys)


MAX_ENUMERATION = 1_000_000


def _supports(p, max_card):
    for k in range(max_card + 1):
        yield from itertools.combinations(range(p), k)


def exact_posterior(y, model: HighDimModel, max_card: int) -> SupportPosterior:
    """Posterior over every support with ``|S| <= max_card`` by enumeration."""
    p = model.p
    max_card = min(max_card, p, model.n)
    count = sum(math.comb(p, k) for k in range(max_card + 1))
    if count > MAX_ENUMERATION:
        raise ValueError(f"{count} supports exceed the enumeration budget {MAX_ENUMERATION}")
    keys, logw = [], []
    for S in _supports(p, max_card):
        keys.append(S)
        logw.append(support_log_prior(S, p, model.A) + marginal_log_likelihood(S, y, model))
    logw = np.array(logw)
    w = np.exp(logw - logsumexp(logw))
    return SupportPosterior(dict(zip(keys, w.tolist())), p, max_card)


# --------------------------------------------------------------------------
# MCMC
# --------------------------------------------------------------------------

class _SupportCache:
    """Per-support marginal objects, log posterior weights and sigma^2 grids."""

    def __init__(self, y, model):
        self.y = np.asarray(y, dtype=float)
        self.model = model
        self._m = {}
        self._lp = {}
        self._grid = {}

    def marginal(self, S):
        if S not in self._m:
            self._m[S] = GaussianLinearMarginal(self.model.X[:, list(S)], self.y, self.model.tau2)
        return self._m[S]

    def log_post(self, S):
        if S not in self._lp:
            self._lp[S] = (support_log_prior(S, self.model.p, self.model.A)
                           + self.marginal(S).log_evidence(self.model.sigma_prior))
        return self._lp[S]

    def grid(self, S):
        if S not in self._grid:
            self._grid[S] = self.marginal(S).sigma2_grid(self.model.sigma_prior)
        return self._grid[S]


def _move_types(k, p, max_card):
    moves = []
    if k < max_card and k < p:
        moves.append("add")
    if k > 0:
        moves.append("delete")
    if 0 < k < p:
        moves.append("swap")
    return moves


def _propose(S, p, max_card, rng):
    """Return ``(S_new, log q(S_new->S) - log q(S->S_new))``, the Hastings correction."""
    k = len(S)
    moves = _move_types(k, p, max_card)
    mv = moves[rng.integers(len(moves))]
    inside = list(S)
    if mv == "add":
        outside = [j for j in range(p) if j not in S]
        j = outside[rng.integers(len(outside))]
        new = tuple(sorted(S + (j,)))
        fwd = -math.log(len(moves)) - math.log(p - k)
        rev = -math.log(len(_move_types(k + 1, p, max_card))) - math.log(k + 1)
    elif mv == "delete":
        j = inside[rng.integers(k)]
        new = tuple(i for i in S if i != j)
        fwd = -math.log(len(moves)) - math.log(k)
        rev = -math.log(len(_move_types(k - 1, p, max_card))) - math.log(p - k + 1)
    else:
        outside = [j for j in range(p) if j not in S]
        j_out = inside[rng.integers(k)]
        j_in = outside[rng.integers(len(outside))]
        new = tuple(sorted([i for i in S if i != j_out] + [j_in]))
        fwd = rev = 0.0
    return new, rev - fwd


@dataclass
class MCMCResult:
    supports: list
    beta: np.ndarray
    sigma: np.ndarray
    acceptance_rate: float
    ess_sigma: float
    distinct_supports: int

    def support_frequencies(self) -> dict:
        out: dict = {}
        for S in self.supports:
            out[S] = out.get(S, 0) + 1
        m = len(self.supports)
        return {S: c / m for S, c in out.items()}


def mcmc_stream(y, model: HighDimModel, iters: int, seed=None, max_card: int | None = None,
                init=(), draw_params: bool = True, _cache=None, _stats=None):
    """Yield ``(S, beta, sigma)`` after each sweep.

    Each sweep makes one add/delete/swap Metropolis-Hastings move on the
    support using the collapsed posterior (beta and sigma^2 integrated out),
    then draws sigma^2 from its exact one-dimensional conditional by inverse
    CDF on a log grid and beta_S from its Gaussian conditional.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = make_rng(seed)
    p = model.p
    max_card = min(p, model.n) if max_card is None else min(max_card, p, model.n)
    cache = _cache or _SupportCache(y, model)
    S = tuple(sorted(init))
    if len(S) > max_card:
        raise ValueError("initial support exceeds max_card")
    lp = cache.log_post(S)
    accepted = 0
    for it in range(iters):
        new, log_q = _propose(S, p, max_card, rng)
        lp_new = cache.log_post(new)
        if math.log(rng.random()) < lp_new - lp + log_q:
            S, lp = new, lp_new
            accepted += 1
        if _stats is not None:
            _stats["accepted"] = accepted
        if draw_params:
            m = cache.marginal(S)
            s2 = float(m.draw_sigma2(cache.grid(S), rng))
            beta = np.zeros(p)
            beta[list(S)] = m.draw_beta(s2, rng)
            yield S, beta, math.sqrt(s2)
        else:
            yield S, None, None


def effective_sample_size(x) -> float:
    """ESS from the initial positive sequence of autocorrelations."""
    x = np.asarray(x, dtype=float)
    m = x.size
    if m < 4 or np.ptp(x) == 0:
        return float(m)
    xc = x - x.mean()
    f = np.fft.rfft(xc, 2 * m)
    acf = np.fft.irfft(f * np.conj(f))[:m]
    acf /= acf[0]
    tau = 1.0
    for t in range(1, m - 1, 2):
        pair = acf[t] + acf[t + 1]
        if pair < 0:
            break
        tau += 2 * pair
    return float(m / tau)


def mcmc_posterior(y, model: HighDimModel, iters: int, seed=None, max_card: int | None = None,
                   burn_in: int = 0, thin: int = 1, init=(), draw_params: bool = True) -> MCMCResult:
    """Run :func:`mcmc_stream` and collect the draws after burn-in."""
    cache = _SupportCache(y, model)
    stats = {"accepted": 0}
    supports, betas, sigmas = [], [], []
    for it, (S, beta, sigma) in enumerate(mcmc_stream(y, model, iters, seed, max_card, init,
                                                       draw_params, cache, stats)):
        if it < burn_in or (it - burn_in) % thin:
            continue
        supports.append(S)
        if draw_params:
            betas.append(beta)
            sigmas.append(sigma)
    beta = np.array(betas) if draw_params else np.zeros((0, model.p))
    sigma = np.array(sigmas)
    ess = effective_sample_size(sigma) if draw_params else effective_sample_size(
        [len(S) for S in supports])
    return MCMCResult(supports, beta, sigma, stats["accepted"] / iters, ess, len(cache._lp))


# --------------------------------------------------------------------------
# rates, sieve and entropy
# --------------------------------------------------------------------------

def eps_n_highdim(sigma0: float, s0: int, p: int, n: int) -> float:
    if not (sigma0 > 0 and s0 >= 1 and p > 1 and n >= 1):
        raise ValueError("need sigma0 > 0, s0 >= 1, p > 1, n >= 1")
    return sigma0 * math.sqrt(s0 * math.log(p) / n)


@dataclass
class SieveMassReport:
    bound: float
    mc: ErrorEstimate
    exact_card_tail: float


def sieve_mass_bound(model: HighDimModel, s0: int, M0: float, n: int,
                     reps: int = 100_000, seed=None) -> SieveMassReport:
    """Bound ``2 p^{-A M0 s0} + 2 M0 s0 exp(-n^2 / (2 tau2))`` on the prior mass off the sieve.

    The sieve is ``{X_S beta_S : ||beta||_inf <= n, |S| <= M0 s0}``.  The
    report carries a Monte Carlo estimate of the actual prior mass outside
    it and the exact probability of ``|S| > M0 s0``.
    """
    if not (M0 >= 1 and s0 >= 1):
        raise ValueError("need M0 >= 1 and s0 >= 1")
    p, A, tau2 = model.p, model.A, model.tau2
    cap = M0 * s0
    bound = 2.0 * math.exp(-A * cap * math.log(p)) + 2.0 * cap * math.exp(-n ** 2 / (2.0 * tau2))
    lp = cardinality_log_probs(p, A)
    probs = np.exp(lp)
    k_all = np.arange(p + 1)
    exact_tail = float(probs[k_all > cap].sum())
    rng = make_rng(seed)
    ks = rng.choice(k_all, size=reps, p=probs / probs.sum())
    hits = int(np.sum(ks > cap))
    inside = ks[ks <= cap]
    for k in np.unique(inside):
        if k == 0:
            continue
        cnt = int(np.sum(inside == k))
        b = rng.normal(0.0, math.sqrt(tau2), size=(cnt, int(k)))
        hits += int(np.sum(np.max(np.abs(b), axis=1) > n))
    return SieveMassReport(bound, ErrorEstimate.from_counts(hits, reps), exact_tail)


def entropy_bound_highdim(model: HighDimModel, s0: int, M0: float, eps_n: float, n: int) -> float:
    """Log of ``C(p, M0 s0) (3 ||X||_inf s0 n / eps_n)^{M0 s0}``."""
    m = int(math.floor(M0 * s0))
    if m < 1 or not eps_n > 0:
        raise ValueError("need M0 * s0 >= 1 and eps_n > 0")
    return float(_log_binom(model.p, m) + m * math.log(3.0 * model.x_inf * s0 * n / eps_n))


def sieve_cover_count(model: HighDimModel, s0: int, M0: float, eps_n: float, n: int) -> int:
    """Size of an explicit ``sqrt(n) eps_n`` cover of the sieve built from grids.

    For each support ``S`` with ``|S| <= M0 s0`` the coefficient box
    ``[-n, n]^|S|`` is covered in L2 at radius ``sqrt(n) eps_n / ||X_S||_2``,
    which covers ``X_S beta_S`` at radius ``sqrt(n) eps_n``.
    """
    m = int(math.floor(M0 * s0))
    total = 1  # the zero mean
    for k in range(1, m + 1):
        for S in itertools.combinations(range(model.p), k):
            op = float(np.linalg.norm(model.X[:, list(S)], 2))
            total += len(cover_mean_set(k, float(n), math.sqrt(n) * eps_n / op))
    return total


# --------------------------------------------------------------------------
# contraction experiment
# --------------------------------------------------------------------------

@dataclass
class HighDimExperimentConfig:
    sigma0: float = 1.0
    p: int = 100
    s0: int = 3
    x_bound: float = 1.0
    beta_min: float = 1.0
    beta_max: float = 2.0
    A: float = 1.0
    tau2: float = 1.0
    prior_a: float = 1.0
    prior_b: float = 1.0
    M: float = 10.0
    iters: int = 3000
    burn_in: int = 1000

    def model(self, X) -> HighDimModel:
        return HighDimModel(X, self.A, self.tau2, InverseGamma(self.prior_a, self.prior_b))


def generate_design(n: int, p: int, bound: float, rng) -> np.ndarray:
    """I.i.d. uniform entries on ``[-bound, bound]``."""
    return rng.uniform(-bound, bound, size=(n, p))


def generate_truth(cfg: HighDimExperimentConfig, rng) -> HighDimTruth:
    beta0 = np.zeros(cfg.p)
    idx = rng.choice(cfg.p, size=cfg.s0, replace=False)
    beta0[idx] = rng.uniform(cfg.beta_min, cfg.beta_max, cfg.s0) * rng.choice([-1.0, 1.0], cfg.s0)
    return HighDimTruth(beta0, cfg.sigma0)


HIGHDIM_COLUMNS = ("n", "replicate", "median_d_error", "eps_n", "bad_mass", "support_hit")


def highdim_replicate(cfg: HighDimExperimentConfig, n: int, n_index: int, replicate: int,
                      seed: int) -> dict:
    """One simulated data set and posterior at sample size ``n``."""
    truth = generate_truth(cfg, make_rng(task_seed(seed, 0, replicate)))
    rng = make_rng(task_seed(seed, 1, n_index, replicate))
    X = generate_design(n, cfg.p, cfg.x_bound, rng)
    model = cfg.model(X)
    mu0 = X @ truth.beta0
    y = mu0 + cfg.sigma0 * rng.standard_normal(n)
    res = mcmc_posterior(y, model, cfg.iters, rng, burn_in=cfg.burn_in)
    fits = res.beta @ X.T
    err = np.sqrt(np.sum((fits - mu0) ** 2, axis=1) / n) + np.abs(res.sigma - cfg.sigma0)
    eps = eps_n_highdim(cfg.sigma0, cfg.s0, cfg.p, n)
    bad = bad_set_mass(fits, res.sigma, ParamPoint(mu0, cfg.sigma0), cfg.M * eps)
    hit = float(np.mean([S == truth.S0 for S in res.supports]))
    return {
        "n": n, "replicate": replicate, "median_d_error": float(np.median(err)),
        "mean_d_error": float(np.mean(err)), "eps_n": eps, "bad_mass": bad,
        "support_hit": hit, "acceptance": res.acceptance_rate, "ess_sigma": res.ess_sigma,
    }


def contraction_experiment_highdim(cfg: HighDimExperimentConfig, n_grid, replicates: int,
                                   seed: int, executor=None) -> list[dict]:
    """Rows of per-replicate posterior errors for every ``n`` in ``n_grid``.

    ``executor`` (anything with a ``map`` method) parallelises over tasks;
    each task draws from its own stream keyed by ``(n index, replicate)``.
    """
    n_grid = list(n_grid)
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be strictly increasing")
    tasks = [(cfg, n, i, r, seed) for i, n in enumerate(n_grid) for r in range(replicates)]
    mapper = map if executor is None else executor.map
    rows = list(mapper(_highdim_task, tasks))
    return sorted(rows, key=lambda r: (r["n"], r["replicate"]))


def _highdim_task(args):
    return highdim_replicate(*args)
