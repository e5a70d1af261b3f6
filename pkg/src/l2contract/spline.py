"""Adaptive B-spline regression on [0, 1] with a prior on the basis dimension.

Model::

    y_i = f(x_i) + sigma * noise,    f = psi_J^T beta_J
    Pi{J = j} ∝ exp(-A j log j),   beta_J | J ~ N(0, tau2 I),   sigma^2 ~ g

The posterior over ``J`` is computed exactly by enumerating ``J`` up to
``J_max``; given ``J`` the coefficients integrate out in closed form and
``sigma^2`` by quadrature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .contraction import bad_set_mass, fit_rate_exponent
from .marginal import GaussianLinearMarginal
from .priors import InverseGamma, SigmaPriorSpec
from .stat_core import ParamPoint, make_rng, task_seed


@dataclass(frozen=True)
class SplineBasisSpec:
    """Degree ``q`` B-splines on clamped uniform knots with ``K_interior`` interior knots."""

    q: int
    K_interior: int

    def __post_init__(self):
        if self.q < 0 or self.K_interior < 0:
            raise ValueError("degree q and K_interior must be nonnegative")

    @property
    def J(self) -> int:
        return self.q + self.K_interior + 1

    @property
    def knots(self) -> np.ndarray:
        inner = np.arange(1, self.K_interior + 1) / (self.K_interior + 1)
        return np.concatenate([np.zeros(self.q + 1), inner, np.ones(self.q + 1)])

    @classmethod
    def from_dimension(cls, q: int, J: int) -> "SplineBasisSpec":
        if J < q + 1:
            raise ValueError(f"dimension J={J} is below q+1={q + 1}")
        return cls(q, J - q - 1)


def _check_domain(x):
    x = np.asarray(x, dtype=float)
    if x.size and (np.any(~np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0):
        raise ValueError("B-spline arguments must lie in [0, 1]")
    return x


def basis_matrix(spec: SplineBasisSpec, xs) -> np.ndarray:
    """``n x J`` matrix of basis values by the Cox-de Boor recursion."""
    xs = _check_domain(xs).reshape(-1)
    t = spec.knots
    q = spec.q
    # degree 0: half-open cells, with x = 1 assigned to the last nonempty cell
    cell = np.searchsorted(t, xs, side="right") - 1
    cell = np.where(xs >= 1.0, len(t) - q - 2, cell)
    N = np.zeros((xs.size, len(t) - 1))
    N[np.arange(xs.size), cell] = 1.0
    x = xs[:, None]
    for d in range(1, q + 1):
        m = len(t) - 1 - d
        left_den = t[d:d + m] - t[:m]
        right_den = t[d + 1:d + 1 + m] - t[1:1 + m]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(left_den > 0, (x - t[:m]) / left_den, 0.0)
            right = np.where(right_den > 0, (t[d + 1:d + 1 + m] - x) / right_den, 0.0)
        N = left * N[:, :m] + right * N[:, 1:m + 1]
    return N


def bspline_basis_eval(spec: SplineBasisSpec, x: float) -> np.ndarray:
    return basis_matrix(spec, np.array([x]))[0]


def dimension_log_prior(j, A: float):
    """Unnormalised ``-A j log j``."""
    j = np.asarray(j, dtype=float)
    if np.any(j < 1):
        raise ValueError("dimension j must be >= 1")
    return -A * j * np.log(j)


def dimension_log_probs(A: float, j_min: int, j_max: int) -> np.ndarray:
    """Normalised log prior over ``j_min..j_max``."""
    if j_max < j_min or j_min < 1:
        raise ValueError("need 1 <= j_min <= j_max")
    lp = dimension_log_prior(np.arange(j_min, j_max + 1), A)
    return lp - logsumexp(lp)


@dataclass
class SplineModel:
    A: float = 1.0
    tau2: float = 1.0
    J_max: int = 40
    q: int = 3
    sigma_prior: SigmaPriorSpec = field(default_factory=lambda: InverseGamma(1.0, 1.0))

    def __post_init__(self):
        if not (self.A > 0 and self.tau2 > 0):
            raise ValueError("A and tau2 must be positive")
        if self.q < 0:
            raise ValueError("degree q must be nonnegative")
        if self.J_max < self.q + 1:
            raise ValueError(f"J_max={self.J_max} must be at least q+1={self.q + 1}")

    @property
    def dims(self) -> np.ndarray:
        return np.arange(self.q + 1, self.J_max + 1)


@dataclass
class JPosterior:
    """Posterior over the basis dimension with the per-dimension conditionals."""

    dims: np.ndarray
    probs: np.ndarray
    log_evidence: np.ndarray
    marginals: dict
    bases: dict
    sigma_prior: SigmaPriorSpec

    @property
    def mode(self) -> int:
        return int(self.dims[np.argmax(self.probs)])

    def as_dict(self) -> dict:
        return {int(j): float(p) for j, p in zip(self.dims, self.probs)}

    def posterior_mean_f(self) -> np.ndarray:
        """Model-averaged ``E[f(xs) | y]``."""
        out = 0.0
        for j, w in zip(self.dims, self.probs):
            if w < 1e-14:
                continue
            j = int(j)
            out = out + w * (self.bases[j] @ self.marginals[j].posterior_mean_beta(self.sigma_prior))
        return np.asarray(out)


def posterior_over_J(y, xs, model: SplineModel, max_condition: float = 1e12) -> JPosterior:
    """Exact posterior over ``J in q+1..J_max``.

    ``max_condition`` is informational: ill-conditioned Gram matrices are
    handled through their eigendecomposition rather than rejected.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    xs = _check_domain(xs).reshape(-1)
    if xs.shape != y.shape:
        raise ValueError("xs and y must have the same length")
    dims = model.dims
    logp = dimension_log_probs(model.A, int(dims[0]), int(dims[-1]))
    marg, bases, loge = {}, {}, []
    for j in dims:
        j = int(j)
        B = basis_matrix(SplineBasisSpec.from_dimension(model.q, j), xs)
        m = GaussianLinearMarginal(B, y, model.tau2)
        bases[j], marg[j] = B, m
        loge.append(m.log_evidence(model.sigma_prior))
    loge = np.array(loge)
    lw = logp + loge
    probs = np.exp(lw - logsumexp(lw))
    return JPosterior(dims, probs, loge, marg, bases, model.sigma_prior)


def sample_f_posterior(post: JPosterior, draws: int, seed=None):
    """Draw ``(f(xs), sigma)`` pairs: ``J`` first, then ``sigma^2`` and ``beta_J``.

    Returns an array of fitted values with shape ``(draws, n)`` and an array
    of ``sigma`` draws.
    """
    rng = make_rng(seed)
    js = rng.choice(post.dims, size=draws, p=post.probs / post.probs.sum())
    n = next(iter(post.bases.values())).shape[0]
    F = np.empty((draws, n))
    sig = np.empty(draws)
    grids = {}
    for i, j in enumerate(js):
        j = int(j)
        m = post.marginals[j]
        if j not in grids:
            grids[j] = m.sigma2_grid(post.sigma_prior)
        s2 = float(m.draw_sigma2(grids[j], rng))
        F[i] = post.bases[j] @ m.draw_beta(s2, rng)
        sig[i] = math.sqrt(s2)
    return F, sig


def empirical_l2_norm(fvals) -> float:
    f = np.asarray(fvals, dtype=float)
    if f.size < 1:
        raise ValueError("need at least one value")
    return float(np.sqrt(np.mean(f ** 2)))


def eps_n_spline(sigma0: float, n: int, alpha: float) -> float:
    if n < 2 or not (sigma0 > 0 and alpha > 0):
        raise ValueError("need n >= 2, sigma0 > 0, alpha > 0")
    return (sigma0 ** 2 * math.log(n) / n) ** (alpha / (2 * alpha + 1))


def spline_sigma_window(n: int, alpha: float) -> tuple[float, float]:
    """Admissible ``sigma0^2`` range ``[(log n / n)^{2 alpha} log n, n / log n]``."""
    ln = math.log(n)
    return (ln / n) ** (2 * alpha) * ln, n / ln


# --------------------------------------------------------------------------
# truths with known smoothness
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HolderTruth:
    f0: Callable
    alpha: float
    holder_norm: float
    family: str = ""

    def __call__(self, x):
        return self.f0(np.asarray(x, dtype=float))


def _falling(alpha, j):
    out = 1.0
    for i in range(j):
        out *= alpha - i
    return abs(out)


def _power_holder_norm(alpha: float, odd: bool) -> float:
    """Bound on the Holder norm of ``|t|^alpha`` (or ``t|t|^{alpha-1}``) on ``|t| <= 1/2``."""
    m = math.ceil(alpha) - 1
    r = alpha - m
    sup = sum(_falling(alpha, j) * 0.5 ** (alpha - j) for j in range(m + 1))
    # the m-th derivative is c |t|^r or c sign(t)|t|^r
    deriv_odd = odd ^ (m % 2 == 1)
    return sup + _falling(alpha, m) * (2.0 ** (1.0 - r) if deriv_odd else 1.0)


def holder_truth(family: str, alpha: float, amplitude: float = 1.0) -> HolderTruth:
    """Test functions whose smoothness is known exactly.

    ``"fractional"``: ``|x - 1/2|^alpha`` for ``alpha in (0, 1]``.
    ``"kink"``: the same power singularity for any ``alpha > 0``; for even
    integer ``alpha`` the odd extension ``t |t|^{alpha-1}`` is used so the
    function is not a polynomial.
    ``"smooth"``: ``sin(2 pi x)``, in every Holder class.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if family == "fractional":
        if alpha > 1:
            raise ValueError("the fractional family needs alpha in (0, 1]")
        return HolderTruth(lambda x: amplitude * np.abs(x - 0.5) ** alpha, alpha,
                           abs(amplitude) * _power_holder_norm(alpha, False), family)
    if family == "kink":
        odd = float(alpha).is_integer() and int(alpha) % 2 == 0
        if odd:
            f = lambda x: amplitude * np.sign(x - 0.5) * np.abs(x - 0.5) ** alpha
        else:
            f = lambda x: amplitude * np.abs(x - 0.5) ** alpha
        return HolderTruth(f, alpha, abs(amplitude) * _power_holder_norm(alpha, odd), family)
    if family == "smooth":
        m = math.ceil(alpha) - 1
        w = 2.0 * math.pi
        norm = sum(w ** j for j in range(m + 1)) + 2.0 ** (1.0 - (alpha - m)) * w ** alpha
        return HolderTruth(lambda x: amplitude * np.sin(w * x), alpha, abs(amplitude) * norm, family)
    raise ValueError(f"unsupported truth family {family!r}; choose fractional, kink or smooth")


def holder_seminorm(f, exponent: float, grid) -> float:
    """``max |f(x) - f(y)| / |x - y|^exponent`` over all pairs of grid points."""
    x = np.asarray(grid, dtype=float)
    v = f(x)
    dx = np.abs(x[:, None] - x[None, :])
    dv = np.abs(v[:, None] - v[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(dx > 0, dv / dx ** exponent, 0.0)
    return float(ratio.max())


def approximation_error_curve(truth: HolderTruth, q: int = 3, intervals=(16, 32, 64, 128, 256),
                              grid_size: int = 20_001):
    """Sup-norm error of the least-squares spline fit on a fine grid, per dimension ``J``.

    Returns ``(J values, errors)``.  The fine grid is uniform and, with the
    default odd size, contains ``x = 1/2``.  Since ``J = intervals + q``, the
    log-log slope in ``J`` approaches the rate in the interval count only as the
    offset ``q`` becomes negligible, hence the default starts at 16 intervals.
    """
    if q + 1 < truth.alpha:
        raise ValueError(f"degree q={q} is too low for smoothness alpha={truth.alpha} (need q+1 >= alpha)")
    grid = np.linspace(0.0, 1.0, grid_size)
    fv = truth(grid)
    Js, errs = [], []
    for m in intervals:
        spec = SplineBasisSpec(q, int(m) - 1)
        B = basis_matrix(spec, grid)
        coef, *_ = np.linalg.lstsq(B, fv, rcond=None)
        Js.append(spec.J)
        errs.append(float(np.max(np.abs(B @ coef - fv))))
    return np.array(Js), np.array(errs)


def approximation_slope(J, errors) -> float:
    """Log-log slope of error against ``J``."""
    slope, _ = fit_rate_exponent(J, errors)
    return slope


# --------------------------------------------------------------------------
# contraction experiment
# --------------------------------------------------------------------------

@dataclass
class SplineExperimentConfig:
    sigma0: float = 1.0
    alpha: float = 2.0
    family: str = "smooth"
    amplitude: float = 1.0
    q: int = 3
    A: float = 1.0
    tau2: float = 1.0
    J_max: int = 40
    prior_a: float = 1.0
    prior_b: float = 1.0
    M: float = 10.0
    draws: int = 1000
    design: str = "grid"

    def model(self) -> SplineModel:
        return SplineModel(self.A, self.tau2, self.J_max, self.q,
                           InverseGamma(self.prior_a, self.prior_b))

    def truth(self) -> HolderTruth:
        return holder_truth(self.family, self.alpha, self.amplitude)


SPLINE_COLUMNS = ("n", "replicate", "median_error", "eps_n", "bad_mass", "posterior_mode_J")


def design_points(n: int, kind: str, rng) -> np.ndarray:
    if kind == "grid":
        return (np.arange(n) + 0.5) / n
    if kind == "random":
        return np.sort(rng.uniform(0.0, 1.0, n))
    raise ValueError(f"design must be 'grid' or 'random', got {kind!r}")


def spline_replicate(cfg: SplineExperimentConfig, n: int, n_index: int, replicate: int,
                     seed: int) -> dict:
    """Simulate one data set at sample size ``n`` and summarise its posterior."""
    lo, hi = spline_sigma_window(n, cfg.alpha)
    if not lo <= cfg.sigma0 ** 2 <= hi:
        raise ValueError(f"sigma0^2={cfg.sigma0 ** 2:g} outside the admissible window "
                         f"[{lo:.3g}, {hi:.3g}] at n={n}")
    rng = make_rng(task_seed(seed, n_index, replicate))
    truth = cfg.truth()
    xs = design_points(n, cfg.design, rng)
    f0 = truth(xs)
    y = f0 + cfg.sigma0 * rng.standard_normal(n)
    post = posterior_over_J(y, xs, cfg.model())
    F, sig = sample_f_posterior(post, cfg.draws, rng)
    f_err = np.sqrt(np.mean((F - f0) ** 2, axis=1))
    err = f_err + np.abs(sig - cfg.sigma0)
    eps = eps_n_spline(cfg.sigma0, n, cfg.alpha)
    # d on mu = f(xs) uses ||.||_2 / sqrt(n), which is ||.||_n
    bad = bad_set_mass(F, sig, ParamPoint(f0, cfg.sigma0), cfg.M * eps)
    return {
        "n": n, "replicate": replicate, "median_error": float(np.median(err)),
        "median_f_error": float(np.median(f_err)), "mean_error": float(np.mean(err)),
        "eps_n": eps, "bad_mass": bad, "posterior_mode_J": post.mode,
    }


def contraction_experiment_spline(cfg: SplineExperimentConfig, n_grid, replicates: int,
                                  seed: int, executor=None) -> list[dict]:
    n_grid = list(n_grid)
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be strictly increasing")
    tasks = [(cfg, n, i, r, seed) for i, n in enumerate(n_grid) for r in range(replicates)]
    mapper = map if executor is None else executor.map
    rows = list(mapper(_spline_task, tasks))
    return sorted(rows, key=lambda r: (r["n"], r["replicate"]))


def _spline_task(args):
    return spline_replicate(*args)
