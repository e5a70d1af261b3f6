"""Evidence and conditionals of ``y = X beta + noise`` with an independent variance prior.

Model: ``beta ~ N_k(0, tau2 I)``, ``y | beta, s ~ N_n(X beta, s I)`` and
``s = sigma^2 ~ g``.  Given ``s`` the marginal of ``y`` is Gaussian with
covariance ``s I + tau2 X X^T``; the integral over ``s`` has no closed form
for general ``g`` and is done by adaptive quadrature on ``u = log s``.

Everything is expressed through the eigendecomposition of the Gram matrix
``X^T X = W diag(lam) W^T``, which handles rank-deficient designs.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import integrate, optimize

from .priors import PointMass, SigmaPriorSpec
from .stat_core import ConvergenceError

LOG_2PI = math.log(2.0 * math.pi)


class GaussianLinearMarginal:
    """Closed-form pieces of the conjugate-in-beta linear model for one design."""

    def __init__(self, X, y, tau2: float, quad_tol: float = 1e-10):
        y = np.asarray(y, dtype=float).reshape(-1)
        X = np.asarray(X, dtype=float).reshape(y.size, -1)
        if not tau2 > 0:
            raise ValueError("tau2 must be positive")
        self.n = y.size
        self.k = X.shape[1]
        self.tau2 = float(tau2)
        self.quad_tol = quad_tol
        self.yy = float(y @ y)
        if self.k:
            lam, W = np.linalg.eigh(X.T @ X)
            cut = 1e-12 * max(lam.max(), 1.0)
            lam = np.where(lam > cut, lam, 0.0)
            self.lam, self.W = lam, W
            self.b = W.T @ (X.T @ y)
        else:
            self.lam = np.zeros(0)
            self.W = np.zeros((0, 0))
            self.b = np.zeros(0)
        pos = self.lam > 0
        self._lam_pos = self.lam[pos]
        self._proj2 = self.b[pos] ** 2 / self._lam_pos  # squared coords of y on range(X)
        self.rank = int(pos.sum())
        self.rss0 = max(self.yy - float(self._proj2.sum()), 0.0)

    def loglik(self, s):
        """``log N_n(y; 0, s I + tau2 X X^T)`` for variance values ``s``."""
        s = np.asarray(s, dtype=float)
        sc = s[..., None]
        d = sc + self.tau2 * self._lam_pos
        logdet = np.log(d).sum(axis=-1) + (self.n - self.rank) * np.log(s)
        quad = (self._proj2 / d).sum(axis=-1) + self.rss0 / s
        return -0.5 * (self.n * LOG_2PI + logdet + quad)

    def _log_integrand(self, u, prior):
        s = np.exp(u)
        return self.loglik(s) + prior.logpdf(s) + u

    def _mode(self, prior):
        # search around both the data scale and the prior median; y = 0 has no data scale
        centres = [math.log(float(prior.ppf(0.5)))]
        if self.yy > 0:
            centres.append(math.log(self.yy / self.n))
        lo_c, hi_c = min(centres) - 30.0, max(centres) + 30.0
        u_grid = np.linspace(lo_c, hi_c, int(10 * (hi_c - lo_c)) + 1)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            f = self._log_integrand(u_grid, prior)
        f = np.where(np.isfinite(f), f, -np.inf)
        i = int(np.argmax(f))
        lo, hi = u_grid[max(i - 1, 0)], u_grid[min(i + 1, u_grid.size - 1)]
        res = optimize.minimize_scalar(lambda u: -float(self._log_integrand(u, prior)),
                                       bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-10})
        u_star = float(res.x)
        f_star = float(self._log_integrand(u_star, prior))
        h = 1e-3
        curv = (float(self._log_integrand(u_star + h, prior)) - 2 * f_star
                + float(self._log_integrand(u_star - h, prior))) / h ** 2
        width = 1.0 / math.sqrt(-curv) if curv < 0 else 1.0
        return u_star, f_star, min(max(width, 1e-4), 10.0)

    def log_evidence(self, prior: SigmaPriorSpec, tol: float | None = None) -> float:
        """``log int N_n(y; 0, s I + tau2 X X^T) g(s) ds``."""
        if isinstance(prior, PointMass):
            return float(self.loglik(prior.value))
        tol = self.quad_tol if tol is None else tol
        u_star, f_star, w = self._mode(prior)

        def h(u):
            with np.errstate(all="ignore"):
                v = float(self._log_integrand(u, prior)) - f_star
            return math.exp(v) if v > -745 else 0.0

        a, b = u_star - 40.0 * w, u_star + 40.0 * w
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                mid, err = integrate.quad(h, a, b, points=[u_star], epsabs=tol, epsrel=tol, limit=400)
                left = integrate.quad(h, -np.inf, a, epsabs=tol, epsrel=tol, limit=200)[0]
                right = integrate.quad(h, b, np.inf, epsabs=tol, epsrel=tol, limit=200)[0]
            except integrate.IntegrationWarning as exc:
                raise ConvergenceError(f"sigma^2 quadrature failed: {exc}") from exc
        return f_star + math.log(mid + left + right)

    # ---- conditionals -------------------------------------------------

    def sigma2_grid(self, prior: SigmaPriorSpec, size: int = 2001):
        """Log-spaced grid and normalised CDF of ``s | y`` for inverse-CDF draws."""
        if isinstance(prior, PointMass):
            return np.array([prior.value, prior.value]), np.array([0.0, 1.0])
        u_star, f_star, w = self._mode(prior)
        u = np.linspace(u_star - 40.0 * w, u_star + 40.0 * w, size)
        with np.errstate(all="ignore"):
            dens = np.exp(self._log_integrand(u, prior) - f_star)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(u))])
        return np.exp(u), cdf / cdf[-1]

    def draw_sigma2(self, grid, rng, size=None):
        s, cdf = grid
        uq = rng.random(size)
        # interpolate in log s so the draw follows the trapezoid in u
        return np.exp(np.interp(uq, cdf, np.log(s)))

    def beta_moments(self, s: float):
        """Mean and covariance factor of ``beta | y, s`` in the original coordinates."""
        if self.k == 0:
            return np.zeros(0), np.zeros((0, 0))
        prec = self.lam / s + 1.0 / self.tau2
        var = 1.0 / prec
        mean = self.W @ (var * self.b / s)
        return mean, self.W * np.sqrt(var)

    def draw_beta(self, s: float, rng) -> np.ndarray:
        mean, factor = self.beta_moments(s)
        if self.k == 0:
            return mean
        return mean + factor @ rng.standard_normal(self.k)

    def posterior_mean_beta(self, prior: SigmaPriorSpec, size: int = 4001) -> np.ndarray:
        """``E[beta | y]`` integrating the conditional mean over ``s | y``."""
        s, cdf = self.sigma2_grid(prior, size)
        w = np.diff(cdf)
        mid = np.sqrt(s[1:] * s[:-1])
        out = np.zeros(self.k)
        for wi, si in zip(w, mid):
            out += wi * self.beta_moments(si)[0]
        return out
