"""Priors for the variance ``sigma^2``.

Each prior is a density ``g`` on ``(0, inf)`` in the variance scale, with
its derivative (needed for Lipschitz audits), CDF, survival function,
quantiles and a sampler.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special


class SigmaPriorSpec:
    """Base class; subclasses fill in the density and its companions."""

    family = "abstract"

    def logpdf(self, s):
        raise NotImplementedError

    def pdf(self, s):
        return np.exp(self.logpdf(s))

    def dpdf(self, s):
        raise NotImplementedError

    def cdf(self, s):
        raise NotImplementedError

    def sf(self, s):
        return 1.0 - self.cdf(s)

    def ppf(self, q):
        raise NotImplementedError

    def rvs(self, rng, size=None):
        return self.ppf(rng.random(size))

    def total_mass(self) -> float:
        """Numerical integral of the density over ``(0, inf)``."""
        med = float(self.ppf(0.5))
        f = lambda s: float(self.pdf(s))
        left = integrate.quad(f, 0.0, med, limit=200)[0]
        right = integrate.quad(f, med, np.inf, limit=200)[0]
        return left + right

    def params(self) -> dict:
        return {}


@dataclass(frozen=True, eq=True)
class InverseGamma(SigmaPriorSpec):
    """``g(s) = b^a / Gamma(a) s^{-a-1} exp(-b/s)``."""

    a: float
    b: float
    family = "inverse_gamma"

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("inverse gamma shape a and scale b must be positive")

    def logpdf(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (self.a * math.log(self.b) - math.lgamma(self.a)
                   - (self.a + 1.0) * np.log(s) - self.b / s)
        return np.where(s > 0, out, -np.inf)

    def dpdf(self, s):
        s = np.asarray(s, dtype=float)
        return self.pdf(s) * (-(self.a + 1.0) / s + self.b / s ** 2)

    def cdf(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(s > 0, special.gammaincc(self.a, self.b / np.maximum(s, 1e-300)), 0.0)

    def sf(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(s > 0, special.gammainc(self.a, self.b / np.maximum(s, 1e-300)), 1.0)

    def ppf(self, q):
        return self.b / special.gammainccinv(self.a, np.asarray(q, dtype=float))

    def rvs(self, rng, size=None):
        return self.b / rng.gamma(self.a, 1.0, size)

    def params(self):
        return {"a": self.a, "b": self.b}


@dataclass(frozen=True, eq=True)
class HalfCauchy(SigmaPriorSpec):
    """``g(s) = 2 r / (pi (r^2 + s^2))`` on ``s > 0``."""

    r: float
    family = "half_cauchy"

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("half-Cauchy scale r must be positive")

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(s > 0, 2.0 * self.r / (math.pi * (self.r ** 2 + s ** 2)), 0.0)

    def logpdf(self, s):
        s = np.asarray(s, dtype=float)
        out = math.log(2.0 * self.r / math.pi) - np.log(self.r ** 2 + s ** 2)
        return np.where(s > 0, out, -np.inf)

    def dpdf(self, s):
        s = np.asarray(s, dtype=float)
        return -4.0 * self.r * s / (math.pi * (self.r ** 2 + s ** 2) ** 2)

    def cdf(self, s):
        s = np.maximum(np.asarray(s, dtype=float), 0.0)
        return 2.0 / math.pi * np.arctan(s / self.r)

    def sf(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(s > 0, 2.0 / math.pi * np.arctan(self.r / np.maximum(s, 1e-300)), 1.0)

    def ppf(self, q):
        return self.r * np.tan(math.pi * np.asarray(q, dtype=float) / 2.0)

    def params(self):
        return {"r": self.r}


class Tabulated(SigmaPriorSpec):
    """Piecewise-linear density through ``(grid[i], density[i])``, zero outside.

    Raises ``ValueError`` when the table cannot represent a density: too few
    points, a non-increasing grid, negative values, total mass off by more
    than ``1e-4``, or a peak that jumps by more than half its height between
    neighbouring grid points (insufficient resolution).
    """

    family = "tabulated"
    MIN_POINTS = 32

    def __init__(self, grid, density):
        grid = np.asarray(grid, dtype=float)
        density = np.asarray(density, dtype=float)
        if grid.ndim != 1 or grid.shape != density.shape:
            raise ValueError("grid and density must be 1-D arrays of equal length")
        if grid.size < self.MIN_POINTS:
            raise ValueError(f"tabulated density needs at least {self.MIN_POINTS} points "
                             f"(insufficient grid resolution), got {grid.size}")
        if grid[0] < 0 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be nonnegative and strictly increasing")
        if np.any(density < 0) or not np.all(np.isfinite(density)):
            raise ValueError("density must be finite and nonnegative")
        jump = np.max(np.abs(np.diff(density)))
        if jump > 0.5 * density.max():
            raise ValueError("insufficient grid resolution: density jumps by "
                             f"{jump:.3g} against a peak of {density.max():.3g}")
        self.grid = grid
        self.density = density
        h = np.diff(grid)
        self._cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (density[1:] + density[:-1]))])
        mass = self._cum[-1]
        if abs(mass - 1.0) > 1e-4:
            raise ValueError(f"tabulated density integrates to {mass:.6g}, not 1 (tolerance 1e-4)")
        self._slopes = np.diff(density) / h

    def pdf(self, s):
        return np.interp(s, self.grid, self.density, left=0.0, right=0.0)

    def logpdf(self, s):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(s))

    def dpdf(self, s):
        s = np.asarray(s, dtype=float)
        idx = np.clip(np.searchsorted(self.grid, s, side="right") - 1, 0, self._slopes.size - 1)
        inside = (s >= self.grid[0]) & (s <= self.grid[-1])
        return np.where(inside, self._slopes[idx], 0.0)

    def cdf(self, s):
        s = np.asarray(s, dtype=float)
        sc = np.clip(s, self.grid[0], self.grid[-1])
        idx = np.clip(np.searchsorted(self.grid, sc, side="right") - 1, 0, self._slopes.size - 1)
        dx = sc - self.grid[idx]
        part = self.density[idx] * dx + 0.5 * self._slopes[idx] * dx ** 2
        return np.minimum(self._cum[idx] + part, self._cum[-1])

    def ppf(self, q):
        # exact inversion of the piecewise-quadratic CDF
        q = np.asarray(q, dtype=float) * self._cum[-1]
        idx = np.clip(np.searchsorted(self._cum, q, side="right") - 1, 0, self._slopes.size - 1)
        rem = q - self._cum[idx]
        d, m = self.density[idx], self._slopes[idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            quad = np.where(np.abs(m) > 1e-300,
                            (-d + np.sqrt(np.maximum(d * d + 2 * m * rem, 0.0))) / m,
                            rem / np.where(d > 0, d, 1.0))
        return self.grid[idx] + np.clip(quad, 0.0, np.diff(self.grid)[idx])

    def lipschitz(self) -> float:
        return float(np.max(np.abs(self._slopes)))

    def params(self):
        return {"points": int(self.grid.size)}

    def __eq__(self, other):
        return (isinstance(other, Tabulated) and np.array_equal(self.grid, other.grid)
                and np.array_equal(self.density, other.density))

    __hash__ = None


@dataclass(frozen=True)
class PointMass(SigmaPriorSpec):
    """Degenerate prior ``sigma^2 = value``; only used as a known-variance limit."""

    value: float
    family = "point_mass"

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("point mass location must be positive")

    def cdf(self, s):
        return np.where(np.asarray(s, dtype=float) >= self.value, 1.0, 0.0)

    def ppf(self, q):
        return np.full(np.shape(q), self.value)

    def rvs(self, rng, size=None):
        return np.full(size, self.value) if size is not None else self.value

    def params(self):
        return {"value": self.value}


def make_prior(family: str, **params) -> SigmaPriorSpec:
    """Build a prior from a family name and its parameters."""
    table = {"inverse_gamma": InverseGamma, "half_cauchy": HalfCauchy, "point_mass": PointMass}
    if family == "tabulated":
        return Tabulated(params["grid"], params["density"])
    if family not in table:
        raise ValueError(f"unknown sigma prior family {family!r}; "
                         f"choose from {sorted(table) + ['tabulated']}")
    return table[family](**params)
