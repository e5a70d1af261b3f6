"""Local and global tests of the truth against separated alternatives.

A local test separates the truth ``(mu0, sigma0)`` from a small d-ball
around an alternative ``(mu1, sigma1)``.  Which statistic is used depends
on where the alternative sits:

* ``LARGE_SIGMA``  (sigma1 >= M1 sigma0): squared residual norm.
* ``MEAN_DOMINANT`` (7 ||mu1 - mu0||^2 > n (sigma1 - sigma0)^2): projection
  of the residual on ``mu1 - mu0``.
* ``SIGMA_ABOVE`` / ``SIGMA_BELOW``: mean absolute residual compared with
  its expectation ``sqrt(2/pi) sigma0``.

The global test is the maximum of local tests over a cover of the
alternatives far from the truth.
"""
from __future__ import annotations

import enum
import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .stat_core import ErrorEstimate, ParamPoint, make_rng, metric_d

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)

# rows of standard normals generated per chunk in Monte Carlo loops
_CHUNK_ELEMS = 2_000_000


class TestCase(enum.Enum):
    LARGE_SIGMA = 1
    MEAN_DOMINANT = 2
    SIGMA_ABOVE = 3
    SIGMA_BELOW = 4

    __test__ = False  # not a pytest class


@dataclass(frozen=True)
class TestConstants:
    """``M0`` scales the large-sigma threshold, ``M1`` splits the sigma range."""

    M0: float = 3.0
    M1: float = 12.0

    __test__ = False

    def __post_init__(self):
        if not self.M0 > 0:
            raise ValueError(f"M0 must be positive, got {self.M0}")
        if not self.M1 > 1:
            raise ValueError(f"M1 must exceed 1, got {self.M1}")


def case_predicates(truth: ParamPoint, alt: ParamPoint, constants: TestConstants) -> dict:
    """The four case conditions written out independently of each other."""
    dmu2 = float(np.sum((alt.mu - truth.mu) ** 2))
    dsig2 = (alt.sigma - truth.sigma) ** 2
    n = truth.n
    s0, s1, m1 = truth.sigma, alt.sigma, constants.M1
    return {
        TestCase.LARGE_SIGMA: s1 >= m1 * s0,
        TestCase.MEAN_DOMINANT: s1 < m1 * s0 and 7 * dmu2 > n * dsig2,
        TestCase.SIGMA_ABOVE: s0 <= s1 < m1 * s0 and 7 * dmu2 <= n * dsig2,
        TestCase.SIGMA_BELOW: s0 > s1 and 7 * dmu2 <= n * dsig2,
    }


def select_case(truth: ParamPoint, alt: ParamPoint, constants: TestConstants) -> TestCase:
    if truth.n != alt.n:
        raise ValueError(f"dimension mismatch: {truth.n} != {alt.n}")
    if alt.sigma >= constants.M1 * truth.sigma:
        return TestCase.LARGE_SIGMA
    dmu2 = float(np.sum((alt.mu - truth.mu) ** 2))
    if 7 * dmu2 > truth.n * (alt.sigma - truth.sigma) ** 2:
        return TestCase.MEAN_DOMINANT
    if truth.sigma <= alt.sigma:
        return TestCase.SIGMA_ABOVE
    return TestCase.SIGMA_BELOW


@dataclass(frozen=True)
class LocalTest:
    """A 0/1 test of ``truth`` against the ``epsilon/6`` ball around ``alt``."""

    truth: ParamPoint
    alt: ParamPoint
    epsilon: float
    case: TestCase
    constants: TestConstants

    __test__ = False

    def statistic(self, y: np.ndarray) -> np.ndarray:
        """Test statistic for each row of ``y`` (or for a single vector)."""
        r = np.asarray(y, dtype=float) - self.truth.mu
        n = self.truth.n
        if self.case is TestCase.LARGE_SIGMA:
            return np.sum(r * r, axis=-1) / self.truth.sigma ** 2
        if self.case is TestCase.MEAN_DOMINANT:
            return r @ (self.alt.mu - self.truth.mu)
        return np.abs(r).sum(axis=-1) / n - SQRT_2_OVER_PI * self.truth.sigma

    @property
    def threshold(self) -> float:
        n = self.truth.n
        if self.case is TestCase.LARGE_SIGMA:
            return self.constants.M0 ** 2 * n
        if self.case is TestCase.MEAN_DOMINANT:
            d = self.alt.mu - self.truth.mu
            return float(d @ d) / 2.0
        return SQRT_2_OVER_PI * (self.alt.sigma - self.truth.sigma) / 12.0

    def evaluate(self, y: np.ndarray):
        """1 rejects the truth.  Accepts one vector or a batch of rows."""
        stat = self.statistic(y)
        if self.case is TestCase.SIGMA_BELOW:
            out = stat <= self.threshold
        else:
            out = stat > self.threshold
        out = np.asarray(out, dtype=np.int8)
        return int(out) if out.ndim == 0 else out


def build_local_test(truth: ParamPoint, alt: ParamPoint, epsilon: float,
                     constants: TestConstants | None = None) -> LocalTest:
    constants = constants or TestConstants()
    if not 0 < epsilon < truth.sigma:
        raise ValueError(f"epsilon must lie in (0, sigma0={truth.sigma}), got {epsilon}")
    dist = metric_d(alt, truth)
    # relative slack absorbs rounding for alternatives placed exactly on the sphere
    if dist < epsilon * (1.0 - 1e-12):
        raise ValueError(f"alternative at distance {dist:.6g} is closer than epsilon={epsilon:.6g}")
    return LocalTest(truth, alt, float(epsilon), select_case(truth, alt, constants), constants)


def evaluate(test, y) -> int:
    """Evaluate a local or global test on one observation vector."""
    return int(test.evaluate(np.asarray(y, dtype=float)))


# --------------------------------------------------------------------------
# Monte Carlo error estimation
# --------------------------------------------------------------------------

def _reject_counts(tests, points, reps: int, seed) -> np.ndarray:
    """Count rejections of every test under every point.

    All points share the same standard normal draws (common random numbers),
    so comparisons across points and tests are not blurred by independent
    noise.  Returns an array of shape ``(len(points), len(tests))``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    rng = make_rng(seed)
    n = points[0].n
    counts = np.zeros((len(points), len(tests)), dtype=np.int64)
    chunk = max(1, _CHUNK_ELEMS // n)
    for start in range(0, reps, chunk):
        z = rng.standard_normal((min(chunk, reps - start), n))
        for i, pt in enumerate(points):
            y = pt.mu + pt.sigma * z
            for j, t in enumerate(tests):
                counts[i, j] += int(t.evaluate(y).sum())
    return counts


def mc_type1_error(test, reps: int, seed=None) -> ErrorEstimate:
    """Fraction of draws under the truth that the test rejects."""
    hits = int(_reject_counts([test], [test.truth], reps, seed)[0, 0])
    return ErrorEstimate.from_counts(hits, reps)


def mc_accept_rate(test, point: ParamPoint, reps: int, seed=None) -> ErrorEstimate:
    """``E_point (1 - phi)`` by simulation."""
    hits = int(_reject_counts([test], [point], reps, seed)[0, 0])
    return ErrorEstimate.from_counts(reps - hits, reps)


def _sample_ball(center: ParamPoint, radius: float, size: int, rng) -> list[ParamPoint]:
    """Uniform draws from the d-ball, rejecting draws with sigma <= 0."""
    n = center.n
    out: list[ParamPoint] = []
    while len(out) < size:
        g = rng.standard_normal(n + 1)
        g /= np.linalg.norm(g)
        g *= radius * rng.random() ** (1.0 / (n + 1))
        sigma = center.sigma + g[-1]
        if sigma <= 0:
            continue
        out.append(ParamPoint(center.mu + math.sqrt(n) * g[:-1], sigma))
    return out


def ball_extremes(test: LocalTest, radius: float) -> list[ParamPoint]:
    """Boundary points of the ball in the plane of ``mu1 - mu0`` and sigma.

    Eight equally spaced angles on the circle of the given radius; when the
    alternative shares the truth's mean only the two sigma extremes exist.
    Sigma is clipped to stay positive.
    """
    alt, truth = test.alt, test.truth
    n = alt.n
    floor = 1e-6 * alt.sigma
    delta = alt.mu - truth.mu
    norm = float(np.linalg.norm(delta))
    if norm == 0.0:
        return [ParamPoint(alt.mu, max(alt.sigma + s * radius, floor)) for s in (1.0, -1.0)]
    u = delta / norm
    pts = []
    for k in range(8):
        th = k * math.pi / 4
        pts.append(ParamPoint(alt.mu + math.sqrt(n) * radius * math.cos(th) * u,
                              max(alt.sigma + radius * math.sin(th), floor)))
    return pts


def mc_type2_error(test: LocalTest, reps: int, ball_samples: int, seed=None,
                   radius: float | None = None, include_extremes: bool = True) -> ErrorEstimate:
    """Approximate ``sup E_{mu,sigma}(1 - phi)`` over the ``epsilon/6`` ball.

    The candidate set is the ball centre, ``ball_samples - 1`` uniform draws
    from the ball and (optionally) the boundary points of
    :func:`ball_extremes`.  Returns the largest acceptance rate found.
    """
    if ball_samples < 1:
        raise ValueError("ball_samples must be >= 1")
    radius = test.epsilon / 6.0 if radius is None else float(radius)
    ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    ball_ss, mc_ss = ss.spawn(2)
    points = [test.alt]
    if radius > 0:
        points += _sample_ball(test.alt, radius, ball_samples - 1, make_rng(ball_ss))
        if include_extremes:
            points += ball_extremes(test, radius)
    accept = reps - _reject_counts([test], points, reps, mc_ss)[:, 0]
    worst = int(np.argmax(accept))
    est = ErrorEstimate.from_counts(int(accept[worst]), reps,
                                    note=f"worst of {len(points)} ball points")
    return est


# --------------------------------------------------------------------------
# covers
# --------------------------------------------------------------------------

def cover_interval(upper: float, radius: float) -> list[float]:
    """Centres ``radius, 3 radius, ...`` covering ``(0, upper]``."""
    if not (upper > 0 and radius > 0):
        raise ValueError("upper and radius must be positive")
    m = max(1, math.ceil(upper / (2.0 * radius)))
    return [(2 * i + 1) * radius for i in range(m)]


MAX_COVER = 10_000_000


def cover_mean_set_count(basis_dim: int, box_halfwidth: float, radius: float) -> int:
    spacing = 2.0 * radius / math.sqrt(basis_dim)
    per_axis = max(1, math.ceil(2.0 * box_halfwidth / spacing))
    return per_axis ** basis_dim


def cover_mean_set(basis_dim: int, box_halfwidth: float, radius: float) -> np.ndarray:
    """Grid cover of ``[-h, h]^basis_dim`` by L2 balls of the given radius.

    Spacing is ``2 radius / sqrt(basis_dim)``, so every box point is within
    half a spacing of a centre in each coordinate.  Rows are in
    lexicographic order.
    """
    if basis_dim < 1 or not (box_halfwidth > 0 and radius > 0):
        raise ValueError("basis_dim, box_halfwidth and radius must be positive")
    count = cover_mean_set_count(basis_dim, box_halfwidth, radius)
    if count > MAX_COVER:
        raise ValueError(f"cover would have {count} centres (limit {MAX_COVER})")
    spacing = 2.0 * radius / math.sqrt(basis_dim)
    per_axis = max(1, math.ceil(2.0 * box_halfwidth / spacing))
    offset = (per_axis * spacing - 2.0 * box_halfwidth) / 2.0
    axis = -box_halfwidth - offset + spacing * (np.arange(per_axis) + 0.5)
    return np.array(list(itertools.product(axis, repeat=basis_dim)), dtype=float)


# --------------------------------------------------------------------------
# global test
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GlobalTest:
    truth: ParamPoint
    centers: tuple
    local_tests: tuple
    M: float
    eps_n: float
    dropped: int = 0
    flags: tuple = field(default_factory=tuple)

    __test__ = False

    @property
    def degenerate(self) -> bool:
        return len(self.local_tests) == 0

    def evaluate(self, y: np.ndarray):
        y = np.asarray(y, dtype=float)
        if self.degenerate:
            out = np.zeros(y.shape[:-1], dtype=np.int8)
        else:
            out = self.local_tests[0].evaluate(y)
            for t in self.local_tests[1:]:
                out = np.maximum(out, t.evaluate(y))
        out = np.asarray(out, dtype=np.int8)
        return int(out) if out.ndim == 0 else out


def build_global_test(truth: ParamPoint, sieve_cover, M: float, eps_n: float,
                      constants: TestConstants | None = None) -> GlobalTest:
    """Max test over the cover centres at distance ``>= M eps_n`` from the truth."""
    constants = constants or TestConstants()
    if not M > 6:
        raise ValueError(f"M must exceed 6, got {M}")
    eps = M * eps_n
    if not 0 < eps < truth.sigma:
        raise ValueError(f"M*eps_n={eps:.6g} must lie in (0, sigma0={truth.sigma})")
    flags = []
    if eps > 0.9 * truth.sigma:
        flags.append("M*eps_n exceeds 0.9*sigma0")
        warnings.warn("M*eps_n exceeds 0.9*sigma0; local tests are near their validity limit",
                      stacklevel=2)
    kept, tests = [], []
    for c in sieve_cover:
        if metric_d(c, truth) >= eps:
            kept.append(c)
            tests.append(build_local_test(truth, c, eps, constants))
    dropped = len(list(sieve_cover)) - len(kept)
    if not tests:
        flags.append("empty cover: always-accept test")
        warnings.warn("no cover centre is separated from the truth; global test always accepts",
                      stacklevel=2)
    return GlobalTest(truth, tuple(kept), tuple(tests), float(M), float(eps_n), dropped, tuple(flags))


def evaluate_global(g: GlobalTest, y) -> int:
    return int(g.evaluate(np.asarray(y, dtype=float)))


def mc_global_errors(g: GlobalTest, points, reps: int, seed=None):
    """Rejection counts of the global test and of every component.

    Returns ``(global_counts, local_counts)`` with shapes ``(P,)`` and
    ``(P, N)`` for ``P`` points and ``N`` components, all computed on the
    same draws.
    """
    comps = list(g.local_tests)
    counts = _reject_counts(comps + [g], list(points), reps, seed)
    return counts[:, -1], counts[:, :-1]


# --------------------------------------------------------------------------
# decay experiment
# --------------------------------------------------------------------------

def sphere_alternatives(truth: ParamPoint, epsilon: float, angles, direction=None) -> list[ParamPoint]:
    """Alternatives at d-distance exactly ``epsilon`` in the (mean, sigma) plane.

    Angle 0 moves only the mean (along ``direction``), +pi/2 raises sigma,
    -pi/2 lowers it.
    """
    n = truth.n
    if direction is None:
        direction = np.ones(n) / math.sqrt(n)
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    return [ParamPoint(truth.mu + math.sqrt(n) * epsilon * math.cos(a) * direction,
                       truth.sigma + epsilon * math.sin(a)) for a in angles]


# one alternative per nontrivial case: sigma down, mean shift, sigma up
DEFAULT_ANGLES = (-math.pi / 2, 0.0, math.pi / 2)
# finer sweep of the half circle, for sensitivity runs
SPHERE_ANGLES = tuple(np.linspace(-math.pi / 2, math.pi / 2, 9))


@dataclass
class DecayRow:
    sigma0: float
    n: int
    x: float  # n eps^2 / sigma0^2
    epsilon: float
    type1: float
    type1_se: float
    type2: float
    type2_se: float
    worst_type1_case: str
    worst_type2_case: str


def decay_experiment(sigma0: float, n: int, x_grid, reps: int, seed=None,
                     ball_samples: int = 8, angles=DEFAULT_ANGLES,
                     constants: TestConstants | None = None, mu0=None) -> list[DecayRow]:
    """Worst-case type-I and type-II errors over alternatives on the d-sphere.

    For each ``x`` the separation is ``eps = sigma0 sqrt(x / n)`` and the
    alternatives are :func:`sphere_alternatives` at that radius.
    """
    constants = constants or TestConstants()
    mu0 = np.zeros(n) if mu0 is None else np.asarray(mu0, dtype=float)
    truth = ParamPoint(mu0, sigma0)
    root = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    rows = []
    for xi, ss in zip(x_grid, root.spawn(len(x_grid))):
        eps = sigma0 * math.sqrt(xi / n)
        alts = sphere_alternatives(truth, eps, angles)
        s1, s2 = ss.spawn(2)
        worst1 = worst2 = None
        for alt, a1, a2 in zip(alts, s1.spawn(len(alts)), s2.spawn(len(alts))):
            t = build_local_test(truth, alt, eps, constants)
            e1 = mc_type1_error(t, reps, a1)
            e2 = mc_type2_error(t, reps, ball_samples, a2)
            if worst1 is None or e1.estimate > worst1[0].estimate:
                worst1 = (e1, t.case)
            if worst2 is None or e2.estimate > worst2[0].estimate:
                worst2 = (e2, t.case)
        rows.append(DecayRow(sigma0, n, float(xi), eps, worst1[0].estimate, worst1[0].std_error,
                             worst2[0].estimate, worst2[0].std_error,
                             worst1[1].name, worst2[1].name))
    return rows


def fit_decay(x, values, reps: int) -> tuple[float, float]:
    """OLS of ``log(max(value, 1/reps))`` on ``x``; returns ``(slope, r_squared)``."""
    x = np.asarray(x, dtype=float)
    yv = np.log(np.maximum(np.asarray(values, dtype=float), 1.0 / reps))
    slope, intercept = np.polyfit(x, yv, 1)
    ss_tot = float(((yv - yv.mean()) ** 2).sum())
    ss_res = float(((yv - slope * x - intercept) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return float(slope), r2


# --------------------------------------------------------------------------
# global test experiment
# --------------------------------------------------------------------------

def block_basis(n: int, k: int) -> np.ndarray:
    """``n x k`` block-indicator basis scaled so ``||B beta||_2 / sqrt(n) = ||beta||_2``."""
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    B = np.zeros((n, k))
    for j, idx in enumerate(np.array_split(np.arange(n), k)):
        B[idx, j] = math.sqrt(n / idx.size)
    return B


def sieve_cover(n: int, basis_dim: int, box_halfwidth: float, sigma_upper: float,
                radius: float) -> list[ParamPoint]:
    """Product cover of ``{B beta : ||beta||_inf <= h} x (0, sigma_upper]``."""
    B = block_basis(n, basis_dim)
    betas = cover_mean_set(basis_dim, box_halfwidth, radius)
    sigmas = cover_interval(sigma_upper, radius)
    return [ParamPoint(B @ b, s) for b in betas for s in sigmas]


@dataclass
class GlobalErrorReport:
    centers: int
    dropped: int
    global_type1: ErrorEstimate
    local_type1: list
    pooled_se: float
    type2_points: list  # (global accept, local accept) ErrorEstimate pairs

    @property
    def local_type1_sum(self) -> float:
        return float(sum(e.estimate for e in self.local_type1))

    @property
    def union_bound_holds(self) -> bool:
        return self.global_type1.estimate <= self.local_type1_sum + 3.0 * self.pooled_se

    @property
    def max_type2_excess(self) -> float:
        """Largest ``global - local - 3 se`` over the tested alternatives (<= 0 is good)."""
        if not self.type2_points:
            return -math.inf
        return max(g.estimate - l.estimate - 3.0 * math.hypot(g.std_error, l.std_error)
                   for g, l in self.type2_points)


def global_test_experiment(sigma0: float, n: int, basis_dim: int, box_halfwidth: float,
                           sigma_upper: float, cover_radius: float, M: float, eps_n: float,
                           reps: int, seed=None, type2_points: int = 20,
                           constants: TestConstants | None = None,
                           max_centers: int = 200) -> GlobalErrorReport:
    """Type-I and type-II errors of the max test against its components.

    Type I is estimated at the truth ``(0, sigma0)``.  Type II is estimated
    at one uniform draw from the ``M eps_n / 6`` ball around each of up to
    ``type2_points`` covered centres, comparing the global acceptance rate
    with that of the centre's own local test on the same draws.
    """
    cover = sieve_cover(n, basis_dim, box_halfwidth, sigma_upper, cover_radius)
    if len(cover) > max_centers:
        raise ValueError(f"cover has {len(cover)} centres (limit {max_centers})")
    truth = ParamPoint(np.zeros(n), sigma0)
    g = build_global_test(truth, cover, M, eps_n, constants)
    root = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    s_type1, s_pick, s_type2 = root.spawn(3)
    gc, lc = mc_global_errors(g, [truth], reps, s_type1)
    local = [ErrorEstimate.from_counts(int(c), reps) for c in lc[0]]
    glob = ErrorEstimate.from_counts(int(gc[0]), reps)
    pooled = math.sqrt(glob.std_error ** 2 + sum(e.std_error ** 2 for e in local))
    pairs = []
    if not g.degenerate:
        rng = make_rng(s_pick)
        m = min(type2_points, len(g.local_tests))
        chosen = np.sort(rng.choice(len(g.local_tests), size=m, replace=False))
        for idx, ss in zip(chosen, s_type2.spawn(m)):
            t = g.local_tests[idx]
            pt = _sample_ball(t.alt, t.epsilon / 6.0, 1, rng)[0]
            cnt = _reject_counts([g, t], [pt], reps, ss)[0]
            pairs.append((ErrorEstimate.from_counts(reps - int(cnt[0]), reps),
                          ErrorEstimate.from_counts(reps - int(cnt[1]), reps)))
    return GlobalErrorReport(len(g.local_tests), g.dropped, glob, local, pooled, pairs)
