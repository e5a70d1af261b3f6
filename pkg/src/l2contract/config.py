"""Experiment configuration: defaults, validation and YAML round-trip."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import yaml

from .highdim import HighDimExperimentConfig
from .spline import SplineExperimentConfig, holder_truth, spline_sigma_window

KINDS = ("test-errors", "global-test", "prior-audit", "highdim", "spline")


@dataclass
class TestErrorsParams:
    sigma0_values: list = field(default_factory=lambda: [0.1, 1.0, 10.0])
    x_grid: list = field(default_factory=lambda: [5.0, 10.0, 20.0, 40.0, 80.0])
    ball_samples: int = 8
    angles: str = "canonical"
    M0: float = 3.0
    M1: float = 12.0

    __test__ = False


@dataclass
class GlobalTestParams:
    sigma0: float = 1.0
    basis_dim: int = 2
    box_halfwidth: float = 1.0
    sigma_upper: float = 2.0
    cover_radius: float = 0.25
    M: float = 8.0
    eps_n: float = 0.1
    type2_points: int = 20
    max_centers: int = 200
    M0: float = 3.0
    M1: float = 12.0


@dataclass
class PriorAuditParams:
    family: str = "half_cauchy"
    a: float = 1.0
    b: float = 1.0
    r: float = 1.0
    xi: float = 0.4
    sigma0_sq: float | None = None
    tail_tol: float = 0.01


PARAM_CLASSES = {
    "test-errors": TestErrorsParams,
    "global-test": GlobalTestParams,
    "prior-audit": PriorAuditParams,
    "highdim": HighDimExperimentConfig,
    "spline": SplineExperimentConfig,
}

DEFAULT_GRIDS = {
    "test-errors": ([400], 1, 10_000),
    "global-test": ([50], 1, 10_000),
    "prior-audit": ([10_000, 1_000_000, 100_000_000], 1, 1),
    "highdim": ([200, 400, 800, 1600], 10, 1),
    "spline": ([128, 256, 512, 1024, 2048], 10, 1),
}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists ``(field, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{f}: {m}" for f, m in self.errors))


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 20240601
    n_grid: list = field(default_factory=list)
    replicates: int = 1
    mc_reps: int = 10_000
    params: object = None

    @classmethod
    def default(cls, kind: str) -> "ExperimentConfig":
        if kind not in KINDS:
            raise ConfigError([("kind", f"unknown experiment kind {kind!r}; choose from {list(KINDS)}")])
        grid, reps, mc = DEFAULT_GRIDS[kind]
        return cls(kind, n_grid=list(grid), replicates=reps, mc_reps=mc, params=PARAM_CLASSES[kind]())

    # ---- serialisation ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "seed": self.seed, "n_grid": list(self.n_grid),
            "replicates": self.replicates, "mc_reps": self.mc_reps,
            "params": dataclasses.asdict(self.params),
        }

    @classmethod
    def from_dict(cls, data: dict, kind: str | None = None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError([("config", "top level must be a mapping")])
        kind = data.get("kind", kind)
        if kind is None:
            raise ConfigError([("kind", "missing experiment kind")])
        cfg = cls.default(kind)
        errors = []
        for key, value in data.items():
            if key in ("kind", "params"):
                continue
            if key not in ("seed", "n_grid", "replicates", "mc_reps"):
                errors.append((key, "unknown field"))
                continue
            setattr(cfg, key, _coerce(value, getattr(cfg, key)))
        params = data.get("params") or {}
        if not isinstance(params, dict):
            errors.append(("params", "must be a mapping"))
            params = {}
        known = {f.name for f in dataclasses.fields(cfg.params)}
        for key, value in params.items():
            if key not in known:
                errors.append((f"params.{key}", f"unknown field for {kind}; known: {sorted(known)}"))
            else:
                setattr(cfg.params, key, _coerce(value, getattr(cfg.params, key)))
        if errors:
            raise ConfigError(errors)
        return cfg

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    @classmethod
    def from_yaml(cls, text: str, kind: str | None = None) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError([("config", f"not valid YAML: {exc}")]) from exc
        return cls.from_dict(data or {}, kind)

    # ---- validation -------------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        """Raise :class:`ConfigError` listing every invalid field."""
        errs = _Errors()
        errs.integer("seed", self.seed, lo=0)
        errs.integer("replicates", self.replicates, lo=1)
        errs.integer("mc_reps", self.mc_reps, lo=1)
        grid_ok = isinstance(self.n_grid, list) and len(self.n_grid) > 0 and all(
            _is_int(v) and v >= 2 for v in self.n_grid)
        if not grid_ok:
            errs.add("n_grid", "must be a nonempty list of integers >= 2")
        elif any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            errs.add("n_grid", "must be strictly increasing")
            grid_ok = False
        _VALIDATORS[self.kind](self.params, self, errs, grid_ok)
        if errs.items:
            raise ConfigError(errs.items)
        return self


def _coerce(value, default):
    """Read numeric strings as numbers where the default is numeric or unset.

    YAML 1.1 loads ``1e9`` and ``1.0e9`` as strings.
    """
    if isinstance(value, str) and (default is None or _is_num(default)):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


class _Errors:
    def __init__(self):
        self.items = []

    def add(self, name, msg):
        self.items.append((name, msg))

    def number(self, name, v, lo=None, hi=None, lo_open=True, hi_open=False) -> bool:
        if not _is_num(v):
            self.add(name, f"must be a finite number, got {v!r}")
            return False
        if lo is not None and (v <= lo if lo_open else v < lo):
            self.add(name, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
            return False
        if hi is not None and (v >= hi if hi_open else v > hi):
            self.add(name, f"must be {'<' if hi_open else '<='} {hi}, got {v}")
            return False
        return True

    def integer(self, name, v, lo=None, hi=None) -> bool:
        if not _is_int(v):
            self.add(name, f"must be an integer, got {v!r}")
            return False
        if lo is not None and v < lo:
            self.add(name, f"must be >= {lo}, got {v}")
            return False
        if hi is not None and v > hi:
            self.add(name, f"must be <= {hi}, got {v}")
            return False
        return True

    def choice(self, name, v, options) -> bool:
        if v not in options:
            self.add(name, f"must be one of {list(options)}, got {v!r}")
            return False
        return True


def _check_test_errors(p: TestErrorsParams, cfg, errs: _Errors, grid_ok):
    ok = isinstance(p.sigma0_values, list) and p.sigma0_values and all(
        _is_num(v) and v > 0 for v in p.sigma0_values)
    if not ok:
        errs.add("params.sigma0_values", "must be a nonempty list of positive numbers")
    xs_ok = isinstance(p.x_grid, list) and len(p.x_grid) >= 2 and all(
        _is_num(v) and v > 0 for v in p.x_grid)
    if not xs_ok:
        errs.add("params.x_grid", "must list at least two positive values of n eps^2 / sigma0^2")
    elif grid_ok and max(p.x_grid) >= min(cfg.n_grid):
        # eps = sigma0 sqrt(x / n) must stay below sigma0
        errs.add("params.x_grid", f"every value must be below the smallest n ({min(cfg.n_grid)}) "
                 "so that epsilon < sigma0")
    errs.integer("params.ball_samples", p.ball_samples, lo=1)
    errs.choice("params.angles", p.angles, ("canonical", "sphere"))
    errs.number("params.M0", p.M0, lo=0)
    errs.number("params.M1", p.M1, lo=1)


def _check_global(p: GlobalTestParams, cfg, errs: _Errors, grid_ok):
    from .hyptest import cover_interval, cover_mean_set_count
    ok = errs.number("params.sigma0", p.sigma0, lo=0)
    errs.integer("params.basis_dim", p.basis_dim, lo=1)
    errs.number("params.box_halfwidth", p.box_halfwidth, lo=0)
    errs.number("params.sigma_upper", p.sigma_upper, lo=0)
    errs.number("params.cover_radius", p.cover_radius, lo=0)
    m_ok = errs.number("params.M", p.M, lo=6)
    e_ok = errs.number("params.eps_n", p.eps_n, lo=0)
    if ok and m_ok and e_ok and p.M * p.eps_n >= p.sigma0:
        errs.add("params.eps_n", f"M * eps_n = {p.M * p.eps_n:g} must be below sigma0 = {p.sigma0:g}")
    errs.integer("params.type2_points", p.type2_points, lo=1)
    errs.integer("params.max_centers", p.max_centers, lo=1)
    errs.number("params.M0", p.M0, lo=0)
    errs.number("params.M1", p.M1, lo=1)
    if grid_ok and _is_int(p.basis_dim) and p.basis_dim > min(cfg.n_grid):
        errs.add("params.basis_dim", "must not exceed the smallest n")
    if not errs.items:
        count = (cover_mean_set_count(p.basis_dim, p.box_halfwidth, p.cover_radius)
                 * len(cover_interval(p.sigma_upper, p.cover_radius)))
        if count > p.max_centers:
            errs.add("params.cover_radius", f"cover would have {count} centres "
                     f"(max_centers = {p.max_centers}); increase the radius or shrink the box")


def _check_prior_audit(p: PriorAuditParams, cfg, errs: _Errors, grid_ok):
    errs.choice("params.family", p.family, ("inverse_gamma", "half_cauchy"))
    if p.family == "inverse_gamma":
        errs.number("params.a", p.a, lo=0)
        errs.number("params.b", p.b, lo=0)
    elif p.family == "half_cauchy":
        errs.number("params.r", p.r, lo=0)
    errs.number("params.xi", p.xi, lo=0, hi=0.5, hi_open=True)
    if p.sigma0_sq is not None:
        errs.number("params.sigma0_sq", p.sigma0_sq, lo=0)
    errs.number("params.tail_tol", p.tail_tol, lo=0)


def _check_highdim(p: HighDimExperimentConfig, cfg, errs: _Errors, grid_ok):
    errs.number("params.sigma0", p.sigma0, lo=0)
    p_ok = errs.integer("params.p", p.p, lo=2)
    if errs.integer("params.s0", p.s0, lo=1) and p_ok and p.s0 > p.p:
        errs.add("params.s0", f"must not exceed p = {p.p}")
    errs.number("params.x_bound", p.x_bound, lo=0)
    if errs.number("params.beta_min", p.beta_min, lo=0) and _is_num(p.beta_max) \
            and p.beta_max < p.beta_min:
        errs.add("params.beta_max", "must be >= beta_min")
    errs.number("params.A", p.A, lo=0)
    errs.number("params.tau2", p.tau2, lo=0)
    errs.number("params.prior_a", p.prior_a, lo=0)
    errs.number("params.prior_b", p.prior_b, lo=0)
    errs.number("params.M", p.M, lo=0)
    if errs.integer("params.iters", p.iters, lo=1) and errs.integer("params.burn_in", p.burn_in, lo=0) \
            and p.burn_in >= p.iters:
        errs.add("params.burn_in", "must be smaller than iters")


def _check_spline(p: SplineExperimentConfig, cfg, errs: _Errors, grid_ok):
    s_ok = errs.number("params.sigma0", p.sigma0, lo=0)
    a_ok = errs.number("params.alpha", p.alpha, lo=0)
    if errs.choice("params.family", p.family, ("fractional", "kink", "smooth")) and a_ok:
        try:
            holder_truth(p.family, p.alpha, 1.0)
        except ValueError as exc:
            errs.add("params.alpha", str(exc))
    errs.number("params.amplitude", p.amplitude)
    q_ok = errs.integer("params.q", p.q, lo=0)
    if q_ok and a_ok and p.q + 1 < p.alpha:
        errs.add("params.q", f"q + 1 must be >= alpha = {p.alpha}")
    errs.number("params.A", p.A, lo=0)
    errs.number("params.tau2", p.tau2, lo=0)
    if errs.integer("params.J_max", p.J_max, hi=60) and q_ok and p.J_max < p.q + 1:
        errs.add("params.J_max", f"must be >= q + 1 = {p.q + 1}")
    errs.number("params.prior_a", p.prior_a, lo=0)
    errs.number("params.prior_b", p.prior_b, lo=0)
    errs.number("params.M", p.M, lo=0)
    errs.integer("params.draws", p.draws, lo=1)
    errs.choice("params.design", p.design, ("grid", "random"))
    if grid_ok and s_ok and a_ok:
        for n in cfg.n_grid:
            lo, hi = spline_sigma_window(n, p.alpha)
            if not lo <= p.sigma0 ** 2 <= hi:
                errs.add("params.sigma0", f"sigma0^2 = {p.sigma0 ** 2:g} outside [{lo:.3g}, {hi:.3g}] at n = {n}")
                break


_VALIDATORS = {
    "test-errors": _check_test_errors,
    "global-test": _check_global,
    "prior-audit": _check_prior_audit,
    "highdim": _check_highdim,
    "spline": _check_spline,
}
