"""Dispatch of configured experiments and serialisation of their results."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import hyptest
from .config import ExperimentConfig
from .contraction import (audit_sigma_prior, example_window_half_cauchy,
                          example_window_inverse_gamma, fit_rate_exponent)
from .highdim import contraction_experiment_highdim, mcmc_posterior
from .priors import HalfCauchy, InverseGamma
from .spline import contraction_experiment_spline, posterior_over_J
from .stat_core import task_seed

# column order in every CSV follows this tuple
METRICS = (
    "type1", "type2",
    "global_type1", "local_type1_sum", "union_pooled_se", "max_type2_excess", "centers", "dropped",
    "lhs", "rhs", "margin", "satisfied",
    "median_d_error", "median_error", "eps_n", "bad_mass", "support_hit", "posterior_mode_J",
    "mean_d_error", "median_f_error", "mean_error", "acceptance", "ess_sigma",
    "inclusion_prob", "posterior_mean", "posterior_prob", "log_evidence",
)
_METRIC_SET = frozenset(METRICS)


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    params: dict
    metric: str
    value: float
    std_error: float | None = None

    def __post_init__(self):
        if self.metric not in _METRIC_SET:
            raise ValueError(f"metric {self.metric!r} is not in the registry")
        clash = _METRIC_SET.intersection(self.params)
        if clash:
            # a parameter named like a metric would make the CSV header ambiguous
            raise ValueError(f"parameter names {sorted(clash)} collide with metric names")


def _rows(kind, params, metrics: dict, errors: dict | None = None):
    errors = errors or {}
    return [ResultRow(kind, dict(params), m, float(v), errors.get(m)) for m, v in metrics.items()]


# --------------------------------------------------------------------------
# per-kind pipelines
# --------------------------------------------------------------------------

def _test_errors_task(args):
    sigma0, n, x_grid, reps, seed, ball_samples, angles, M0, M1 = args
    return hyptest.decay_experiment(sigma0, n, x_grid, reps, seed, ball_samples,
                                    angles, hyptest.TestConstants(M0, M1))


def _run_test_errors(cfg: ExperimentConfig, executor):
    p = cfg.params
    angles = hyptest.DEFAULT_ANGLES if p.angles == "canonical" else hyptest.SPHERE_ANGLES
    tasks = [(s0, n, list(p.x_grid), cfg.mc_reps, task_seed(cfg.seed, i, j), p.ball_samples,
              angles, p.M0, p.M1)
             for i, s0 in enumerate(p.sigma0_values) for j, n in enumerate(cfg.n_grid)]
    mapper = map if executor is None else executor.map
    out = []
    for result in mapper(_test_errors_task, tasks):
        for r in result:
            params = {"sigma0": r.sigma0, "n": r.n, "x": r.x, "epsilon": r.epsilon,
                      "reps": cfg.mc_reps}
            out += _rows(cfg.kind, params, {"type1": r.type1, "type2": r.type2},
                         {"type1": r.type1_se, "type2": r.type2_se})
    return out


def _global_task(args):
    return hyptest.global_test_experiment(*args[:-2], constants=hyptest.TestConstants(*args[-2:]))


def _run_global(cfg: ExperimentConfig, executor):
    p = cfg.params
    tasks = [(p.sigma0, n, p.basis_dim, p.box_halfwidth, p.sigma_upper, p.cover_radius, p.M,
              p.eps_n, cfg.mc_reps, task_seed(cfg.seed, j), p.type2_points, p.M0, p.M1)
             for j, n in enumerate(cfg.n_grid)]
    mapper = map if executor is None else executor.map
    out = []
    for n, rep in zip(cfg.n_grid, mapper(_global_task, tasks)):
        params = {"n": n, "sigma0": p.sigma0, "M": p.M, "eps_rate": p.eps_n}
        out += _rows(cfg.kind, params, {
            "global_type1": rep.global_type1.estimate,
            "local_type1_sum": rep.local_type1_sum,
            "union_pooled_se": rep.pooled_se,
            "max_type2_excess": rep.max_type2_excess,
            "centers": rep.centers,
            "dropped": rep.dropped,
        }, {"global_type1": rep.global_type1.std_error})
    return out


def default_sigma0_sq(p, n: int) -> float:
    """A variance inside the admissible window for the configured prior."""
    if p.family == "inverse_gamma":
        w = example_window_inverse_gamma(p.a, p.b, p.xi, n, 1.0)
        lo, hi = w.detail["lower"], w.detail["upper"]
        if lo > hi:
            raise ValueError(f"the inverse gamma window is empty at n={n}: [{lo:.3g}, {hi:.3g}]")
        return math.sqrt(lo * hi)
    w = example_window_half_cauchy(p.r, p.xi, n, 1.0)
    return w.detail["upper"] / 10.0


def _run_prior_audit(cfg: ExperimentConfig, executor):
    p = cfg.params
    spec = InverseGamma(p.a, p.b) if p.family == "inverse_gamma" else HalfCauchy(p.r)
    out = []
    for n in cfg.n_grid:
        s2 = p.sigma0_sq if p.sigma0_sq is not None else default_sigma0_sq(p, n)
        sigma0 = math.sqrt(s2)
        eps_n = sigma0 * n ** (-p.xi)
        if p.family == "inverse_gamma":
            window = example_window_inverse_gamma(p.a, p.b, p.xi, n, s2)
        else:
            window = example_window_half_cauchy(p.r, p.xi, n, s2)
        for rep in audit_sigma_prior(spec, sigma0, eps_n, p.tail_tol):
            params = {"family": p.family, "n": n, "sigma0_sq": s2, "eps_rate": eps_n,
                      "in_window": int(window.satisfied), "condition": rep.condition}
            out += _rows(cfg.kind, params, {"lhs": rep.lhs, "rhs": rep.rhs, "margin": rep.margin,
                                            "satisfied": float(rep.satisfied)})
    return out


def _run_highdim(cfg: ExperimentConfig, executor):
    table = contraction_experiment_highdim(cfg.params, cfg.n_grid, cfg.replicates, cfg.seed, executor)
    out = []
    for r in table:
        metrics = {k: r[k] for k in ("median_d_error", "eps_n", "bad_mass", "support_hit",
                                     "mean_d_error", "acceptance", "ess_sigma")}
        out += _rows(cfg.kind, {"n": r["n"], "replicate": r["replicate"]}, metrics)
    return out


def _run_spline(cfg: ExperimentConfig, executor):
    table = contraction_experiment_spline(cfg.params, cfg.n_grid, cfg.replicates, cfg.seed, executor)
    out = []
    for r in table:
        metrics = {k: r[k] for k in ("median_error", "eps_n", "bad_mass", "posterior_mode_J",
                                     "median_f_error", "mean_error")}
        out += _rows(cfg.kind, {"n": r["n"], "replicate": r["replicate"]}, metrics)
    return out


_PIPELINES = {
    "test-errors": _run_test_errors,
    "global-test": _run_global,
    "prior-audit": _run_prior_audit,
    "highdim": _run_highdim,
    "spline": _run_spline,
}


def run(config: ExperimentConfig, executor=None) -> list[ResultRow]:
    """Validate ``config`` and run its pipeline.

    ``executor`` only changes scheduling: every task draws from a stream
    keyed by its position in the design, never by the worker running it.
    """
    config.validate()
    try:
        return _PIPELINES[config.kind](config, executor)
    except Exception as exc:
        raise RuntimeError(f"{config.kind} experiment failed: {exc}") from exc


def run_on_data(config: ExperimentConfig, data: np.ndarray) -> list[ResultRow]:
    """Posterior summaries for user data instead of simulated data.

    ``highdim``: columns are ``y, x_1, ..., x_p``.  ``spline``: columns are
    ``x, y`` with ``x`` in [0, 1].
    """
    config.validate()
    data = np.atleast_2d(np.asarray(data, dtype=float))
    p = config.params
    if config.kind == "highdim":
        if data.shape[1] < 2:
            raise ValueError("highdim data needs a response column and at least one predictor")
        y, X = data[:, 0], data[:, 1:]
        res = mcmc_posterior(y, p.model(X), p.iters, task_seed(config.seed, 0), burn_in=p.burn_in)
        incl = np.zeros(X.shape[1])
        for S in res.supports:
            incl[list(S)] += 1
        incl /= len(res.supports)
        mean = res.beta.mean(axis=0)
        out = []
        for j in range(X.shape[1]):
            out += _rows(config.kind, {"coordinate": j},
                         {"inclusion_prob": incl[j], "posterior_mean": mean[j]})
        return out
    if config.kind == "spline":
        if data.shape[1] != 2:
            raise ValueError("spline data needs exactly two columns: x, y")
        post = posterior_over_J(data[:, 1], data[:, 0], p.model())
        out = []
        for j, w, le in zip(post.dims, post.probs, post.log_evidence):
            out += _rows(config.kind, {"J": int(j)}, {"posterior_prob": w, "log_evidence": le})
        return out
    raise ValueError(f"--data is only supported for highdim and spline, not {config.kind}")


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def _parse(s: str):
    if s == "":
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def group_rows(rows):
    """Collapse long rows into ``(params, {metric: (value, std_error)})`` records."""
    groups: dict = {}
    for r in rows:
        key = tuple(r.params.items())
        groups.setdefault(key, {})[r.metric] = (r.value, r.std_error)
    return [(dict(k), m) for k, m in groups.items()]


def csv_columns(rows) -> list[str]:
    params: list[str] = []
    metrics, with_se = set(), set()
    for r in rows:
        for k in r.params:
            if k not in params:
                params.append(k)
        metrics.add(r.metric)
        if r.std_error is not None:
            with_se.add(r.metric)
    cols = list(params)
    for m in METRICS:
        if m in metrics:
            cols.append(m)
            if m in with_se:
                cols.append(m + "_se")
    return cols


def emit_csv(rows, path) -> None:
    """Wide CSV: parameter columns, then metric columns in registry order.

    Floats carry 17 significant digits so parsing recovers them exactly.
    """
    rows = list(rows)
    cols = csv_columns(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for params, metrics in group_rows(rows):
            rec = dict(params)
            for m, (v, se) in metrics.items():
                rec[m] = v
                if se is not None:
                    rec[m + "_se"] = se
            w.writerow([_fmt(rec.get(c)) for c in cols])


def read_csv(path, experiment: str) -> list[ResultRow]:
    """Inverse of :func:`emit_csv`."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        cols = next(reader)
        records = list(reader)
    metric_cols = [c for c in cols if c in _METRIC_SET]
    param_cols = [c for c in cols if c not in _METRIC_SET
                  and not (c.endswith("_se") and c[:-3] in _METRIC_SET)]
    out = []
    for rec in records:
        d = dict(zip(cols, rec))
        params = {c: _parse(d[c]) for c in param_cols}
        for m in metric_cols:
            if d[m] == "":
                continue
            se = d.get(m + "_se", "")
            out.append(ResultRow(experiment, params, m, float(d[m]), float(se) if se else None))
    return out


def plot_data(rows):
    """Long-format ``(x, series, value)`` triples and ``#`` comment lines."""
    rows = list(rows)
    if not rows:
        return [], []
    kind = rows[0].experiment
    grouped = group_rows(rows)
    triples, comments = [], []
    if kind == "test-errors":
        series = defaultdict(list)
        for params, m in grouped:
            floor = 1.0 / params["reps"]
            for name in ("type1", "type2"):
                label = f"log_{name} sigma0={_fmt(params['sigma0'])} n={params['n']}"
                series[label].append((params["x"], math.log(max(m[name][0], floor)), params["reps"]))
        for label in sorted(series):
            pts = sorted(series[label])
            triples += [(x, label, v) for x, v, _ in pts]
            if len(pts) >= 2:
                xs = np.array([x for x, _, _ in pts])
                vs = np.exp([v for _, v, _ in pts])
                slope, r2 = hyptest.fit_decay(xs, vs, pts[0][2])
                comments.append(f"slope {label}: {slope:.6g} (r2 {r2:.4g})")
    elif kind in ("highdim", "spline"):
        metric = "median_d_error" if kind == "highdim" else "median_error"
        by_n = defaultdict(list)
        eps = {}
        for params, m in grouped:
            by_n[params["n"]].append(m[metric][0])
            eps[params["n"]] = m["eps_n"][0]
        ns = sorted(by_n)
        med = [float(np.median(by_n[n])) for n in ns]
        for n, v in zip(ns, med):
            triples.append((math.log(n), "log_" + metric, math.log(v)))
            triples.append((math.log(n), "log_eps_n", math.log(eps[n])))
        if len(ns) >= 3:
            slope, r2 = fit_rate_exponent(ns, med)
            comments.append(f"slope log_{metric} vs log n: {slope:.6g} (r2 {r2:.4g})")
    else:
        for params, m in grouped:
            label = params.get("condition", kind)
            for name, (v, _) in m.items():
                triples.append((params["n"], f"{label}:{name}", v))
        triples.sort(key=lambda t: (t[1], t[0]))
    return triples, comments


def emit_plot_data(rows, path) -> None:
    triples, comments = plot_data(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for c in comments:
            fh.write("# " + c + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "series", "value"])
        for x, s, v in triples:
            w.writerow([_fmt(x), s, _fmt(v)])
