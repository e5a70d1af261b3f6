"""Tests and posterior contraction for Gaussian models with unknown variance."""
from .config import ConfigError, ExperimentConfig
from .contraction import (ConditionReport, audit_sigma_prior, kl_divergence, kl_variation,
                          lipschitz_constant)
from .highdim import (HighDimModel, HighDimTruth, exact_posterior, marginal_log_likelihood,
                      mcmc_posterior)
from .hyptest import (GlobalTest, LocalTest, TestCase, TestConstants, build_global_test,
                      build_local_test, select_case)
from .priors import HalfCauchy, InverseGamma, PointMass, Tabulated, make_prior
from .runner import ResultRow, emit_csv, emit_plot_data, run
from .spline import (SplineBasisSpec, SplineModel, basis_matrix, holder_truth,
                     posterior_over_J)
from .stat_core import ConvergenceError, ErrorEstimate, ParamPoint, metric_d

__version__ = "0.1.0"
