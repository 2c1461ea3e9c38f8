"""Tolerance and prediction intervals for non-normal models.

Link-function pivots and CI-plug-in quantiles for predicting sums of future
observations, tolerance intervals for the middle content of a future-sum
distribution, Monte-Carlo coverage tooling, and clinical-trial applications
(recruitment forecasting, time-on-treatment bands, phase-3 success).
"""

from . import applications, curves, dist, fit, intervals, simlab
from .dist import DistSpec, ParameterDomainError, RngStream
from .fit import (FitError, FitResult, KaplanMeier, SurvivalSample,
                  fit_binomial_logit, fit_gamma_intercept, fit_quasipoisson,
                  fit_weibull_censored, km_estimator, profile_lr_ci)
from .intervals import IntervalEstimate, PredictionTarget, se_from_ci
from .curves import CurveTable, build_curve, pvalue_upper, success_confidence
from .simlab import (CoverageReport, ScenarioSpec, emit_table,
                     run_gamma_coverage, run_poisson_gamma)

__version__ = "0.1.0"
