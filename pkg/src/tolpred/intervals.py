"""Interval constructors.

Normal-theory exact and CI-plug-in forms, the link-pivot and CI-plug-in
prediction intervals for sums, three approximate tolerance intervals
(delta-method, noncentral-t, CI-plug-in), the F-pivot and plug-in
comparators, the dispersed-count predictors, and the future-study
odds-ratio predictor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .fit import FitResult

__all__ = [
    "IntervalEstimate",
    "PredictionTarget",
    "se_from_ci",
    "normal_exact_prediction",
    "normal_exact_tolerance",
    "normal_approx_prediction",
    "normal_approx_tolerance",
    "predict_sum_link",
    "predict_sum_link_from",
    "predict_sum_plugci",
    "predict_sum_plugci_gamma",
    "predict_count_plugci",
    "predict_sum_fpivot",
    "predict_sum_plugin",
    "tolerance_delta",
    "tolerance_nct",
    "tolerance_plugci",
    "predict_count_kris",
    "predict_or",
    "predict_or_from",
]


@dataclass(frozen=True)
class IntervalEstimate:
    lower: float
    upper: float
    level: float
    method: str
    target: str
    sided: str = "two"
    content_p: float | None = None

    def __post_init__(self):
        if not (0.0 < self.level < 1.0):
            raise ValueError("level must be in (0,1)")
        if self.lower > self.upper + 1e-12:
            raise ValueError(f"lower {self.lower} exceeds upper {self.upper}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def rounded(self):
        """Integer-rounded count endpoints: floor(lower), ceil(upper)."""
        return math.floor(self.lower), math.ceil(self.upper)

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper


@dataclass(frozen=True)
class PredictionTarget:
    """Observed sample size and the size of what is being predicted:
    N-n remaining observations, m future subjects, or future exposure."""

    n: int
    future_units: float

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need n >= 2 observed")
        if self.future_units <= 0:
            raise ValueError("future_units must be positive")


def _zq(q: float) -> float:
    return float(stats.norm.ppf(q))


def _tq(q: float, df: float) -> float:
    return float(stats.t.ppf(q, df))


def se_from_ci(point: float, lower: float, upper: float, level: float = 0.95,
               crit: str = "z", df: int | None = None, side: str = "symmetric",
               link: str = "log") -> float:
    """Back out the link-scale SE implied by a reported confidence interval.

    ``side`` picks which half-width to use when the reported CI is not
    symmetric around the point estimate on the link scale (rounding, or a
    likelihood-ratio interval): 'lower', 'upper', or 'symmetric' (average).
    """
    g = math.log if link == "log" else (lambda v: v)
    c = _tq(1 - (1 - level) / 2, df) if crit == "t" else _zq(1 - (1 - level) / 2)
    w_lo = g(point) - g(lower)
    w_hi = g(upper) - g(point)
    if side == "lower":
        w = w_lo
    elif side == "upper":
        w = w_hi
    else:
        w = 0.5 * (w_lo + w_hi)
    if w <= 0:
        raise ValueError("confidence limits do not bracket the point estimate")
    return w / c


# ---------------------------------------------------------------------------
# normal theory

def normal_exact_prediction(ybar: float, s: float, n: int, level: float,
                            sigma_known: float | None = None) -> IntervalEstimate:
    """ybar +/- t_{n-1} * s * sqrt(1/n + 1); z and sigma when sigma is known."""
    if n < 2:
        raise ValueError("need n >= 2")
    if sigma_known is not None:
        c, sd = _zq(1 - (1 - level) / 2), sigma_known
    else:
        if s <= 0:
            raise ValueError("s must be positive")
        c, sd = _tq(1 - (1 - level) / 2, n - 1), s
    half = c * sd * math.sqrt(1.0 / n + 1.0)
    return IntervalEstimate(ybar - half, ybar + half, level,
                            "normal_exact_prediction", "future_observation")


def normal_exact_tolerance(ybar: float, s: float, n: int, p: float, level: float,
                           sided: str = "two") -> IntervalEstimate:
    """Noncentral-t tolerance limits for normal data.

    Two-sided covers the middle 100p% using noncentrality z_{(1+-p)/2}*sqrt(n);
    one-sided bounds the 100p-th percentile with nu = -z_p*sqrt(n).
    """
    if n < 2:
        raise ValueError("need n >= 2")
    rootn = math.sqrt(n)
    alpha = 1 - level
    if sided == "two":
        lo = ybar + stats.nct.ppf(alpha / 2, n - 1, _zq((1 - p) / 2) * rootn) * s / rootn
        hi = ybar + stats.nct.ppf(1 - alpha / 2, n - 1, _zq((1 + p) / 2) * rootn) * s / rootn
        return IntervalEstimate(lo, hi, level, "normal_exact_tolerance",
                                "middle_content", sided=sided, content_p=p)
    nu = -_zq(p) * rootn
    if sided == "upper":
        hi = ybar + stats.nct.ppf(1 - alpha, n - 1, -nu) * s / rootn
        return IntervalEstimate(-math.inf, hi, level, "normal_exact_tolerance",
                                "population_percentile", sided=sided, content_p=p)
    lo = ybar + stats.nct.ppf(alpha, n - 1, nu) * s / rootn
    return IntervalEstimate(lo, math.inf, level, "normal_exact_tolerance",
                            "population_percentile", sided=sided, content_p=p)


def normal_approx_prediction(ybar: float, s: float, n: int, level: float) -> IntervalEstimate:
    """CI-plug-in prediction: (mu_lower + z_{a/2}*s, mu_upper + z_{1-a/2}*s).

    Conservative relative to the exact form since 1/sqrt(n)+1 > sqrt(1/n+1).
    """
    alpha = 1 - level
    t = _tq(1 - alpha / 2, n - 1)
    mu_lo, mu_hi = ybar - t * s / math.sqrt(n), ybar + t * s / math.sqrt(n)
    return IntervalEstimate(mu_lo + _zq(alpha / 2) * s, mu_hi + _zq(1 - alpha / 2) * s,
                            level, "normal_approx_prediction", "future_observation")


def normal_approx_tolerance(ybar: float, s: float, n: int, p: float, level: float) -> IntervalEstimate:
    """CI-plug-in tolerance using the chi-square upper limit for sigma."""
    alpha = 1 - level
    t = _tq(1 - alpha / 2, n - 1)
    mu_lo, mu_hi = ybar - t * s / math.sqrt(n), ybar + t * s / math.sqrt(n)
    sigma_up = s * math.sqrt((n - 1) / stats.chi2.ppf(alpha, n - 1))
    return IntervalEstimate(mu_lo + _zq((1 - p) / 2) * sigma_up,
                            mu_hi + _zq((1 + p) / 2) * sigma_up,
                            level, "normal_approx_tolerance", "middle_content",
                            content_p=p)


# ---------------------------------------------------------------------------
# link-pivot prediction for sums

def predict_sum_link_from(mu_hat: float, se_g_mu: float, n: int, n_future: float,
                          level: float, link: str = "log",
                          crit: str = "t") -> IntervalEstimate:
    """(N-n) * g^{-1}{ g(mu_hat) +/- t_{n-1} * se_n } with the combined SE
    se_n = sqrt(n) * se(g{mu_hat}) * sqrt(1/n + 1/(N-n))."""
    if n_future < 1:
        raise ValueError("need at least one future observation")
    se_n = math.sqrt(n) * se_g_mu * math.sqrt(1.0 / n + 1.0 / n_future)
    c = _tq(1 - (1 - level) / 2, n - 1) if crit == "t" else _zq(1 - (1 - level) / 2)
    if link == "log":
        g = math.log(mu_hat)
        lo = n_future * math.exp(g - c * se_n)
        hi = n_future * math.exp(g + c * se_n)
    else:
        lo = n_future * (mu_hat - c * se_n)
        hi = n_future * (mu_hat + c * se_n)
    return IntervalEstimate(lo, hi, level, "link_pivot", "future_sum")


def predict_sum_link(fit: FitResult, target: PredictionTarget, level: float,
                     link: str = "log", se_kind: str = "sandwich",
                     variance: str = "equal") -> IntervalEstimate:
    """Link-pivot prediction interval for the sum of future observations.

    Gamma/Weibull/odds-ratio targets use a Student t with n-1 df.  For
    quasi-Poisson exposure targets ``target.future_units`` is future
    exposure; the pivot is standard normal and the default future-variance
    term replicates sqrt(se^2 + se^2) (``variance='scaled'`` uses
    se^2 * E_obs/E_future instead).
    """
    if fit.family == "quasipoisson":
        se = fit.se_g_mu(se_kind)
        lam_total = fit.mu_hat * target.future_units
        if variance == "equal":
            se_n = math.sqrt(2.0) * se
        else:
            se_n = se * math.sqrt(1.0 + fit.exposure_total / target.future_units)
        z = _zq(1 - (1 - level) / 2)
        if link != "log":
            raise ValueError("count prediction implemented for the log link")
        return IntervalEstimate(lam_total * math.exp(-z * se_n),
                                lam_total * math.exp(z * se_n),
                                level, "link_pivot", "future_sum")
    return predict_sum_link_from(fit.mu_hat, fit.se_g_mu(se_kind), fit.n_obs,
                                 target.future_units, level, link=link)


# ---------------------------------------------------------------------------
# CI-plug-in prediction (quantiles of the sum distribution at the mu limits)

def predict_sum_plugci_gamma(mu_lower: float, mu_upper: float, k: float,
                             n_future: float, level: float) -> IntervalEstimate:
    """Gamma((N-n)k, mu/k) quantiles evaluated at the mu confidence limits."""
    if mu_lower > mu_upper:
        raise ValueError("mu CI out of order")
    alpha = 1 - level
    lo = stats.gamma.ppf(alpha / 2, n_future * k, scale=mu_lower / k)
    hi = stats.gamma.ppf(1 - alpha / 2, n_future * k, scale=mu_upper / k)
    return IntervalEstimate(float(lo), float(hi), level, "ci_plug_prediction", "future_sum")


def predict_count_plugci(count_lower: float, count_upper: float,
                         dispersion_scale: float, level: float) -> IntervalEstimate:
    """Dispersed-count variant via the gamma approximation
    Gamma(shape=count/phi, scale=phi), phi the reported dispersion scale."""
    if count_lower > count_upper:
        raise ValueError("count CI out of order")
    alpha = 1 - level
    phi = dispersion_scale
    lo = stats.gamma.ppf(alpha / 2, count_lower / phi, scale=phi)
    hi = stats.gamma.ppf(1 - alpha / 2, count_upper / phi, scale=phi)
    return IntervalEstimate(float(lo), float(hi), level, "ci_plug_prediction", "future_sum")


def predict_sum_plugci(fit: FitResult, target: PredictionTarget, level: float,
                       se_kind: str = "sandwich", crit: str = "z") -> IntervalEstimate:
    """CI-plug-in prediction from a fit: Wald CI for mu on the link scale,
    then sum-distribution quantiles at the limits."""
    mu_lo, mu_hi = fit.ci_mu(level, se_kind=se_kind, crit=crit)
    if fit.family == "gamma":
        return predict_sum_plugci_gamma(mu_lo, mu_hi, fit.k_hat, target.future_units, level)
    if fit.family == "quasipoisson":
        ef = target.future_units
        return predict_count_plugci(mu_lo * ef, mu_hi * ef, fit.dispersion_scale, level)
    raise ValueError(f"no sum distribution for family {fit.family!r}")


# ---------------------------------------------------------------------------
# comparators

def predict_sum_fpivot(ybar: float, n: int, n_future: float, k: float,
                       level: float) -> IntervalEstimate:
    """F-pivot interval ((N-n)*ybar*f_{a/2}, (N-n)*ybar*f_{1-a/2}) with
    df 2(N-n)k and 2nk; exact for exponential data when k=1."""
    if ybar <= 0 or k <= 0:
        raise ValueError("ybar and k must be positive")
    alpha = 1 - level
    d1, d2 = 2.0 * n_future * k, 2.0 * n * k
    lo = n_future * ybar * stats.f.ppf(alpha / 2, d1, d2)
    hi = n_future * ybar * stats.f.ppf(1 - alpha / 2, d1, d2)
    return IntervalEstimate(float(lo), float(hi), level, "f_pivot", "future_sum")


def predict_sum_plugin(fit: FitResult, target: PredictionTarget,
                       level: float) -> IntervalEstimate:
    """Central quantile interval of the plug-in Gamma((N-n)k_hat, mu_hat/k_hat)."""
    alpha = 1 - level
    shape = target.future_units * fit.k_hat
    scale = fit.mu_hat / fit.k_hat
    return IntervalEstimate(float(stats.gamma.ppf(alpha / 2, shape, scale=scale)),
                            float(stats.gamma.ppf(1 - alpha / 2, shape, scale=scale)),
                            level, "plug_in", "future_sum")


# ---------------------------------------------------------------------------
# tolerance intervals for the sum distribution

def _sum_quantile(fit: FitResult, prob: float, n_future: float,
                  mu: float | None = None, k: float | None = None) -> float:
    """Quantile of the sum (or single-observation) distribution at (mu, k)."""
    mu = fit.mu_hat if mu is None else mu
    k = fit.k_hat if k is None else k
    if fit.family == "gamma":
        return float(stats.gamma.ppf(prob, n_future * k, scale=mu / k))
    if fit.family == "weibull":
        if n_future != 1:
            raise ValueError("weibull sum quantiles only defined for single observations")
        from scipy.special import gamma as gammafn
        lam = mu / gammafn(1 + 1 / k)
        return float(lam * (-math.log1p(-prob)) ** (1 / k))
    raise ValueError(f"no sum distribution for family {fit.family!r}")


def _delta_se(fit: FitResult, prob: float, n_future: float) -> float:
    """Delta-method SE of the sum quantile via central finite differences."""
    mu, k = fit.mu_hat, fit.k_hat
    h_mu = max(1e-4 * abs(mu), 1e-6)
    h_k = max(1e-4 * abs(k), 1e-6)
    d_mu = (_sum_quantile(fit, prob, n_future, mu=mu + h_mu)
            - _sum_quantile(fit, prob, n_future, mu=mu - h_mu)) / (2 * h_mu)
    d_k = (_sum_quantile(fit, prob, n_future, k=k + h_k)
           - _sum_quantile(fit, prob, n_future, k=k - h_k)) / (2 * h_k)
    var = ((d_mu * fit.se_mu) ** 2 + (d_k * fit.se_k) ** 2
           + 2.0 * d_mu * d_k * (fit.cov_mu_k or 0.0))
    if var < 0:
        raise ValueError("negative delta-method variance; covariance is not PSD")
    return math.sqrt(var)


def tolerance_delta(fit: FitResult, p: float, level: float, n_future: float,
                    link: str = "log") -> IntervalEstimate:
    """Delta-method percentile tolerance interval for the middle 100p%.

    Endpoints g^{-1}{ g(q_hat) -/+ t_{n-1} * se } with the quantile SE
    propagated through central finite differences and the (mu, k) covariance.
    """
    alpha = 1 - level
    t = _tq(1 - alpha / 2, fit.n_obs - 1)
    out = []
    for prob, sign in (((1 - p) / 2, -1.0), ((1 + p) / 2, +1.0)):
        q = _sum_quantile(fit, prob, n_future)
        se = _delta_se(fit, prob, n_future)
        if link == "log":
            out.append(q * math.exp(sign * t * se / q))
        else:
            out.append(q + sign * t * se)
    return IntervalEstimate(out[0], out[1], level, "delta_tolerance",
                            "middle_content", content_p=p)


def tolerance_nct(fit: FitResult, p: float, level: float,
                  n_future: float) -> IntervalEstimate:
    """Noncentral-t tolerance interval assuming the sum distribution is
    approximately normal; noncentrality z_{(1-+p)/2} * sqrt(n)/sqrt(N-n)."""
    n = fit.n_obs
    alpha = 1 - level
    center = n_future * fit.mu_hat
    spread = n_future * fit.se_mu
    rho = math.sqrt(n) / math.sqrt(n_future)
    lo = center + stats.nct.ppf(alpha / 2, n - 1, _zq((1 - p) / 2) * rho) * spread
    hi = center + stats.nct.ppf(1 - alpha / 2, n - 1, _zq((1 + p) / 2) * rho) * spread
    return IntervalEstimate(float(lo), float(hi), level, "nct_tolerance",
                            "middle_content", content_p=p)


def tolerance_plugci(fit: FitResult, p: float, level: float, n_future: float,
                     mu_ci: tuple[float, float] | None = None,
                     k_lower: float | None = None,
                     se_kind: str = "sandwich", crit: str = "z") -> IntervalEstimate:
    """CI-plug-in tolerance (q_{(1-p)/2}(mu_l, k_l), q_{(1+p)/2}(mu_u, k_l)).

    The lower k limit is used because the sum variance decreases in k.
    """
    if mu_ci is None:
        mu_ci = fit.ci_mu(level, se_kind=se_kind, crit=crit)
    mu_lo, mu_hi = mu_ci
    if mu_lo > mu_hi:
        raise ValueError("mu CI out of order")
    if k_lower is None:
        z = _zq(1 - (1 - level) / 2)
        k_lower = fit.k_hat * math.exp(-z * fit.se_k / fit.k_hat)
    lo = _sum_quantile(fit, (1 - p) / 2, n_future, mu=mu_lo, k=k_lower)
    hi = _sum_quantile(fit, (1 + p) / 2, n_future, mu=mu_hi, k=k_lower)
    return IntervalEstimate(lo, hi, level, "ci_plug_tolerance",
                            "middle_content", content_p=p)


# ---------------------------------------------------------------------------
# dispersed-count joint-sampling predictor

def kris_count_cdf(x, lam: float, e_obs: float, e_future: float,
                   dispersion_scale: float):
    """Upper p-value function of the joint-sampling count pivot with a
    dispersion parameter (the Krishnamoorthy-Peng construction)."""
    x = np.asarray(x, dtype=float)
    num = lam * e_future * e_obs - e_obs * x
    den = np.sqrt(dispersion_scale * (e_future * e_obs * (lam * e_obs + x)))
    out = 1.0 - stats.norm.cdf(num / den)
    return float(out) if out.ndim == 0 else out


def predict_count_kris(fit: FitResult, future_exposure: float,
                       level: float) -> IntervalEstimate:
    """Prediction interval for a future count by inverting the dispersed
    joint-sampling pivot."""
    if fit.family != "quasipoisson":
        raise ValueError("count prediction requires a quasi-Poisson fit")
    lam, e_obs = fit.mu_hat, fit.exposure_total
    if lam <= 0 or e_obs <= 0 or future_exposure <= 0:
        raise ValueError("rate and exposures must be positive")
    phi = fit.dispersion_scale
    alpha = 1 - level

    def root(target):
        f = lambda x: kris_count_cdf(x, lam, e_obs, future_exposure, phi) - target
        hi = max(10.0, 10.0 * lam * future_exposure)
        while f(hi) < 0:
            hi *= 2
        return float(optimize.brentq(f, 0.0, hi, xtol=1e-10))

    return IntervalEstimate(root(alpha / 2), root(1 - alpha / 2), level,
                            "kris_peng_count", "future_sum")


# ---------------------------------------------------------------------------
# odds-ratio prediction for a future study

def predict_or_from(log_or: float, se_log_or: float, n: int, m: int,
                    level: float) -> IntervalEstimate:
    """exp( log(rho_hat) +/- t_{n-1} * sqrt(n) * se * sqrt(1/n + 1/m) )."""
    if m < 1:
        raise ValueError("future sample size must be >= 1")
    half = (_tq(1 - (1 - level) / 2, n - 1)
            * math.sqrt(n) * se_log_or * math.sqrt(1.0 / n + 1.0 / m))
    return IntervalEstimate(math.exp(log_or - half), math.exp(log_or + half),
                            level, "or_prediction", "observable_estimate")


def predict_or(fit2: FitResult, n: int, m: int, level: float) -> IntervalEstimate:
    if fit2.family != "binomial_logit":
        raise ValueError("odds-ratio prediction requires a binomial-logit fit")
    return predict_or_from(fit2.mu_hat, fit2.se_g_mu("model"), n, m, level)
