import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from tolpred import dist, intervals
from tolpred.dist import RngStream
from tolpred.fit import FitResult, fit_gamma_intercept, fit_quasipoisson
from tolpred.intervals import (IntervalEstimate, PredictionTarget,
                               normal_approx_prediction, normal_approx_tolerance,
                               normal_exact_prediction, normal_exact_tolerance,
                               predict_count_kris, predict_count_plugci,
                               predict_or_from, predict_sum_fpivot,
                               predict_sum_link, predict_sum_link_from,
                               predict_sum_plugci, predict_sum_plugci_gamma,
                               predict_sum_plugin, se_from_ci, tolerance_delta,
                               tolerance_nct, tolerance_plugci)


def gamma_fit(n=20, seed=1, k=4.0, mu=2.5):
    y = dist.sample(dist.gamma(k, mu / k), RngStream(seed), n)
    return fit_gamma_intercept(y)


# ---------------------------------------------------------------------------
# value objects


def test_interval_ordering_enforced():
    with pytest.raises(ValueError):
        IntervalEstimate(2.0, 1.0, 0.95, "m", "t")


def test_interval_rounding():
    iv = IntervalEstimate(209.7, 367.1, 0.95, "m", "future_sum")
    assert iv.rounded() == (209, 368)


def test_target_validation():
    with pytest.raises(ValueError):
        PredictionTarget(1, 10)
    with pytest.raises(ValueError):
        PredictionTarget(5, 0)


def test_se_from_ci_sides():
    # asymmetric-on-log-scale reported CI: sides give different SEs
    lo = se_from_ci(2.61, 2.13, 3.19, crit="z", side="lower")
    hi = se_from_ci(2.61, 2.13, 3.19, crit="z", side="upper")
    sym = se_from_ci(2.61, 2.13, 3.19, crit="z", side="symmetric")
    assert lo == pytest.approx(0.1037, abs=2e-4)
    assert min(lo, hi) < sym < max(lo, hi)
    t_se = se_from_ci(3.75, 1.03, 14.05, crit="t", df=99, side="upper")
    assert t_se == pytest.approx(0.6657, abs=2e-4)


# ---------------------------------------------------------------------------
# normal theory


def test_normal_exact_prediction_arithmetic():
    iv = normal_exact_prediction(0.0, 1.0, 20, 0.95)
    t19 = stats.t.ppf(0.975, 19)
    assert t19 == pytest.approx(2.0930, abs=1e-4)
    assert iv.upper == pytest.approx(t19 * math.sqrt(1.05), abs=1e-9)
    assert iv.lower == pytest.approx(-iv.upper)


def test_normal_exact_prediction_known_sigma_limit():
    iv = normal_exact_prediction(0.0, 1.0, 10 ** 6, 0.95, sigma_known=1.0)
    assert iv.width == pytest.approx(2 * stats.norm.ppf(0.975), abs=1e-3)


def test_normal_exact_prediction_coverage():
    gen = np.random.default_rng(21)
    n, reps = 15, 10 ** 4
    y = gen.normal(size=(reps, n))
    future = gen.normal(size=reps)
    ybar, s = y.mean(axis=1), y.std(axis=1, ddof=1)
    half = stats.t.ppf(0.975, n - 1) * s * math.sqrt(1 / n + 1)
    cover = np.mean((ybar - half <= future) & (future <= ybar + half))
    assert abs(cover - 0.95) < 3 * math.sqrt(0.95 * 0.05 / reps)


def test_normal_tolerance_central_reduction():
    # nu = 0: noncentral quantile equals the central t quantile
    iv = normal_exact_tolerance(0.0, 1.0, 20, 1e-12, 0.95)
    assert iv.lower == pytest.approx(stats.t.ppf(0.025, 19) / math.sqrt(20), abs=1e-6)


def test_normal_tolerance_mc_coverage():
    gen = np.random.default_rng(22)
    n, reps, p = 20, 4000, 0.90
    q_lo, q_hi = stats.norm.ppf([(1 - p) / 2, (1 + p) / 2])
    y = gen.normal(size=(reps, n))
    ybar, s = y.mean(axis=1), y.std(axis=1, ddof=1)
    nct_lo = stats.nct.ppf(0.025, n - 1, stats.norm.ppf((1 - p) / 2) * math.sqrt(n))
    nct_hi = stats.nct.ppf(0.975, n - 1, stats.norm.ppf((1 + p) / 2) * math.sqrt(n))
    lo = ybar + nct_lo * s / math.sqrt(n)
    hi = ybar + nct_hi * s / math.sqrt(n)
    cover = np.mean((lo <= q_lo) & (q_hi <= hi))
    assert abs(cover - 0.95) < 3 * math.sqrt(0.95 * 0.05 / reps)
    # spot-check the constructor agrees with the direct formula
    iv = normal_exact_tolerance(float(ybar[0]), float(s[0]), n, p, 0.95)
    assert iv.lower == pytest.approx(float(lo[0]))
    assert iv.upper == pytest.approx(float(hi[0]))


def test_normal_one_sided_tolerance():
    iv = normal_exact_tolerance(0.0, 1.0, 25, 0.9, 0.95, sided="upper")
    assert iv.lower == -math.inf
    # one-sided upper limit exceeds the plug-in percentile
    assert iv.upper > stats.norm.ppf(0.9)


def test_normal_approx_wider_than_exact():
    # algebraic identity behind the conservativeness claim
    for n in (1, 2, 5, 20, 100, 10 ** 6):
        assert (1 / math.sqrt(n) + 1) / math.sqrt(1 / n + 1) > 1.0
    # constructor comparison (mean CI uses t, future term uses z, so the
    # identity kicks in once the t quantile has settled down)
    for n in (5, 20, 100, 10 ** 6):
        exact = normal_exact_prediction(0.0, 1.0, n, 0.95)
        approx = normal_approx_prediction(0.0, 1.0, n, 0.95)
        ratio = approx.width / exact.width
        assert ratio > 1.0
        if n == 10 ** 6:
            assert ratio < 1.001


def test_normal_approx_tolerance_conservative():
    gen = np.random.default_rng(23)
    n, reps, p = 20, 4000, 0.90
    q_lo, q_hi = stats.norm.ppf([(1 - p) / 2, (1 + p) / 2])
    covered = 0
    y = gen.normal(size=(reps, n))
    for row in y:
        iv = normal_approx_tolerance(float(row.mean()), float(row.std(ddof=1)),
                                     n, p, 0.95)
        covered += iv.lower <= q_lo and q_hi <= iv.upper
    assert covered / reps >= 0.95 - 1e-9


# ---------------------------------------------------------------------------
# sum prediction, worked numbers


def test_link_pivot_worked_numbers():
    se = se_from_ci(2.61, 2.13, 3.19, crit="z", side="lower")
    iv = predict_sum_link_from(2.61, se, 20, 280, 0.95)
    assert iv.lower == pytest.approx(583, abs=1)
    assert iv.upper == pytest.approx(914, abs=1)


def test_plugci_worked_numbers():
    iv = predict_sum_plugci_gamma(2.13, 3.19, 5.22, 280, 0.95)
    assert iv.lower == pytest.approx(566, abs=1)
    assert iv.upper == pytest.approx(940, abs=1)


def test_plugci_count_worked_numbers():
    iv = predict_count_plugci(2.20 * 104.29, 3.28 * 104.29, 0.46, 0.95)
    assert iv.lower == pytest.approx(210, abs=1)
    assert iv.upper == pytest.approx(367, abs=1)


def test_count_link_pivot_sqrt2():
    events = np.array([2, 3, 4, 2, 3, 2, 4])
    exposure = np.full(7, 104.29 / 7)
    fr = fit_quasipoisson(events, exposure)
    iv = predict_sum_link(fr, PredictionTarget(7, 104.29), 0.95,
                          se_kind="model")
    lam_tot = fr.mu_hat * 104.29
    z = stats.norm.ppf(0.975)
    expected = lam_tot * math.exp(z * math.sqrt(2) * fr.se_g_mu_model)
    assert iv.upper == pytest.approx(expected, rel=1e-12)
    # scaled variant coincides when observed and future exposures match
    iv2 = predict_sum_link(fr, PredictionTarget(7, 104.29), 0.95,
                           se_kind="model", variance="scaled")
    assert iv2.upper == pytest.approx(iv.upper, rel=1e-12)


def test_link_pivot_future_limit():
    # as the future share vanishes, width/(N-n) approaches the t CI width
    fr = gamma_fit()
    se = fr.se_g_mu_sandwich
    t = stats.t.ppf(0.975, fr.n_obs - 1)
    iv = predict_sum_link(fr, PredictionTarget(fr.n_obs, 10 ** 8), 0.95)
    log_half = math.log(iv.upper / (10 ** 8 * fr.mu_hat))
    assert log_half == pytest.approx(t * se, rel=1e-3)


def test_plugci_degenerate_ci_equals_plugin():
    fr = gamma_fit()
    tgt = PredictionTarget(fr.n_obs, 280)
    plug = predict_sum_plugin(fr, tgt, 0.95)
    degen = predict_sum_plugci_gamma(fr.mu_hat, fr.mu_hat, fr.k_hat, 280, 0.95)
    assert degen.lower == pytest.approx(plug.lower, rel=1e-12)
    assert degen.upper == pytest.approx(plug.upper, rel=1e-12)


def test_plugci_contains_plugin():
    fr = gamma_fit(seed=31)
    tgt = PredictionTarget(fr.n_obs, 280)
    plug = predict_sum_plugin(fr, tgt, 0.95)
    eq2 = predict_sum_plugci(fr, tgt, 0.95)
    assert eq2.lower <= plug.lower
    assert eq2.upper >= plug.upper


def test_point_prediction_centering():
    fr = gamma_fit(seed=32)
    tgt = PredictionTarget(fr.n_obs, 280)
    point = 280 * fr.mu_hat
    for iv in (predict_sum_link(fr, tgt, 0.95),
               predict_sum_plugci(fr, tgt, 0.95),
               predict_sum_plugin(fr, tgt, 0.95),
               predict_sum_fpivot(fr.mu_hat, fr.n_obs, 280, fr.k_hat, 0.95)):
        assert iv.lower <= point <= iv.upper


def test_fpivot_exact_coverage_exponential():
    reps, n, N = 10 ** 4, 20, 300
    gen = np.random.default_rng(33)
    y = gen.exponential(2.5, size=(reps, n))
    future = gen.gamma(N - n, 2.5, size=reps)
    ybar = y.mean(axis=1)
    f_lo = stats.f.ppf(0.025, 2 * (N - n), 2 * n)
    f_hi = stats.f.ppf(0.975, 2 * (N - n), 2 * n)
    cover = np.mean(((N - n) * ybar * f_lo <= future)
                    & (future <= (N - n) * ybar * f_hi))
    assert abs(cover - 0.95) < 3 * math.sqrt(0.95 * 0.05 / reps)


def test_fpivot_collapses_at_level_zero():
    fr = gamma_fit()
    iv = predict_sum_fpivot(fr.mu_hat, fr.n_obs, 280, 1.0, 1e-9)
    med = 280 * fr.mu_hat * stats.f.ppf(0.5, 2 * 280, 2 * fr.n_obs)
    assert iv.lower == pytest.approx(med, rel=1e-4)
    assert iv.upper == pytest.approx(med, rel=1e-4)


def test_plugin_level_zero_is_median():
    fr = gamma_fit()
    iv = predict_sum_plugin(fr, PredictionTarget(fr.n_obs, 280), 1e-12)
    med = stats.gamma.ppf(0.5, 280 * fr.k_hat, scale=fr.mu_hat / fr.k_hat)
    assert iv.lower == pytest.approx(med, rel=1e-6)


# ---------------------------------------------------------------------------
# tolerance intervals


def test_delta_zero_variance_equals_plugin_percentiles():
    fr = gamma_fit(seed=34)
    frozen = FitResult(family="gamma", link="log", mu_hat=fr.mu_hat,
                       k_hat=fr.k_hat, se_mu=0.0, se_k=0.0, cov_mu_k=0.0,
                       se_g_mu_model=fr.se_g_mu_model,
                       se_g_mu_sandwich=fr.se_g_mu_sandwich, n_obs=fr.n_obs)
    iv = tolerance_delta(frozen, 0.5, 0.95, 280)
    assert iv.lower == pytest.approx(
        stats.gamma.ppf(0.25, 280 * fr.k_hat, scale=fr.mu_hat / fr.k_hat))
    assert iv.upper == pytest.approx(
        stats.gamma.ppf(0.75, 280 * fr.k_hat, scale=fr.mu_hat / fr.k_hat))


def test_delta_se_vs_bootstrap():
    fr = gamma_fit(n=100, seed=35)
    from tolpred.intervals import _delta_se, _sum_quantile
    prob, n_fut = 0.25, 200
    se_delta = _delta_se(fr, prob, n_fut)
    gen = np.random.default_rng(36)
    reps = 2000
    boot_q = np.empty(reps)
    for b in range(reps):
        yb = gen.gamma(fr.k_hat, fr.mu_hat / fr.k_hat, size=fr.n_obs)
        frb = fit_gamma_intercept(yb)
        boot_q[b] = _sum_quantile(frb, prob, n_fut)
    ratio = se_delta / boot_q.std(ddof=1)
    assert 0.9 < ratio < 1.1


def test_nct_tolerance_centered_and_ordered():
    fr = gamma_fit(n=100, seed=37)
    iv = tolerance_nct(fr, 0.5, 0.95, 200)
    assert iv.lower < 200 * fr.mu_hat < iv.upper


def test_nct_reduces_to_central_t():
    # at vanishing content the noncentralities vanish and the interval is the
    # central-t band around the point prediction
    fr = gamma_fit(seed=38)
    iv = tolerance_nct(fr, 1e-12, 0.95, 280)
    t = stats.t.ppf(0.975, fr.n_obs - 1)
    assert iv.upper - iv.lower == pytest.approx(2 * t * 280 * fr.se_mu, rel=1e-6)


def test_plugci_tolerance_monotone_in_k_lower():
    fr = gamma_fit(seed=39)
    ci = fr.ci_mu(0.95)
    wide = tolerance_plugci(fr, 0.5, 0.95, 280, mu_ci=ci, k_lower=fr.k_hat * 0.5)
    narrow = tolerance_plugci(fr, 0.5, 0.95, 280, mu_ci=ci, k_lower=fr.k_hat)
    assert wide.lower <= narrow.lower
    assert wide.upper >= narrow.upper


def test_plugci_tolerance_degenerate_is_plugin_pair():
    fr = gamma_fit(seed=40)
    iv = tolerance_plugci(fr, 0.5, 0.95, 280, mu_ci=(fr.mu_hat, fr.mu_hat),
                          k_lower=fr.k_hat)
    assert iv.lower == pytest.approx(
        stats.gamma.ppf(0.25, 280 * fr.k_hat, scale=fr.mu_hat / fr.k_hat))
    assert iv.upper == pytest.approx(
        stats.gamma.ppf(0.75, 280 * fr.k_hat, scale=fr.mu_hat / fr.k_hat))


# ---------------------------------------------------------------------------
# dispersed counts


def qp_fit(lam=2.69, e_total=104.29, phi_scale=0.46, n_obs=14):
    se_log = math.sqrt(phi_scale ** 2 / (lam * e_total))
    return FitResult(family="quasipoisson", link="log", mu_hat=lam,
                     phi_hat=phi_scale ** 2, se_g_mu_model=se_log,
                     se_g_mu_sandwich=se_log, n_obs=n_obs,
                     exposure_total=e_total)


def test_kris_count_matches_poisson_when_phi_one():
    lam, e = 5.0, 100.0  # lam*E = 500
    fr = qp_fit(lam=lam, e_total=e, phi_scale=1.0)
    iv = predict_count_kris(fr, e, 0.95)
    # joint-sampling Poisson prediction oracle: X ~ Poisson(lam*E_o) observed,
    # Y ~ Poisson(lam*E_f); normal approximation to the exact pivot
    x_obs = lam * e
    half = stats.norm.ppf(0.975) * math.sqrt(2 * x_obs)
    assert iv.lower == pytest.approx(x_obs - half, abs=2.0)
    assert iv.upper == pytest.approx(x_obs + half, abs=2.0)


def test_kris_count_cdf_monotone():
    fr = qp_fit()
    from tolpred.intervals import kris_count_cdf
    xs = np.linspace(1, 900, 200)
    vals = kris_count_cdf(xs, fr.mu_hat, fr.exposure_total, 104.29,
                          fr.dispersion_scale)
    assert np.all(np.diff(vals) >= 0)
    central = np.linspace(230, 330, 100)  # within a few sd of the mean count
    vc = kris_count_cdf(central, fr.mu_hat, fr.exposure_total, 104.29,
                        fr.dispersion_scale)
    assert np.all(np.diff(vc) > 0)


def test_kris_count_interval_brackets_point():
    fr = qp_fit()
    iv = predict_count_kris(fr, 104.29, 0.95)
    assert iv.lower < 2.69 * 104.29 < iv.upper


def test_kris_requires_quasipoisson():
    with pytest.raises(ValueError):
        predict_count_kris(gamma_fit(), 100.0, 0.95)


# ---------------------------------------------------------------------------
# odds-ratio prediction


def test_or_prediction_worked_numbers():
    se = se_from_ci(3.75, 1.03, 14.05, crit="t", df=99, side="upper")
    iv = predict_or_from(math.log(3.75), se, 100, 600, 0.95)
    assert iv.lower == pytest.approx(0.90, abs=0.02)
    assert iv.upper == pytest.approx(15.62, abs=0.02)


def test_or_prediction_m_to_infinity():
    se, n = 0.4, 50
    iv = predict_or_from(0.7, se, n, 10 ** 9, 0.95)
    t = stats.t.ppf(0.975, n - 1)
    assert math.log(iv.upper) == pytest.approx(0.7 + t * se, abs=1e-3)


def test_or_prediction_m_equals_n_width():
    se, n = 0.4, 50
    iv = predict_or_from(0.0, se, n, n, 0.95)
    t = stats.t.ppf(0.975, n - 1)
    assert math.log(iv.upper) - math.log(iv.lower) == pytest.approx(
        2 * t * math.sqrt(2) * se, rel=1e-12)


# ---------------------------------------------------------------------------
# property-based checks


@settings(max_examples=40, deadline=None)
@given(mu=st.floats(0.5, 20.0), se=st.floats(0.01, 0.6),
       n=st.integers(3, 200), n_fut=st.integers(1, 500))
def test_link_pivot_properties(mu, se, n, n_fut):
    iv90 = predict_sum_link_from(mu, se, n, n_fut, 0.90)
    iv95 = predict_sum_link_from(mu, se, n, n_fut, 0.95)
    point = n_fut * mu
    assert iv95.lower <= iv90.lower <= point <= iv90.upper <= iv95.upper
    assert iv95.width > iv90.width
    assert iv95.lower > 0


@settings(max_examples=25, deadline=None)
@given(level=st.floats(0.5, 0.99), k=st.floats(0.5, 8.0),
       mu=st.floats(0.5, 10.0))
def test_fpivot_width_increases_with_level(level, k, mu):
    iv_lo = predict_sum_fpivot(mu, 20, 100, k, level)
    iv_hi = predict_sum_fpivot(mu, 20, 100, k, min(level + 0.005, 0.995))
    assert iv_hi.width >= iv_lo.width
