import math

import numpy as np
import pytest
from scipy import stats

from tolpred import curves, dist, intervals
from tolpred.curves import build_curve, pvalue_upper, success_confidence
from tolpred.dist import RngStream
from tolpred.fit import FitResult, fit_gamma_intercept


def gamma_fit(n=20, seed=1, k=4.0, mu=2.5):
    y = dist.sample(dist.gamma(k, mu / k), RngStream(seed), n)
    return fit_gamma_intercept(y)


def worked_fit():
    """Fit carrying the recruitment-example summary statistics."""
    se = intervals.se_from_ci(2.61, 2.13, 3.19, crit="z", side="lower")
    return FitResult(family="gamma", link="log", mu_hat=2.61, k_hat=5.22,
                     se_g_mu_model=se, se_g_mu_sandwich=se, n_obs=20,
                     se_mu=2.61 * se, se_k=1.55, cov_mu_k=0.0)


def or_fit():
    se = intervals.se_from_ci(3.75, 1.03, 14.05, crit="t", df=99, side="upper")
    return FitResult(family="binomial_logit", link="logit",
                     mu_hat=math.log(3.75), se_g_mu_model=se,
                     se_g_mu_sandwich=se, n_obs=100)


# ---------------------------------------------------------------------------
# p-value function


def test_pvalue_half_at_point_prediction():
    fr = gamma_fit()
    point = 280 * fr.mu_hat
    for method in ("link_pivot", "ci_plug"):
        assert pvalue_upper(fr, point, method, 280) == pytest.approx(0.5, abs=2e-3)
    # the F reference has median below 1, so its p-value at the point
    # prediction sits slightly under one half
    for method in ("f_pivot", "f_pivot_k1"):
        got = pvalue_upper(fr, point, method, 280)
        assert 0.45 < got < 0.5


def test_pvalue_at_interval_endpoints():
    fr = worked_fit()
    assert pvalue_upper(fr, 583.0, "link_pivot", 280) == pytest.approx(0.025, abs=1e-3)
    assert pvalue_upper(fr, 914.0, "link_pivot", 280) == pytest.approx(0.975, abs=1e-3)


def test_pvalue_success_threshold():
    fr = or_fit()
    # p-value testing that the future study's observed odds ratio clears 1.71
    assert pvalue_upper(fr, 1.71, "or_prediction", 600) == pytest.approx(0.14, abs=0.01)


def test_pvalue_domain():
    fr = gamma_fit()
    with pytest.raises(ValueError):
        pvalue_upper(fr, -1.0, "link_pivot", 280)


# ---------------------------------------------------------------------------
# curve tables


@pytest.mark.parametrize("method", ["link_pivot", "ci_plug", "f_pivot", "f_pivot_k1"])
def test_curve_invariants(method):
    fr = gamma_fit(seed=2)
    table = build_curve(fr, method, 280)
    assert np.all(np.diff(table.H) >= 0)
    np.testing.assert_allclose(table.H + table.H_minus, 1.0, atol=1e-12)
    assert np.all(table.density >= 0)
    # C peaks at the grid point nearest the point prediction
    i_point = int(np.argmin(np.abs(table.grid - table.point_estimate)))
    i_max = int(np.argmax(table.C))
    assert abs(i_max - i_point) <= 1
    if method in ("link_pivot", "ci_plug"):
        assert table.C[i_max] == pytest.approx(0.5, abs=2e-3)
    else:
        # F reference: H at the point prediction is near, not exactly, 0.5
        assert table.C[i_max] == pytest.approx(0.5, abs=0.05)


def test_curve_crossings_match_interval():
    fr = gamma_fit(seed=3)
    table = build_curve(fr, "link_pivot", 280)
    lo, hi = table.interval_at(0.95)
    iv = intervals.predict_sum_link(fr, intervals.PredictionTarget(fr.n_obs, 280), 0.95)
    step = np.max(np.diff(table.grid))
    assert abs(lo - iv.lower) < step
    assert abs(hi - iv.upper) < step


def test_curve_level_nesting():
    fr = gamma_fit(seed=4)
    table = build_curve(fr, "link_pivot", 280)
    lo1, hi1 = table.interval_at(0.99)
    lo2, hi2 = table.interval_at(0.90)
    assert lo1 < lo2 < hi2 < hi1


def test_curve_grid_refinement_stability():
    fr = gamma_fit(seed=5)
    coarse = build_curve(fr, "link_pivot", 280, n_points=501)
    fine = build_curve(fr, "link_pivot", 280, n_points=1001)
    step = float(np.max(np.diff(coarse.grid)))
    for level in (0.8, 0.95):
        for a, b in zip(coarse.interval_at(level), fine.interval_at(level)):
            assert abs(a - b) < step


def test_curve_density_integrates_to_one():
    fr = gamma_fit(seed=6)
    table = build_curve(fr, "link_pivot", 280)
    integral = np.trapezoid(table.density, table.grid)
    assert 0.99 <= integral <= 1.005


def test_curve_density_mode_near_median():
    fr = gamma_fit(seed=7)
    table = build_curve(fr, "link_pivot", 280)
    med = table._crossing(0.5)
    step = np.max(np.diff(table.grid))
    # log-normal pivot density: mode sits just below the median
    assert abs(table.density_mode() - med) < 0.1 * med + step


def test_four_curve_worked_example():
    fr = worked_fit()
    eq1 = build_curve(fr, "link_pivot", 280)
    eq2 = build_curve(fr, "ci_plug", 280)
    lo1, hi1 = eq1.interval_at(0.95)
    lo2, hi2 = eq2.interval_at(0.95)
    assert lo1 == pytest.approx(583.8, abs=1.5)
    assert hi1 == pytest.approx(914.9, abs=1.5)
    iv2 = intervals.predict_sum_plugci(fr, intervals.PredictionTarget(20, 280), 0.95)
    assert lo2 == pytest.approx(iv2.lower, abs=0.5)
    assert hi2 == pytest.approx(iv2.upper, abs=0.5)
    fk = build_curve(fr, "f_pivot", 280)
    ivf = intervals.predict_sum_fpivot(fr.mu_hat, 20, 280, fr.k_hat, 0.95)
    lof, hif = fk.interval_at(0.95)
    step = np.max(np.diff(fk.grid))
    assert abs(lof - ivf.lower) < step and abs(hif - ivf.upper) < step
    f1 = build_curve(fr, "f_pivot_k1", 280)
    iv1 = intervals.predict_sum_fpivot(fr.mu_hat, 20, 280, 1.0, 0.95)
    lo_, hi_ = f1.interval_at(0.95)
    step = np.max(np.diff(f1.grid))
    assert abs(lo_ - iv1.lower) < step and abs(hi_ - iv1.upper) < step


def test_curve_csv_roundtrip(tmp_path):
    fr = gamma_fit(seed=8)
    table = build_curve(fr, "link_pivot", 280, n_points=51)
    path = tmp_path / "curve.csv"
    table.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "value,H,H_minus,C,density"
    arr = np.loadtxt(lines[1:], delimiter=",")
    np.testing.assert_allclose(arr[:, 0], table.grid, rtol=1e-10)
    np.testing.assert_allclose(arr[:, 1], table.H, rtol=1e-9, atol=1e-12)


# ---------------------------------------------------------------------------
# success confidence


def test_success_confidence_half_at_point():
    fr = or_fit()
    assert success_confidence(fr, 100, 600, 3.75) == pytest.approx(0.5, abs=1e-12)


def test_success_confidence_worked_value():
    fr = or_fit()
    assert success_confidence(fr, 100, 600, 1.71) == pytest.approx(0.86, abs=0.01)


def test_success_confidence_z_scale():
    fr = or_fit()
    got = success_confidence(fr, 100, 600, 1.96, statistic_scale="z_statistic")
    assert got == pytest.approx(0.86, abs=0.015)


def test_success_confidence_validation():
    fr = or_fit()
    with pytest.raises(ValueError):
        success_confidence(fr, 100, 600, -1.0)
    with pytest.raises(ValueError):
        success_confidence(gamma_fit(), 100, 600, 1.71)
