import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nncusum.baselines import ExactCusum
from nncusum.core import RunResult
from nncusum.datagen import preset_pair
from nncusum.evaluation import (
    ArlFit,
    CalibrationError,
    arl_curve,
    calibrate_from_maxima,
    evaluate,
    fit_exponential_tail,
    metrics_from_runs,
    pre_change_runs,
    pre_change_stopping_times,
    run_maxima,
    type1_threshold_from_maxima,
)


def test_arl_fit_formula():
    fit = ArlFit.from_fraction(0.5, 1000, 10)
    assert fit.rate == pytest.approx(math.log(2) / 1000)
    assert fit.arl_estimate == pytest.approx(1000 / math.log(2))
    assert ArlFit.from_fraction(0.0, 10, 1).arl_estimate == math.inf
    assert ArlFit.from_fraction(1.0, 10, 1).arl_estimate == 0.0


def test_geometric_crossing_times_recover_arl():
    # i.i.d. per-step alarm probability q: P(tau > T) = (1 - q)^T, ARL ~ 1/q
    rng = np.random.default_rng(0)
    q, horizon, n = 1 / 800, 500, 10**4
    taus = rng.geometric(q, size=n)
    maxima = np.where(taus <= horizon, 1.0, 0.0)
    fit = ArlFit.from_maxima(maxima, 0.5, horizon)
    expected = -1 / math.log1p(-q)
    assert fit.arl_estimate == pytest.approx(expected, rel=0.05)


def test_calibration_inverts_the_fit():
    maxima = np.random.default_rng(1).gumbel(3.0, 1.0, size=400)
    cal = calibrate_from_maxima(maxima, 5000, 5500, tolerance=0.1)
    assert abs(cal.fit.arl_estimate - 5000) <= 500
    assert cal.fit.arl_estimate == pytest.approx(ArlFit.from_maxima(maxima, cal.threshold, 5500).arl_estimate)
    assert not cal.boundary


def test_calibration_monotone_in_target():
    maxima = np.random.default_rng(2).gumbel(3.0, 1.0, size=400)
    low = calibrate_from_maxima(maxima, 1000, 5500, tolerance=0.1)
    high = calibrate_from_maxima(maxima, 5000, 5500, tolerance=0.1)
    assert high.threshold > low.threshold


def test_calibration_with_tied_maxima_falls_back_to_conservative_threshold():
    cal = calibrate_from_maxima(np.zeros(100), 5000, 5500)
    assert cal.boundary
    assert cal.threshold == 0.0
    assert cal.fit.arl_estimate == math.inf


def test_calibration_out_of_bracket_raises():
    with pytest.raises(CalibrationError):
        calibrate_from_maxima(np.ones(10), 5000, 5500, b_range=(2.0, 3.0))
    with pytest.raises(CalibrationError):
        calibrate_from_maxima(np.full(5, -math.inf), 5000, 5500)


def test_type1_threshold_is_empirical_quantile():
    maxima = np.arange(100.0)
    cal = type1_threshold_from_maxima(maxima, 0.1)
    assert cal.threshold == pytest.approx(np.quantile(maxima, 0.9))
    assert np.mean(maxima > cal.threshold) <= 0.1
    assert not cal.boundary
    tiny = type1_threshold_from_maxima(np.arange(10.0), 0.01)
    assert tiny.boundary and tiny.threshold == 9.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=5, max_size=50), st.floats(0.01, 0.5))
def test_type1_error_never_exceeds_target_much(values, alpha):
    cal = type1_threshold_from_maxima(values, alpha)
    assert np.mean(np.asarray(values) > cal.threshold) <= alpha + 1 / len(values)


def run(stats, k, incs=None):
    stats = np.asarray(stats, dtype=float)
    return RunResult(stats, np.arange(1, stats.size + 1), math.inf, k, increments=incs)


def test_metrics_censoring_and_rates():
    k, horizon, b = 3, 8, 1.0
    runs = [
        run([0, 0, 0, 0, 2, 0, 0, 0], k),   # detects at 5 -> delay 2
        run([0, 2, 0, 0, 0, 0, 0, 0], k),   # false alarm, never after k -> censored
        run([0, 0, 0, 0, 0, 0, 0, 5], k),   # delay 5
    ]
    rep = metrics_from_runs(runs, b, horizon)
    assert rep.censored_count == 1
    assert rep.edd == pytest.approx((2 + 5 + 5) / 3)
    assert rep.conditional_edd == pytest.approx(3.5)
    assert rep.type1_error == pytest.approx(1 / 3)
    assert rep.failure_rate == pytest.approx(1 / 3)
    # accounting identity: detected + censored = n
    assert rep.censored_count + 2 == rep.n_sequences


def test_edd_nonincreasing_as_threshold_drops():
    rng = np.random.default_rng(3)
    runs = [run(np.cumsum(np.abs(rng.normal(size=50))), 10) for _ in range(20)]
    edds = [metrics_from_runs(runs, b, 50).edd for b in (40, 20, 10, 5)]
    assert all(a >= c for a, c in zip(edds, edds[1:]))


def test_run_maxima_until():
    r = run([1, 5, 2], None)
    assert run_maxima([r]).tolist() == [5.0]
    assert run_maxima([r], until=1).tolist() == [1.0]
    assert run_maxima([r], until=0).tolist() == [-math.inf]


def exact_factory(name="gaussian_mean", dim=5, **kw):
    pre, post = preset_pair(name, dim=dim, **kw)
    return (lambda seed: ExactCusum(pre, post)), pre, post


def test_runs_are_prefix_stable_and_seeded():
    factory, pre, _ = exact_factory()
    a = pre_change_runs(factory, pre, 200, 3, seed=7)
    b = pre_change_runs(factory, pre, 200, 5, seed=7)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.statistics, y.statistics)
    c = pre_change_runs(factory, pre, 200, 3, seed=8)
    assert not np.array_equal(a[0].statistics, c[0].statistics)


def test_evaluate_gaussian_mean_detects_quickly_with_large_shift():
    factory, pre, post = exact_factory(delta=3.0)
    rep = evaluate(factory, pre, post, 50, 300, threshold=5.0, n_sequences=20, seed=1)
    assert rep.censored_count == 0
    assert 0 < rep.edd < 10


def test_stopping_times_match_full_runs():
    factory, pre, _ = exact_factory(delta=0.5)
    horizon, b = 400, 2.0
    taus = pre_change_stopping_times(factory, pre, b, horizon, 6, seed=3, chunk=37)
    runs = pre_change_runs(factory, pre, horizon, 6, seed=3)
    for tau, r in zip(taus, runs):
        hit = r.first_crossing_after(0, b)
        assert tau == (math.inf if hit is None else hit)


def test_exponential_tail_fit_on_exponential_data():
    rng = np.random.default_rng(4)
    taus = rng.exponential(1000, size=2000)
    horizon = 3000
    taus[taus > horizon] = math.inf
    for method in ("regression", "mle"):
        fit = fit_exponential_tail(taus, horizon, method)
        assert fit.rate == pytest.approx(1e-3, rel=0.1)
        assert fit.ks_distance < 0.05


def test_arl_curve_log_linear_for_exponential_maxima():
    # maxima with an exponential tail give ARL growing like e^b
    rng = np.random.default_rng(5)
    maxima = rng.gumbel(0.0, 1.0, size=20000)
    curve = arl_curve(maxima, np.linspace(2, 6, 6), 1000)
    slope, _, r2 = curve.log_linear_fit()
    assert r2 > 0.99
    assert slope == pytest.approx(1.0, rel=0.1)
