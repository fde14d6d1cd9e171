import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from parkgap.dataio import EventRecord
from parkgap.errors import EstimationError, ParameterError
from parkgap.stochastics import (
    WEEKDAY,
    WEEKEND,
    ContextKey,
    ContextModel,
    ExponentialParams,
    NormalParams,
    VacancyDataset,
    alpha_quantile,
    estimate_context_model,
    inflate_theta,
    inflation_applications,
    inflation_path,
    modified_refill_prob,
    normal_window_prob,
    sample_truncated_normal,
    truncated_normal_mean,
    vacancy_occupation_cdf,
)

MIN = 60.0


def dataset(n=100, mean=10 * MIN):
    return VacancyDataset(np.full(n, mean))


# -- normal window --------------------------------------------------------------


def test_window_full_mass():
    p = NormalParams(60 * MIN, 15 * MIN)
    assert normal_window_prob(p, 60 * MIN, 600 * MIN) == pytest.approx(1.0, abs=1e-12)


def test_window_one_sigma():
    p = NormalParams(60 * MIN, 15 * MIN)
    # oracle: scipy's normal CDF
    expected = stats.norm.cdf(1) - stats.norm.cdf(-1)
    assert normal_window_prob(p, 60 * MIN, 15 * MIN) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.6827, abs=1e-4)


def test_window_far_tail():
    p = NormalParams(60 * MIN, 15 * MIN)
    val = normal_window_prob(p, 0.0, 0.01 * MIN)
    assert val < 1e-4
    ref = stats.norm.cdf(0.01, 60, 15) - stats.norm.cdf(-0.01, 60, 15)
    assert val == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("delta", [0.0, -1.0])
def test_window_rejects_bad_delta(delta):
    with pytest.raises(ParameterError):
        normal_window_prob(NormalParams(1, 1), 0, delta)


@settings(max_examples=300)
@given(
    st.floats(1, 1e4), st.floats(1, 1e4), st.floats(0, 1e4), st.floats(0.01, 1e3), st.floats(0.01, 1e3)
)
def test_window_monotone_and_symmetric(mu, sigma, a, d1, d2):
    p = NormalParams(mu, sigma)
    lo, hi = sorted((d1, d2))
    assert normal_window_prob(p, mu + a, lo) <= normal_window_prob(p, mu + a, hi) + 1e-15
    assert normal_window_prob(p, mu + a, lo) == pytest.approx(normal_window_prob(p, mu - a, lo), abs=1e-12)


@settings(max_examples=300)
@given(st.floats(1, 1e4), st.floats(1, 1e4), st.floats(-1e5, 1e5), st.floats(1e-6, 1e5))
def test_window_in_unit_interval(mu, sigma, center, delta):
    assert 0.0 <= normal_window_prob(NormalParams(mu, sigma), center, delta) <= 1.0


# -- exponential kernel ------------------------------------------------------------


def test_cdf_values():
    p = ExponentialParams(10 * MIN)
    assert vacancy_occupation_cdf(p, 0) == 0
    assert vacancy_occupation_cdf(p, 10 * MIN) == pytest.approx(1 - math.exp(-1), abs=1e-15)
    assert vacancy_occupation_cdf(p, 1000 * MIN) == pytest.approx(1.0)
    assert vacancy_occupation_cdf(p, 10 * MIN) == pytest.approx(stats.expon.cdf(600, scale=600), abs=1e-15)


def test_cdf_rejects_negative():
    with pytest.raises(ParameterError):
        vacancy_occupation_cdf(ExponentialParams(1), -1)


@settings(max_examples=300)
@given(st.floats(0.1, 1e4), st.floats(0.1, 1e4), st.floats(0, 1e5), st.floats(0, 1e5))
def test_cdf_monotone(t1, t2, y1, y2):
    lo_t, hi_t = sorted((t1, t2))
    lo_y, hi_y = sorted((y1, y2))
    assert vacancy_occupation_cdf(ExponentialParams(hi_t), lo_y) <= vacancy_occupation_cdf(ExponentialParams(hi_t), hi_y)
    assert vacancy_occupation_cdf(ExponentialParams(hi_t), lo_y) <= vacancy_occupation_cdf(ExponentialParams(lo_t), lo_y)


def test_alpha_values():
    assert alpha_quantile(ExponentialParams(10 * MIN)) / MIN == pytest.approx(29.9573, abs=1e-3)
    assert alpha_quantile(ExponentialParams(10 * MIN), 1 - math.exp(-1)) == pytest.approx(10 * MIN)
    assert alpha_quantile(ExponentialParams(20 * MIN)) / MIN == pytest.approx(59.915, abs=1e-3)
    # independent solve of 1 - exp(-a/10) = 0.95
    from scipy.optimize import brentq

    root = brentq(lambda a: 1 - math.exp(-a / 10) - 0.95, 1, 100, xtol=1e-12)
    assert alpha_quantile(ExponentialParams(10.0)) == pytest.approx(root, rel=1e-10)


@pytest.mark.parametrize("mass", [0, 1, -0.1, 1.5])
def test_alpha_rejects_mass(mass):
    with pytest.raises(ParameterError):
        alpha_quantile(ExponentialParams(1), mass)


@settings(max_examples=300)
@given(st.floats(0.01, 1e5), st.floats(1e-6, 1 - 1e-6))
def test_alpha_inverts_cdf(theta, mass):
    p = ExponentialParams(theta)
    assert vacancy_occupation_cdf(p, alpha_quantile(p, mass)) == pytest.approx(mass, rel=1e-9)


# -- inflation -------------------------------------------------------------------


def test_inflate_example():
    theta, aug = inflate_theta(dataset(), 60 * MIN, 5)
    assert theta.theta / MIN == pytest.approx(1300 / 105, abs=1e-3)
    assert theta.theta / MIN == pytest.approx(12.381, abs=1e-3)
    assert aug.count == 105
    assert float(np.sum(aug.samples)) / aug.count == pytest.approx(theta.theta, rel=1e-12)


def test_inflate_fixed_point():
    theta, _ = inflate_theta(VacancyDataset(np.array([10.0])), 10.0, 5)
    assert theta.theta == 10.0


def test_inflate_monotone_in_w():
    assert inflate_theta(dataset(), 60 * MIN, 2)[0].theta < inflate_theta(dataset(), 60 * MIN, 10)[0].theta


@pytest.mark.parametrize("w", [1, 0, 2.5])
def test_inflate_rejects_w(w):
    with pytest.raises(ParameterError):
        inflate_theta(dataset(), 60, w)


@settings(max_examples=200)
@given(st.lists(st.floats(0, 1e4), min_size=1, max_size=50), st.floats(1e-3, 1e5), st.integers(2, 20))
def test_inflate_brute_force_mean(samples, obs, w):
    theta, aug = inflate_theta(VacancyDataset(np.array(samples)), obs, w)
    brute = math.fsum(samples + [obs] * w) / (len(samples) + w)
    assert theta.theta == pytest.approx(brute, rel=1e-12, abs=1e-300)
    assert aug.mean() == theta.theta


def test_inflation_path_matches_repeated_inflation():
    d = VacancyDataset(np.array([100.0, 300.0, 900.0]))
    path = inflation_path(d, 2000.0, 4, 3)
    cur = d
    for expected in path:
        th, cur = inflate_theta(cur, 2000.0, 3)
        assert th.theta == pytest.approx(expected, rel=1e-12)


def test_modified_below_alpha_is_plain_cdf():
    base = ExponentialParams(10 * MIN)
    assert modified_refill_prob(dataset(), base, 5 * MIN, 10 * MIN, 5) == pytest.approx(1 - math.exp(-0.5), abs=1e-15)
    assert modified_refill_prob(dataset(), base, 0, 10 * MIN, 5) == 0


def test_modified_past_alpha_below_plain():
    base = ExponentialParams(10 * MIN)
    val = modified_refill_prob(dataset(), base, 35 * MIN, 10 * MIN, 5)
    assert val < 1 - math.exp(-3.5)
    # one round: theta' = (1000 + 5 * 35) / 105 minutes
    assert val == pytest.approx(1 - math.exp(-35 / (1175 / 105)), rel=1e-12)


def test_inflation_rounds():
    base = ExponentialParams(10 * MIN)
    a = alpha_quantile(base)
    assert inflation_applications(base, a, 600) == 0
    assert inflation_applications(base, a + 1, 600) == 1
    assert inflation_applications(base, a + 600, 600) == 2


@settings(max_examples=300)
@given(
    st.floats(1, 1e4), st.integers(1, 200), st.floats(0, 1e6), st.floats(1, 1e4), st.integers(2, 20)
)
def test_modified_in_unit_interval(theta, n, y2, period, w):
    val = modified_refill_prob(VacancyDataset(np.full(n, theta)), ExponentialParams(theta), y2, period, w)
    assert 0.0 <= val <= 1.0


# -- truncated normal -------------------------------------------------------------


def test_truncated_sampling_mean():
    rng = np.random.default_rng(7)
    mu, sigma = 60.0, 15.0
    x = sample_truncated_normal(rng, mu, sigma, 200_000)
    assert x.min() >= 0
    se = x.std() / math.sqrt(x.size)
    assert abs(x.mean() - truncated_normal_mean(mu, sigma)) < 3 * se


def test_truncated_mean_oracle():
    for mu, sigma in [(1.0, 1.0), (0.5, 2.0), (60, 15)]:
        ref = stats.truncnorm.mean(-mu / sigma, np.inf, loc=mu, scale=sigma)
        assert truncated_normal_mean(mu, sigma) == pytest.approx(ref, rel=1e-10)


def test_truncated_sampling_heavy_truncation():
    x = sample_truncated_normal(np.random.default_rng(1), 0.0, 1.0, 100_000)
    assert x.min() >= 0
    assert x.mean() == pytest.approx(truncated_normal_mean(0.0, 1.0), abs=0.01)


# -- context model ------------------------------------------------------------------


def test_context_key_validation():
    with pytest.raises(ParameterError):
        ContextKey(24)
    with pytest.raises(ParameterError):
        ContextKey(3, "holiday")
    with pytest.raises(ParameterError):
        ContextKey(3, WEEKDAY, (("a", "1"), ("a", "2")))
    assert ContextKey(3, WEEKDAY, (("b", "1"), ("a", "2"))).tags == (("a", "2"), ("b", "1"))


def test_context_key_at():
    assert ContextKey.at(0) == ContextKey(0, WEEKDAY)
    assert ContextKey.at(2 * 86400 + 3 * 3600 + 1) == ContextKey(3, WEEKEND)
    assert ContextKey.at(4 * 86400) == ContextKey(0, WEEKDAY)
    assert ContextKey.at(7 * 86400, {"weather": "rain"}) == ContextKey(0, WEEKDAY, (("weather", "rain"),))


def test_context_lookup_fallbacks():
    m = ContextModel.from_params(100, 10, 50)
    special = ContextModel.from_params(200, 20, 70).fallback
    m.entries[ContextKey(8)] = special
    assert m.lookup(ContextKey(8)) is special
    assert m.lookup(ContextKey(8, WEEKDAY, (("weather", "rain"),))) is special
    assert m.lookup(ContextKey(9)) is m.fallback
    assert m.lookup(None) is m.fallback


def _history(parked_min, vacant_min, start=0, spot=0):
    """Alternating records on one spot: occupied runs then vacant runs."""
    recs, t = [], start
    for p, v in zip(parked_min, vacant_min):
        recs.append(EventRecord(spot, t, 0))
        t += int(p * MIN)
        recs.append(EventRecord(spot, t, 1))
        t += int(v * MIN)
    recs.append(EventRecord(spot, t, 0))
    return recs


def test_estimate_global_sample_stats():
    m = estimate_context_model(_history([50, 60, 70], [5, 15, 10]))
    assert m.fallback.normal.mu == pytest.approx(60 * MIN)
    assert m.fallback.normal.sigma == pytest.approx(10 * MIN)
    assert m.fallback.exponential.theta == pytest.approx(10 * MIN)


def test_estimate_two_point_theta():
    m = estimate_context_model(_history([50, 70], [5, 15]))
    assert m.fallback.exponential.theta == pytest.approx(10 * MIN)


def test_estimate_small_bucket_falls_back():
    m = estimate_context_model(_history([50, 60, 70], [5, 15, 10]), min_samples=30)
    assert m.entries == {}
    assert m.lookup(ContextKey(0)) is m.fallback


def test_estimate_populates_large_buckets():
    # 40 short cycles fit inside hour 0 of a weekday; 40 more starting at
    # hour 5 of day 5 land in a weekend bucket
    recs = _history([0.5, 1.5] * 20, [0.5] * 40) + _history([0.5, 1.0] * 20, [0.25] * 40, start=2 * 86400 + 5 * 3600, spot=1)
    m = estimate_context_model(recs, min_samples=30)
    wk = m.entries[ContextKey(0, WEEKDAY)]
    assert wk.normal.mu == pytest.approx(MIN)
    assert wk.exponential.theta == pytest.approx(0.5 * MIN)
    we = m.entries[ContextKey(5, WEEKEND)]
    assert we.normal.mu == pytest.approx(0.75 * MIN)
    assert we.exponential.theta == pytest.approx(0.25 * MIN)


def test_estimate_constant_bucket_falls_back():
    recs = _history([1.0] * 40, [0.5] * 40) + _history([3.0], [2.0], start=86400 + 3 * 3600, spot=1)
    m = estimate_context_model(recs, min_samples=30)
    assert ContextKey(0, WEEKDAY) not in m.entries


def test_estimate_empty_history():
    with pytest.raises(EstimationError):
        estimate_context_model([])
    with pytest.raises(EstimationError):
        estimate_context_model([EventRecord(0, 0, 1)])
