"""Truncated-normal CDF and mean-inversion tests."""

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import kstest, norm

from svylasso.truncnorm import (
    TailDegenerateError,
    TruncatedNormal,
    cdf,
    invert_mean,
)


def _quad_cdf(x, mu, var, a, b):
    """High-precision quadrature oracle for the truncated CDF."""
    s = np.sqrt(var)
    den, _ = integrate.quad(lambda t: norm.pdf(t, mu, s), a, b, limit=200)
    num, _ = integrate.quad(lambda t: norm.pdf(t, mu, s), a, x, limit=200)
    return num / den


def test_untruncated_cdf_is_gaussian():
    tn = TruncatedNormal(0.5, 2.0, -np.inf, np.inf)
    for x in (-3.0, 0.0, 0.5, 2.5):
        assert cdf(tn, x) == pytest.approx(norm.cdf(x, 0.5, np.sqrt(2.0)), abs=1e-12)


def test_cdf_endpoint_normalization():
    tn = TruncatedNormal(0.0, 1.0, -1.0, 2.0)
    assert cdf(tn, -1.0) == 0.0
    assert cdf(tn, 2.0) == 1.0
    assert cdf(tn, -5.0) == 0.0
    assert cdf(tn, 5.0) == 1.0


def test_cdf_matches_quadrature_oracle():
    tn = TruncatedNormal(0.0, 1.0, -1.0, 2.0)
    expected = (norm.cdf(0.0) - norm.cdf(-1.0)) / (norm.cdf(2.0) - norm.cdf(-1.0))
    assert cdf(tn, 0.0) == pytest.approx(expected, abs=1e-12)
    assert cdf(tn, 0.0) == pytest.approx(_quad_cdf(0.0, 0.0, 1.0, -1.0, 2.0), abs=1e-9)


def test_cdf_deep_tail_truncations_stay_finite():
    # selective CIs routinely evaluate 10-30 sigma into a tail
    tn = TruncatedNormal(0.0, 1.0, 12.0, 14.0)
    v = cdf(tn, 13.0)
    assert 0.0 < v < 1.0
    # deep but representable tail still works thanks to log-space masses
    tn2 = TruncatedNormal(25.0, 1.0, -14.0, -12.0)
    assert 0.0 < cdf(tn2, -13.0) < 1.0
    # so absurdly far that even the log-mass overflows: degenerate
    tn3 = TruncatedNormal(0.0, 1.0, 1e170, 2e170)
    with pytest.raises(TailDegenerateError):
        cdf(tn3, 1.5e170)


def test_invert_mean_untruncated_median():
    mu = invert_mean(1.3, 4.0, -np.inf, np.inf, 0.5)
    assert mu == pytest.approx(1.3, abs=1e-7)


def test_invert_mean_untruncated_quantile_shift():
    z = 1.959964
    mu = invert_mean(0.7, 1.0, -np.inf, np.inf, norm.cdf(-z))
    assert mu == pytest.approx(0.7 + z, abs=1e-6)


def test_invert_mean_truncated_against_quadrature_bisection():
    x_obs, var, a, b, target = 0.5, 1.0, 0.0, 2.0, 0.1
    mu = invert_mean(x_obs, var, a, b, target)
    lo, hi = -20.0, 20.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _quad_cdf(x_obs, mid, var, a, b) > target:
            lo = mid
        else:
            hi = mid
    assert mu == pytest.approx(0.5 * (lo + hi), abs=1e-5)


def test_invert_mean_unbounded_endpoint():
    # truncation far in a tail: the matching mean escapes past the cap
    mu = invert_mean(10.5, 1.0, 10.0, 11.0, 1e-250)
    assert mu == np.inf


def test_cdf_monotone_in_x_and_mean():
    rng = np.random.default_rng(23)
    for _ in range(100):
        mu = rng.uniform(-3, 3)
        var = rng.uniform(0.2, 4.0)
        a = mu + rng.uniform(-4, -1) * np.sqrt(var)
        b = mu + rng.uniform(1, 4) * np.sqrt(var)
        tn = TruncatedNormal(mu, var, a, b)
        xs = np.sort(rng.uniform(a, b, size=4))
        vals = [cdf(tn, x) for x in xs]
        assert np.all(np.diff(vals) >= 0.0)
        x = float(rng.uniform(a, b))
        tn_hi = TruncatedNormal(mu + 0.5, var, a, b)
        assert cdf(tn_hi, x) <= cdf(tn, x) + 1e-12


def test_pivot_uniform_under_conditioning():
    rng = np.random.default_rng(29)
    mu, var, a, b = 0.4, 1.5, -0.5, 2.0
    s = np.sqrt(var)
    draws = []
    while len(draws) < 10_000:
        z = rng.normal(mu, s, size=4000)
        draws.extend(z[(z >= a) & (z <= b)].tolist())
    draws = np.array(draws[:10_000])
    tn = TruncatedNormal(mu, var, a, b)
    u = np.array([cdf(tn, z) for z in draws])
    stat = kstest(u, "uniform").statistic
    assert stat < 1.63 / np.sqrt(u.size)  # 1% critical value


def test_invert_mean_roundtrips_cdf():
    rng = np.random.default_rng(31)
    for _ in range(25):
        mu = rng.uniform(-2, 2)
        var = rng.uniform(0.3, 3.0)
        a = mu - rng.uniform(1, 3) * np.sqrt(var)
        b = mu + rng.uniform(1, 3) * np.sqrt(var)
        x = rng.uniform(a, b)
        target = cdf(TruncatedNormal(mu, var, a, b), x)
        if not 1e-6 < target < 1 - 1e-6:
            continue
        back = invert_mean(x, var, a, b, target)
        assert back == pytest.approx(mu, abs=1e-6 * max(1.0, abs(mu)) + 1e-6)


def test_parameter_validation():
    with pytest.raises(ValueError):
        TruncatedNormal(0.0, 0.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        TruncatedNormal(0.0, 1.0, 1.0, -1.0)
    with pytest.raises(ValueError):
        invert_mean(3.0, 1.0, -1.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        invert_mean(0.0, 1.0, -1.0, 1.0, 1.5)
