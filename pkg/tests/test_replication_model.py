import logging

import numpy as np
import pytest
from metarep.replication_model import (
    CommonMean,
    CommonRealized,
    OriginalPower,
    ReplicationDesign,
    common_power_sigma,
    concavity_interval,
    concavity_radius,
    generalized_rp,
    power_gap,
    ratio_pool_from_replications,
    realized_power,
    replication_sigma,
    replication_sigmas,
    rp,
    rp_first_deriv,
    rp_second_deriv,
    strict_concavity_radius,
)
from metarep.stats_core import RandomStream, build_grid, norm_cdf, norm_pdf
from metarep.types import ConfigurationError, DomainError


def common_rp(x, theta, power):
    return rp(x, theta, np.abs(x) / power_gap(power))


@pytest.mark.parametrize("theta", np.linspace(0.1, 5.0, 10))
@pytest.mark.parametrize("power", [0.80, 0.85, 0.90, 0.92, 0.95])
def test_rp_equals_power_when_estimate_is_truth(theta, power):
    sigma_r = common_power_sigma(theta, power).sigma_r
    assert abs(rp(theta, theta, sigma_r) - power) < 1e-10


def test_rp_formula():
    assert rp(1.0, 0.0, 1.0) == pytest.approx(norm_cdf(-1.96))
    assert rp(-1.0, 0.5, 0.25) == pytest.approx(norm_cdf(-1.96 - 2.0))
    out = rp(np.array([1.0, -1.0]), 1.0, 0.5)
    assert out.shape == (2,)


def test_rp_domain_errors():
    with pytest.raises(DomainError, match="sign"):
        rp(0.0, 1.0, 1.0)
    with pytest.raises(DomainError, match="sigma_r"):
        rp(1.0, 1.0, 0.0)


def test_power_gap():
    assert power_gap(0.92) == pytest.approx(3.365072, abs=1e-6)
    with pytest.raises(DomainError):
        power_gap(0.02)


def test_common_power_sigma():
    design = common_power_sigma(-0.5, 0.92)
    assert isinstance(design, ReplicationDesign)
    assert design.sigma_r == pytest.approx(0.5 / 3.365072, rel=1e-6)
    with pytest.raises(DomainError):
        common_power_sigma(0.0, 0.92)


def test_power_rule_validation():
    with pytest.raises(ConfigurationError, match="intended power"):
        CommonMean(0.02)
    with pytest.raises(ConfigurationError, match="non-empty"):
        CommonRealized(())
    with pytest.raises(ConfigurationError, match="positive"):
        CommonRealized((1.0, -2.0))


def test_replication_sigmas_per_rule():
    x = np.array([1.0, -2.0])
    sigma = np.array([0.3, 0.4])
    pick = np.array([0.0, 0.99])
    np.testing.assert_allclose(
        replication_sigmas(CommonMean(0.92), x, sigma, pick), np.abs(x) / power_gap(0.92)
    )
    np.testing.assert_allclose(
        replication_sigmas(CommonRealized((1.0, 4.0)), x, sigma, pick), [1.0, 0.5]
    )
    np.testing.assert_allclose(replication_sigmas(OriginalPower(), x, sigma, pick), sigma)


def test_replication_sigma_scalar():
    stream = RandomStream(0, 0)
    assert replication_sigma(OriginalPower(), 1.0, 0.3, stream).sigma_r == 0.3
    realized = replication_sigma(CommonRealized((2.0,)), -1.0, 0.3, stream)
    assert realized.sigma_r == pytest.approx(0.5)


@pytest.mark.parametrize("power", [0.85, 0.90, 0.92, 0.95])
def test_derivatives_match_central_differences(power):
    theta = 1.0
    for x in (0.6, 1.0, 1.7, 3.0):
        h = 1e-4 * x
        f_minus, f_mid, f_plus = (common_rp(v, theta, power) for v in (x - h, x, x + h))
        assert rp_first_deriv(x, theta, power) == pytest.approx((f_plus - f_minus) / (2 * h), rel=1e-4)
        exact = rp_second_deriv(x, theta, power)
        assert exact == pytest.approx((f_plus - 2 * f_mid + f_minus) / h**2, rel=1e-4)


def test_first_derivative_negative_on_both_half_lines():
    grid = np.linspace(0.5, 10.0, 50)
    assert np.all(rp_first_deriv(grid, 1.0, 0.92) < 0)
    assert np.all(rp_first_deriv(-grid, 1.0, 0.92) < 0)


def test_concavity_radius_of_stated_quadratic():
    assert concavity_radius(0.90) == pytest.approx(0.3619, abs=1e-3)
    assert concavity_radius(0.92) == pytest.approx(0.4138, abs=1e-3)
    with pytest.raises(DomainError, match="no positive concavity radius"):
        concavity_radius(0.60)


def test_strict_concavity_radius():
    assert strict_concavity_radius(0.92) == pytest.approx(0.2461, abs=1e-3)
    assert strict_concavity_radius(0.90) < concavity_radius(0.90)
    with pytest.raises(DomainError):
        strict_concavity_radius(0.75)


@pytest.mark.parametrize("power", [0.85, 0.90, 0.92, 0.95])
def test_second_derivative_negative_inside_strict_interval(power):
    theta = 1.3
    low, high = concavity_interval(theta, power)
    interior = np.linspace(low, high, 102)[1:-1]
    assert np.all(rp_second_deriv(interior, theta, power) < 0)
    # convex far beyond the true effect
    assert rp_second_deriv(10 * theta, theta, power) > 0


def test_concavity_interval_stated_radius():
    low, high = concavity_interval(2.5, 0.92, strict=False)
    r = concavity_radius(0.92)
    assert (low, high) == pytest.approx(((1 - r) * 2.5, (1 + r) * 2.5))


def test_limits():
    for power in (0.80, 0.92):
        assert common_rp(1e8, 1.0, power) == pytest.approx(norm_cdf(-1.96), abs=1e-6)
        assert common_rp(-1e8, 1.0, power) == pytest.approx(norm_cdf(-1.96), abs=1e-6)
        assert common_rp(1e-8, 1.0, power) == pytest.approx(1.0, abs=1e-6)
        assert common_rp(-1e-8, 1.0, power) == pytest.approx(0.0, abs=1e-6)


def test_wrong_sign_bound():
    rng = np.random.default_rng(3)
    x = -rng.uniform(0.01, 5.0, 500)
    theta = rng.uniform(0.01, 5.0, 500)
    assert np.all(rp(x, theta, rng.uniform(0.01, 2.0, 500)) < 0.025)


def test_generalized_rp_branches():
    # significant original falls back to rp
    assert generalized_rp(2.5, 1.0, 1.0, 0.5) == pytest.approx(rp(2.5, 1.0, 0.5))
    # insignificant original succeeds when the replication is insignificant too
    expected = norm_cdf(1.96 - 2.0) - norm_cdf(-1.96 - 2.0)
    assert generalized_rp(1.0, 1.0, 1.0, 0.5) == pytest.approx(expected)


def test_realized_power():
    assert realized_power(power_gap(0.92), 1.0) == pytest.approx(0.92)
    assert realized_power(-power_gap(0.92), 1.0) == pytest.approx(0.92)


def test_ratio_pool_drops_zero_estimates(caplog):
    with caplog.at_level(logging.WARNING, logger="metarep.replication_model"):
        pool = ratio_pool_from_replications(np.array([0.0, 1.0, -2.0]), np.array([1.0, 0.5, 1.0]))
    assert pool == (2.0, 2.0)
    assert "dropped 1 zero" in caplog.text


def test_wrong_sign_probability_far_below_bound():
    assert rp(-2.5, 2.5, 0.7712) == pytest.approx(1.0e-7, rel=0.05)


def test_generalized_rp_for_null_effects():
    # an insignificant original of a null effect replicates as insignificant 95% of the time
    assert generalized_rp(1.0, 1.0, 0.0, 0.5) == pytest.approx(0.95, abs=1e-4)

    # averaged over X ~ N(0, 1) without selection: 0.95 * 0.95 + 0.05 * 0.025
    total = 0.0
    for a, b in ((-10.0, -1.96), (-1.96, 1.96), (1.96, 10.0)):
        grid = build_grid(64, a, b)
        total += grid.integrate(lambda x: generalized_rp(x, 1.0, 0.0, 0.5) * norm_pdf(x))
    assert total == pytest.approx(0.90375, abs=1e-4)
