import numpy as np
import pytest
from metarep.selection_model import (
    Custom,
    InsignificantFavored,
    NoBias,
    SignificantOnly,
    StepPolicy,
    band_probability,
    economics_policy,
    policy_weight,
    psychology_policy,
    regime_policy,
)
from metarep.stats_core import RandomStream, norm_cdf
from metarep.types import ConfigurationError, DomainError


def test_step_policy_default():
    policy = StepPolicy()
    assert policy.cutoffs == (1.64, 1.96)
    assert policy.weights == (1.0, 1.0, 1.0)
    assert policy.is_normalized


@pytest.mark.parametrize(
    "cutoffs, weights, message",
    [
        ((1.96, 1.64), (0.0, 0.0, 1.0), "ascending"),
        ((1.64, 1.96), (0.0, 1.0), "need 3 weights"),
        ((1.64, 1.96), (-0.1, 0.0, 1.0), "non-negative"),
        ((1.64, 1.96), (1.0, 1.0, 0.0), "top band"),
        ((0.0, 1.96), (1.0, 1.0, 1.0), "positive"),
    ],
)
def test_step_policy_validation(cutoffs, weights, message):
    with pytest.raises(ConfigurationError, match=message):
        StepPolicy(cutoffs, weights)


def test_policy_weight_examples():
    policy = economics_policy(0.038)
    assert policy_weight(policy, 1.80) == 0.038
    assert policy_weight(policy, -2.5) == 1.0
    assert policy_weight(policy, 0.3) == 0.0


def test_cutoff_belongs_to_upper_band():
    policy = psychology_policy(0.012, 0.299)
    assert policy_weight(policy, 1.96) == 1.0
    assert policy_weight(policy, 1.64) == 0.299
    np.testing.assert_array_equal(
        policy_weight(policy, np.array([0.0, 1.7, -1.96])), [0.012, 0.299, 1.0]
    )


def test_normalized_and_scaled():
    policy = StepPolicy((1.64, 1.96), (1.0, 2.0, 4.0))
    assert not policy.is_normalized
    assert policy.max_weight == 4.0
    assert policy.normalized().weights == (0.25, 0.5, 1.0)
    assert policy.scaled(2.0).weights == (2.0, 4.0, 8.0)
    with pytest.raises(DomainError):
        policy.scaled(0.0)


def test_policy_json_round_trip():
    policy = psychology_policy(0.012, 0.299)
    assert StepPolicy.from_json(policy.to_json()) == policy
    decoded = StepPolicy.from_json('{"cutoffs": [1.96], "weights": [0.5, 1.0]}')
    assert decoded.weights == (0.5, 1.0)


def test_regime_policies():
    assert regime_policy(NoBias()).weights == (1.0,)
    assert regime_policy(SignificantOnly()).weights == (0.0, 0.0, 1.0)
    assert regime_policy(InsignificantFavored()).weights == (5.0, 5.0, 1.0)
    custom = economics_policy(0.1)
    assert regime_policy(Custom(custom)) is custom
    with pytest.raises(ConfigurationError, match="factor"):
        InsignificantFavored(0.0)


def test_band_probability_no_bias_is_one():
    out = band_probability(np.array([0.0, 0.5, 3.0]), 1.0, StepPolicy())
    np.testing.assert_allclose(out, 1.0)


def test_band_probability_significant_only_is_two_sided_power():
    theta, sigma = 0.5, 0.2
    mu = theta / sigma
    expected = norm_cdf(mu - 1.96) + norm_cdf(-1.96 - mu)
    assert band_probability(theta, sigma, regime_policy(SignificantOnly())) == pytest.approx(expected)


def test_band_probability_matches_monte_carlo():
    policy = psychology_policy(0.012, 0.299)
    rng = np.random.default_rng(11)
    theta, sigma = 0.3, 0.15
    x = theta + sigma * rng.standard_normal(400_000)
    simulated = policy_weight(policy, x / sigma).mean()
    assert band_probability(theta, sigma, policy) == pytest.approx(simulated, abs=3e-3)


def test_band_probability_symmetric_in_theta():
    policy = economics_policy(0.038)
    assert band_probability(0.4, 0.2, policy) == pytest.approx(band_probability(-0.4, 0.2, policy))


def test_band_probability_rejects_non_positive_sigma():
    with pytest.raises(DomainError, match="sigma"):
        band_probability(1.0, 0.0, StepPolicy())


def test_band_probability_significant_only_worked_example():
    assert band_probability(2.5, 1.0, regime_policy(SignificantOnly())) == pytest.approx(0.7055, abs=1e-3)
    assert band_probability(0.0, 1.0, regime_policy(SignificantOnly())) == pytest.approx(0.05, abs=1e-4)


def test_band_probability_matches_monte_carlo_on_random_policies():
    rng = RandomStream(23, 0).generator()
    for _ in range(20):
        theta, sigma = rng.uniform(0.0, 1.0), rng.uniform(0.05, 0.5)
        policy = StepPolicy((1.64, 1.96), (rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), 1.0))
        x = theta + sigma * rng.standard_normal(200_000)
        simulated = policy_weight(policy, x / sigma).mean()
        assert band_probability(theta, sigma, policy) == pytest.approx(simulated, abs=5e-3), (theta, sigma, policy)
