import math

import numpy as np
import pytest
from metarep.stats_core import (
    GammaParams,
    RandomStream,
    build_grid,
    gamma_cdf,
    gamma_grid,
    gamma_pdf,
    gamma_quantile,
    gamma_sample,
    norm_cdf,
    norm_pdf,
    norm_quantile,
)
from metarep.types import DomainError


def test_norm_cdf_values():
    assert norm_cdf(0.0) == 0.5
    assert norm_cdf(1.96) == pytest.approx(0.9750021, abs=1e-7)
    assert norm_cdf(-1.96) == pytest.approx(0.0249979, abs=1e-7)
    assert isinstance(norm_cdf(0.3), float)


def test_norm_cdf_broadcasts():
    out = norm_cdf(np.array([-1.0, 0.0, 1.0]))
    assert out.shape == (3,)
    assert out[0] + out[2] == pytest.approx(1.0)


def test_norm_pdf_peak():
    assert norm_pdf(0.0) == pytest.approx(1 / math.sqrt(2 * math.pi))


def test_norm_quantile_inverts_cdf():
    for p in (0.025, 0.5, 0.92, 0.999):
        assert norm_cdf(norm_quantile(p)) == pytest.approx(p, abs=1e-12)
    assert norm_quantile(0.92) == pytest.approx(1.405072, abs=1e-6)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, float("nan")])
def test_norm_quantile_domain(p):
    with pytest.raises(DomainError):
        norm_quantile(p)


def test_norm_cdf_rejects_nan():
    with pytest.raises(DomainError, match="finite"):
        norm_cdf(float("nan"))


def test_gamma_quantile_round_trips_through_cdf():
    params = GammaParams(1.426, 0.148)
    for p in (0.01, 0.5, 0.99):
        assert gamma_cdf(params, gamma_quantile(params, p)) == pytest.approx(p, abs=1e-10)


def test_gamma_quantile_is_scale_parameterized():
    # the exponential law is Gamma(1, scale)
    assert gamma_quantile(GammaParams(1.0, 2.0), 0.5) == pytest.approx(2.0 * math.log(2.0))


def test_gamma_pdf_integrates_to_one():
    params = GammaParams(2.735, 0.103)
    grid = build_grid(256, 0.0, gamma_quantile(params, 1 - 1e-12))
    assert grid.integrate(lambda x: gamma_pdf(params, x)) == pytest.approx(1.0, abs=1e-8)


def test_gamma_sample_moments():
    params = GammaParams(1.426, 0.148)
    draws = gamma_sample(params, RandomStream(7, 0), size=1_000_000)
    assert draws.mean() == pytest.approx(0.211, abs=0.002)
    assert draws.var() == pytest.approx(params.variance, rel=0.03)
    assert isinstance(gamma_sample(params, RandomStream(7, 0)), float)


def test_random_stream_is_reproducible():
    a = RandomStream(42, 3).generator().random(5)
    b = RandomStream(42, 3).generator().random(5)
    c = RandomStream(42, 4).generator().random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_random_stream_child_offsets_stream_id():
    stream = RandomStream(1, 10)
    assert stream.child(5) == RandomStream(1, 15)


def test_random_stream_accepts_negative_seed():
    draws = RandomStream(-1, 0).generator().random(3)
    assert draws.shape == (3,)


def test_build_grid_exact_for_polynomials():
    grid = build_grid(4, -1.0, 3.0)
    # exact up to degree 7
    assert grid.integrate(lambda x: x**7) == pytest.approx((3.0**8 - 1.0) / 8)
    assert len(grid) == 4
    assert grid.domain == (-1.0, 3.0)


def test_build_grid_rejects_bad_arguments():
    with pytest.raises(DomainError, match="at least 2"):
        build_grid(1, 0.0, 1.0)
    with pytest.raises(DomainError, match="a < b"):
        build_grid(8, 1.0, 1.0)


@pytest.mark.parametrize("params", [GammaParams(1.426, 0.148), GammaParams(0.906, 0.156), GammaParams(4.762, 0.044)])
def test_gamma_grid_reproduces_moments(params):
    grid = gamma_grid(params)
    assert grid.weights.sum() == pytest.approx(1.0)
    assert grid.integrate(lambda x: x) == pytest.approx(params.mean, rel=1e-5)
    assert grid.integrate(lambda x: x * x) == pytest.approx(params.variance + params.mean**2, rel=1e-4)
    assert np.all(grid.nodes > 0)


def test_distinct_streams_are_uncorrelated():
    a = RandomStream(5, 0).generator().standard_normal(100_000)
    b = RandomStream(5, 1).generator().standard_normal(100_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.01


def test_build_grid_exponential():
    assert build_grid(64, 0.0, 1.0).integrate(np.exp) == pytest.approx(math.e - 1.0, abs=1e-12)


def test_gamma_quantile_far_tail_is_finite():
    params = GammaParams(1.426, 0.148)
    upper = gamma_quantile(params, 1 - 1e-10)
    assert math.isfinite(upper)
    assert upper > gamma_quantile(params, 0.999)
