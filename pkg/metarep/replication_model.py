"""Replication probability, replication power rules and their analytics.

All effects are in Fisher-z units and the replication test is two-sided at
|t| >= 1.96. Functions accept scalars or numpy arrays and broadcast.
"""

import logging
import math
from typing import Tuple, Union

import numpy as np
from msgspec import Struct
from scipy import special

from .stats_core import ArrayLike, RandomStream, _like, norm_quantile
from .types import ConfigurationError, DomainError

LGR = logging.getLogger(__name__)

SIGNIFICANCE = 1.96

# 1 + 1.96h - h^2 < 0 for h above this root; below it the stated quadratic has no positive root.
_STATED_H_THRESHOLD = (SIGNIFICANCE + math.sqrt(SIGNIFICANCE**2 + 4.0)) / 2.0
_EXACT_ROOT_FACTOR = (-SIGNIFICANCE + math.sqrt(SIGNIFICANCE**2 + 8.0)) / 4.0


class CommonMean(Struct, frozen=True, tag="mean"):
    """Common power rule: detect the original estimate with ``intended_power``."""

    intended_power: float = 0.92

    def __post_init__(self) -> None:
        if not (0.025 < self.intended_power < 1.0):
            raise ConfigurationError(
                f"intended power must lie in (0.025, 1), got {self.intended_power}"
            )


class CommonRealized(Struct, frozen=True, tag="realized"):
    """Common power rule with study-specific power drawn from observed |x|/σ_r ratios."""

    ratio_pool: Tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.ratio_pool:
            raise ConfigurationError("realized power rule needs a non-empty ratio pool")
        if any(not (math.isfinite(r) and r > 0) for r in self.ratio_pool):
            raise ConfigurationError("ratio pool entries must be positive and finite")


class OriginalPower(Struct, frozen=True, tag="original"):
    """Replication repeats the original design: σ_r = σ."""

    pass


PowerRule = Union[CommonMean, CommonRealized, OriginalPower]


class ReplicationDesign(Struct, frozen=True):
    """Replication standard error in Fisher-z units."""

    sigma_r: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sigma_r) and self.sigma_r > 0):
            raise DomainError(f"sigma_r must be positive and finite, got {self.sigma_r}")


def _sign(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, -1.0)


def _positive(name: str, value: ArrayLike) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} must be positive and finite")
    return arr


def _nonzero(name: str, value: ArrayLike) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    if np.any(arr == 0):
        raise DomainError(f"{name} must be non-zero; sign(0) is undefined")
    return arr


def power_gap(intended_power: float) -> float:
    """h = 1.96 - Φ^{-1}(β), with β = 1 - intended power."""
    if not (0.025 < intended_power < 1.0):
        raise DomainError(f"intended power must lie in (0.025, 1), got {intended_power}")
    return SIGNIFICANCE + norm_quantile(intended_power)


def rp(x: ArrayLike, theta: ArrayLike, sigma_r: ArrayLike) -> ArrayLike:
    """Probability that a replication is significant with the sign of ``x``.

    RP = 1 - Φ(1.96 - sign(x) θ / σ_r), with sign(x) = 1 for x > 0 and -1 otherwise.

    Args:
        x: Original estimate (non-zero)
        theta: True effect
        sigma_r: Replication standard error (positive)

    Returns:
        Replication probability in (0, 1)
    """
    xa = _nonzero("x", x)
    sr = _positive("sigma_r", sigma_r)
    th = np.asarray(theta, dtype=float)
    out = special.ndtr(-(SIGNIFICANCE - _sign(xa) * th / sr))
    return _like(out, out)


def common_power_sigma(x: float, intended_power: float) -> ReplicationDesign:
    """σ_r = |x| / (1.96 - Φ^{-1}(β)).

    Raises:
        DomainError: if intended power is at most 0.025 or ``x`` is zero
    """
    if x == 0 or not math.isfinite(x):
        raise DomainError(f"common power rule needs a finite non-zero estimate, got {x}")
    return ReplicationDesign(abs(x) / power_gap(intended_power))


def replication_sigmas(
    rule: PowerRule, x: np.ndarray, sigma: np.ndarray, pick: np.ndarray
) -> np.ndarray:
    """Vectorised power rule; ``pick`` holds uniforms used by the realized rule."""
    if isinstance(rule, CommonMean):
        return np.abs(x) / power_gap(rule.intended_power)
    if isinstance(rule, CommonRealized):
        pool = np.asarray(rule.ratio_pool, dtype=float)
        index = np.minimum((pick * len(pool)).astype(np.int64), len(pool) - 1)
        return np.abs(x) / pool[index]
    if isinstance(rule, OriginalPower):
        return np.broadcast_to(np.asarray(sigma, dtype=float), np.shape(x)).copy()
    raise ConfigurationError(f"unknown power rule {rule!r}")


def replication_sigma(
    rule: PowerRule, x: float, sigma: float, stream: RandomStream
) -> ReplicationDesign:
    """Replication standard error for one study under ``rule``.

    The realized rule draws one ratio uniformly from its pool using ``stream``.
    """
    if isinstance(rule, CommonRealized) and not rule.ratio_pool:
        raise ConfigurationError("realized power rule needs a non-empty ratio pool")
    if isinstance(rule, CommonMean):
        return common_power_sigma(x, rule.intended_power)
    pick = np.array([stream.generator().random()])
    value = replication_sigmas(rule, np.array([x], dtype=float), np.array([sigma]), pick)
    return ReplicationDesign(float(value[0]))


def rp_first_deriv(x: ArrayLike, theta: ArrayLike, intended_power: float) -> ArrayLike:
    """d RP / dx under the common power rule; strictly negative on each half-line."""
    xa = _nonzero("x", x)
    h = power_gap(intended_power)
    th = np.asarray(theta, dtype=float)
    u = h * th / xa
    out = -(h * th / xa**2) * np.exp(-0.5 * (SIGNIFICANCE - u) ** 2) / math.sqrt(2 * math.pi)
    return _like(out, out)


def rp_second_deriv(x: ArrayLike, theta: ArrayLike, intended_power: float) -> ArrayLike:
    """d² RP / dx² under the common power rule, for x > 0.

    With u = hθ/x the derivative is (hθ/x³) φ(1.96 - u) [2 + u (1.96 - u)].
    """
    xa = _positive("x", x)
    h = power_gap(intended_power)
    th = np.asarray(theta, dtype=float)
    u = h * th / xa
    density = np.exp(-0.5 * (SIGNIFICANCE - u) ** 2) / math.sqrt(2 * math.pi)
    out = (h * th / xa**3) * density * (2.0 + u * (SIGNIFICANCE - u))
    return _like(out, out)


def concavity_radius(intended_power: float) -> float:
    """Positive root r* of r² + (2 + 1.96h) r + (1 + 1.96h - h²) = 0.

    Raw root, not clipped at 1; see ``concavity_interval`` for the clamped interval.

    Raises:
        DomainError: when intended power is at most 0.6628 (no positive root)
    """
    h = power_gap(intended_power)
    c = 1.0 + SIGNIFICANCE * h - h * h
    if c >= 0.0:
        raise DomainError(
            f"no positive concavity radius for intended power {intended_power} "
            f"(needs h > {_STATED_H_THRESHOLD:.5f}, got {h:.5f})"
        )
    b = 2.0 + SIGNIFICANCE * h
    return (-b + math.sqrt(b * b - 4.0 * c)) / 2.0


def strict_concavity_radius(intended_power: float) -> float:
    """Radius r with rp_second_deriv < 0 on (0, (1 + r)θ): root of 2(1+r)² + 1.96h(1+r) - h²."""
    h = power_gap(intended_power)
    radius = _EXACT_ROOT_FACTOR * h - 1.0
    if radius <= 0.0:
        raise DomainError(
            f"no positive strict concavity radius for intended power {intended_power}"
        )
    return radius


def concavity_interval(
    theta: float, intended_power: float, strict: bool = True
) -> Tuple[float, float]:
    """Open interval (max(0, (1 - r)θ), (1 + r)θ) around θ."""
    radius = strict_concavity_radius(intended_power) if strict else concavity_radius(intended_power)
    return max(0.0, (1.0 - radius) * theta), (1.0 + radius) * theta


def generalized_rp(
    x: ArrayLike, sigma: ArrayLike, theta: ArrayLike, sigma_r: ArrayLike
) -> ArrayLike:
    """Replication probability that also credits insignificant-insignificant pairs.

    Significant originals (|x| >= 1.96σ) use ``rp``; insignificant ones succeed
    when the replication is insignificant: Φ(1.96 - θ/σ_r) - Φ(-1.96 - θ/σ_r).
    """
    xa = np.asarray(x, dtype=float)
    sg = _positive("sigma", sigma)
    sr = _positive("sigma_r", sigma_r)
    th = np.asarray(theta, dtype=float)
    shift = th / sr
    significant = np.abs(xa) >= SIGNIFICANCE * sg
    replicated = special.ndtr(-(SIGNIFICANCE - _sign(xa) * shift))
    null_kept = special.ndtr(SIGNIFICANCE - shift) - special.ndtr(-SIGNIFICANCE - shift)
    out = np.where(significant, replicated, null_kept)
    return _like(out, out)


def realized_power(x: ArrayLike, sigma_r: ArrayLike) -> ArrayLike:
    """Realized intended power 1 - Φ(1.96 - |x|/σ_r) of an observed replication."""
    sr = _positive("sigma_r", sigma_r)
    xa = np.asarray(x, dtype=float)
    out = special.ndtr(np.abs(xa) / sr - SIGNIFICANCE)
    return _like(out, out)


def ratio_pool_from_replications(x: ArrayLike, sigma_r: ArrayLike) -> Tuple[float, ...]:
    """|x|/σ_r ratios feeding the realized power rule; zero estimates are dropped."""
    sr = _positive("sigma_r", sigma_r)
    ratios = np.abs(np.atleast_1d(np.asarray(x, dtype=float))) / np.atleast_1d(sr)
    kept = ratios[ratios > 0]
    if kept.size < ratios.size:
        LGR.warning("dropped %d zero estimates from the ratio pool", ratios.size - kept.size)
    return tuple(float(r) for r in kept)
