"""Step-function publication/replication-selection policies over |t| bands."""

import logging
import math
from typing import Tuple, Union

import msgspec
import numpy as np
from msgspec import Struct
from scipy import special

from .stats_core import ArrayLike, _like
from .types import ConfigurationError, DomainError

LGR = logging.getLogger(__name__)

DEFAULT_CUTOFFS: Tuple[float, ...] = (1.64, 1.96)


class StepPolicy(Struct, frozen=True):
    """Relative probability of being published and chosen for replication.

    Band ``k`` covers ``cutoffs[k-1] <= |t| < cutoffs[k]``; a ratio equal to a
    cutoff belongs to the upper band. Only ratios of weights are identified, and
    canonical policies carry a top-band weight of 1 (see ``normalized``).

    Attributes:
        cutoffs: Strictly ascending positive band edges
        weights: One non-negative weight per band (``len(cutoffs) + 1``)
    """

    cutoffs: Tuple[float, ...] = DEFAULT_CUTOFFS
    weights: Tuple[float, ...] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        if any(not (math.isfinite(c) and c > 0) for c in self.cutoffs):
            raise ConfigurationError(f"cutoffs must be positive, got {self.cutoffs}")
        if any(b <= a for a, b in zip(self.cutoffs, self.cutoffs[1:])):
            raise ConfigurationError(f"cutoffs must be strictly ascending, got {self.cutoffs}")
        if len(self.weights) != len(self.cutoffs) + 1:
            raise ConfigurationError(
                f"{len(self.cutoffs)} cutoffs need {len(self.cutoffs) + 1} weights, "
                f"got {len(self.weights)}"
            )
        if any(not (math.isfinite(w) and w >= 0) for w in self.weights):
            raise ConfigurationError(f"weights must be non-negative, got {self.weights}")
        if self.weights[-1] <= 0:
            raise ConfigurationError("the top band weight must be positive")

    @property
    def max_weight(self) -> float:
        return max(self.weights)

    @property
    def is_normalized(self) -> bool:
        return self.weights[-1] == 1.0

    def normalized(self) -> "StepPolicy":
        top = self.weights[-1]
        return StepPolicy(self.cutoffs, tuple(w / top for w in self.weights))

    def scaled(self, factor: float) -> "StepPolicy":
        if not factor > 0:
            raise DomainError(f"scale factor must be positive, got {factor}")
        return StepPolicy(self.cutoffs, tuple(w * factor for w in self.weights))

    def to_json(self) -> bytes:
        return msgspec.json.encode(self)

    @classmethod
    def from_json(cls, data: Union[str, bytes]) -> "StepPolicy":
        return msgspec.json.decode(data, type=cls)


class NoBias(Struct, frozen=True, tag="no-bias"):
    """Every result is published."""

    pass


class SignificantOnly(Struct, frozen=True, tag="significant-only"):
    """Only results with |t| >= 1.96 are published."""

    pass


class InsignificantFavored(Struct, frozen=True, tag="insignificant-favored"):
    """Insignificant results are ``factor`` times more likely to be published."""

    factor: float = 5.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.factor) and self.factor > 0):
            raise ConfigurationError(f"factor must be positive, got {self.factor}")


class Custom(Struct, frozen=True, tag="custom"):
    policy: StepPolicy


Regime = Union[NoBias, SignificantOnly, InsignificantFavored, Custom]


def policy_weight(policy: StepPolicy, t: ArrayLike) -> ArrayLike:
    """Weight of the band containing |t|.

    Example:
        >>> policy_weight(economics_policy(0.038), 1.80)
        0.038
    """
    abs_t = np.abs(np.asarray(t, dtype=float))
    band = np.searchsorted(np.asarray(policy.cutoffs, dtype=float), abs_t, side="right")
    out = np.asarray(policy.weights, dtype=float)[band]
    return _like(out, out)


def regime_policy(regime: Regime) -> StepPolicy:
    """Step policy of one of the worked-example publication regimes."""
    if isinstance(regime, NoBias):
        return StepPolicy(cutoffs=(), weights=(1.0,))
    if isinstance(regime, SignificantOnly):
        return StepPolicy(DEFAULT_CUTOFFS, (0.0, 0.0, 1.0))
    if isinstance(regime, InsignificantFavored):
        return StepPolicy(DEFAULT_CUTOFFS, (regime.factor, regime.factor, 1.0))
    if isinstance(regime, Custom):
        return regime.policy
    raise ConfigurationError(f"unknown regime {regime!r}")


def band_probability(theta: ArrayLike, sigma: ArrayLike, policy: StepPolicy) -> ArrayLike:
    """E[policy_weight(X/σ)] for X ~ N(θ, σ²), from normal tail probabilities.

    Writing T(c) = P(|X/σ| >= c), the weighted band mass telescopes to
    ``w_0 + sum_k (w_k - w_{k-1}) T(c_k)``.
    """
    sig = np.asarray(sigma, dtype=float)
    if np.any(sig <= 0):
        raise DomainError("sigma must be positive")
    mu = np.asarray(theta, dtype=float) / sig
    weights = policy.weights
    out = np.full(mu.shape, weights[0], dtype=float)
    for k, cutoff in enumerate(policy.cutoffs, start=1):
        step = weights[k] - weights[k - 1]
        if step == 0.0:
            continue
        out = out + step * (special.ndtr(mu - cutoff) + special.ndtr(-cutoff - mu))
    return _like(out, out)


def economics_policy(beta_p2: float) -> StepPolicy:
    """Cutoffs (1.64, 1.96) with the insignificant band fixed at zero."""
    return StepPolicy(DEFAULT_CUTOFFS, (0.0, beta_p2, 1.0))


def psychology_policy(beta_p1: float, beta_p2: float) -> StepPolicy:
    return StepPolicy(DEFAULT_CUTOFFS, (beta_p1, beta_p2, 1.0))
