"""Shared value types and the metarep error hierarchy."""

import math
from typing import Optional, Union

from msgspec import Struct


class MetarepError(Exception):
    """Base exception for metarep errors."""
    pass


class DomainError(MetarepError, ValueError):
    """Raised when an argument lies outside a function's domain."""
    pass


class ConfigurationError(MetarepError):
    """Raised when a policy, power rule or run setting is invalid."""
    pass


class DataError(MetarepError):
    """Raised when input data cannot be parsed or violates its invariants."""
    pass


class EmptyConditioningError(MetarepError):
    """Raised when a metric is asked for over an empty conditioning set."""
    pass


class NumericalError(MetarepError):
    """Raised on quadrature underflow, singular curvature or infeasible sampling."""
    pass


class ConvergenceError(MetarepError):
    """Raised when a maximum likelihood fit did not converge."""
    pass


class InvariantViolation(MetarepError):
    """Raised when a theoretical invariant fails to hold numerically."""
    pass


class GammaParams(Struct, frozen=True):
    """Gamma distribution with shape ``kappa`` and SCALE ``lam`` (mean = shape * scale).

    Attributes:
        shape: Shape parameter, strictly positive
        scale: Scale parameter, strictly positive
    """

    shape: float
    scale: float

    def __post_init__(self) -> None:
        for name in ("shape", "scale"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"gamma {name} must be positive and finite, got {value}")

    @property
    def mean(self) -> float:
        return self.shape * self.scale

    @property
    def variance(self) -> float:
        return self.shape * self.scale**2


class LatentModel(Struct, frozen=True, tag="gamma"):
    """Latent study distribution: independent gamma laws for |Θ*| and Σ*.

    Attributes:
        theta: Distribution of the absolute true effect (Fisher-z units)
        sigma: Distribution of the standard error (Fisher-z units)
    """

    theta: GammaParams
    sigma: GammaParams


class FixedLatent(Struct, frozen=True, tag="fixed"):
    """Degenerate latent distribution with a single true effect and standard error."""

    theta: float
    sigma: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.theta) and self.theta > 0):
            raise DomainError(f"fixed theta must be positive, got {self.theta}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise DomainError(f"fixed sigma must be positive, got {self.sigma}")


Latent = Union[LatentModel, FixedLatent]


class InvariantMetadata(Struct):
    """Metadata attached to a registered invariant check."""

    name: str
    reference: str
    description: Optional[str] = None
    slow: bool = False


class CheckOutcome(Struct, frozen=True):
    """Result of one invariant check."""

    name: str
    reference: str
    passed: bool
    detail: str = ""
