"""Special functions, gamma sampling, Gauss-Legendre quadrature and keyed random streams.

Everything here is pure: a ``RandomStream`` is a value, and the generator it
hands out is rebuilt from ``(seed, stream_id)`` on every call, so the same
pair always yields the same draws on every platform and thread.
"""

import functools
import logging
import math
from typing import Callable, Optional, Tuple, Union

import numpy as np
from msgspec import Struct
from scipy import special, stats

from .types import DomainError, FixedLatent, GammaParams, Latent, LatentModel

LGR = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

_UINT64_MASK = (1 << 64) - 1

__all__ = [
    "ArrayLike",
    "FixedLatent",
    "GammaParams",
    "Latent",
    "LatentModel",
    "QuadratureGrid",
    "RandomStream",
    "build_grid",
    "gamma_cdf",
    "gamma_grid",
    "gamma_logpdf",
    "gamma_pdf",
    "gamma_quantile",
    "gamma_sample",
    "norm_cdf",
    "norm_pdf",
    "norm_quantile",
]


def _like(template: ArrayLike, values: np.ndarray) -> ArrayLike:
    """Return a float for scalar input, the array otherwise."""
    if np.ndim(template) == 0:
        return float(values)
    return values


def _finite(name: str, value: ArrayLike) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def _probability(name: str, p: ArrayLike) -> np.ndarray:
    arr = _finite(name, p)
    if np.any((arr <= 0.0) | (arr >= 1.0)):
        raise DomainError(f"{name} must lie strictly inside (0, 1)")
    return arr


class RandomStream(Struct, frozen=True):
    """Address of a reproducible random sequence.

    The generator is numpy's counter-based Philox keyed by ``(seed, stream_id)``.
    Distinct stream ids give independent sequences, so chunk ``k`` of a
    simulation draws from ``RandomStream(seed, k)`` regardless of which worker
    thread runs it.

    Attributes:
        seed: 64-bit run seed
        stream_id: 64-bit stream index
    """

    seed: int = 0
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array(
            [self.seed & _UINT64_MASK, self.stream_id & _UINT64_MASK], dtype=np.uint64
        )
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, offset: int) -> "RandomStream":
        return RandomStream(self.seed, (self.stream_id + offset) & _UINT64_MASK)


class QuadratureGrid(Struct, frozen=True):
    """Fixed nodes and weights; ``integrate`` evaluates ``sum(w * f(nodes))``."""

    nodes: np.ndarray
    weights: np.ndarray
    domain: Tuple[float, float]

    def integrate(self, func: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.weights, func(self.nodes)))

    def __len__(self) -> int:
        return len(self.nodes)


def norm_cdf(z: ArrayLike) -> ArrayLike:
    """Standard normal distribution function Φ.

    Args:
        z: Finite abscissa (scalar or array)

    Returns:
        Φ(z), float for scalar input
    """
    return _like(z, special.ndtr(_finite("z", z)))


def norm_pdf(z: ArrayLike) -> ArrayLike:
    arr = _finite("z", z)
    return _like(z, np.exp(-0.5 * arr * arr) / math.sqrt(2.0 * math.pi))


def norm_quantile(p: ArrayLike) -> ArrayLike:
    """Inverse of ``norm_cdf`` on the open unit interval."""
    return _like(p, special.ndtri(_probability("p", p)))


def gamma_sample(
    params: GammaParams, stream: RandomStream, size: Optional[int] = None
) -> ArrayLike:
    """Draw from Gamma(shape, scale) using the stream's own generator.

    Args:
        params: Shape and scale
        stream: Address of the random sequence
        size: Number of draws; ``None`` returns a single float

    Returns:
        Positive draw(s)
    """
    draws = stream.generator().gamma(params.shape, params.scale, size)
    return float(draws) if size is None else draws


def gamma_cdf(params: GammaParams, x: ArrayLike) -> ArrayLike:
    arr = np.asarray(x, dtype=float)
    return _like(x, special.gammainc(params.shape, np.maximum(arr, 0.0) / params.scale))


def gamma_quantile(params: GammaParams, p: ArrayLike) -> ArrayLike:
    """Quantile of Gamma(shape, scale) via the inverse regularized incomplete gamma."""
    arr = _probability("p", p)
    return _like(p, special.gammaincinv(params.shape, arr) * params.scale)


def gamma_logpdf(params: GammaParams, x: ArrayLike) -> ArrayLike:
    arr = np.asarray(x, dtype=float)
    return _like(x, stats.gamma.logpdf(arr, a=params.shape, scale=params.scale))


def gamma_pdf(params: GammaParams, x: ArrayLike) -> ArrayLike:
    arr = np.asarray(x, dtype=float)
    return _like(x, stats.gamma.pdf(arr, a=params.shape, scale=params.scale))


@functools.lru_cache(maxsize=32)
def _legendre(n: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(n)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def build_grid(n: int, a: float, b: float) -> QuadratureGrid:
    """Gauss-Legendre rule with ``n`` nodes on ``[a, b]``.

    Exact for polynomials of degree ``2n - 1``.

    Raises:
        DomainError: if ``n < 2`` or ``a >= b``
    """
    if n < 2:
        raise DomainError(f"quadrature needs at least 2 nodes, got {n}")
    if not (math.isfinite(a) and math.isfinite(b)) or a >= b:
        raise DomainError(f"quadrature domain must satisfy a < b, got [{a}, {b}]")
    x, w = _legendre(int(n))
    half = 0.5 * (b - a)
    return QuadratureGrid(nodes=half * x + 0.5 * (a + b), weights=half * w, domain=(a, b))


def gamma_grid(params: GammaParams, n: int = 128, tail: float = 1e-10) -> QuadratureGrid:
    """Quadrature rule against the gamma law: ``sum(w * f(nodes)) ≈ E[f(X)]``.

    The domain is ``[0, gamma_quantile(params, 1 - tail)]``. Abscissae are
    mapped as ``θ = θ_max * v**q`` with ``q = 2 / min(shape, 1)``, which turns the
    ``θ**(shape - 1)`` behaviour at zero into a smooth integrand in ``v``.
    Weights are renormalised to sum to one.
    """
    upper = gamma_quantile(params, 1.0 - tail)
    unit = build_grid(n, 0.0, 1.0)
    power = 2.0 / min(params.shape, 1.0)
    nodes = upper * unit.nodes**power
    log_w = (
        np.log(unit.weights)
        + math.log(upper * power)
        + (power - 1.0) * np.log(unit.nodes)
        + gamma_logpdf(params, nodes)
    )
    weights = np.exp(log_w - log_w.max())
    weights /= weights.sum()
    return QuadratureGrid(nodes=nodes, weights=weights, domain=(0.0, float(upper)))
