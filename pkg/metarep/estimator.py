"""Maximum-likelihood estimation of the latent gamma model and the step publication policy.

Published pairs (x, σ) have density

    f(x, σ) = w(x/σ) · ∫ φ((x - θ)/σ)/σ dG_θ(θ) · g_σ(σ) / D

where D = ∫∫ E[w(X/σ) | θ, σ] dG_θ dG_σ is the publication probability up to the
weight scale. The inner expectation is analytic (``band_probability``), so D is
a 2-D tensor quadrature computed once per parameter vector.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from msgspec import Struct, structs
from scipy import optimize, special

from .config import ModelSpec
from .replication_model import SIGNIFICANCE
from .selection_model import StepPolicy, band_probability, policy_weight
from .stats_core import RandomStream, build_grid, gamma_grid, gamma_logpdf
from .types import (
    DataError,
    DomainError,
    GammaParams,
    LatentModel,
    NumericalError,
)

LGR = logging.getLogger(__name__)

MIN_RECORDS = 10
HESSIAN_STEP = 1e-4
CONVERGENCE_DIAMETER = 1e-6
MIN_ACCEPTANCE = 1e-6
INITIAL_WEIGHT = 0.5
THETA_SCALE_DEFLATION = 0.7
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
KERNEL_WINDOW = 10.0
_GAMMA_NAMES = ("kappa_theta", "lambda_theta", "kappa_sigma", "lambda_sigma")


class StudyEstimate(Struct, frozen=True):
    """One published study in Fisher-z units."""

    study_id: str
    x: float
    sigma: float


class Dataset(Struct, frozen=True):
    """Published (x, σ) pairs with unique ids and positive standard errors."""

    records: Tuple[StudyEstimate, ...] = ()

    def __post_init__(self) -> None:
        seen = set()
        for rec in self.records:
            if not (math.isfinite(rec.sigma) and rec.sigma > 0):
                raise DataError(f"study {rec.study_id!r}: sigma must be positive, got {rec.sigma}")
            if not math.isfinite(rec.x):
                raise DataError(f"study {rec.study_id!r}: x must be finite")
            if rec.study_id in seen:
                raise DataError(f"duplicate study_id {rec.study_id!r}")
            seen.add(rec.study_id)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def x(self) -> np.ndarray:
        return np.array([r.x for r in self.records], dtype=float)

    @property
    def sigma(self) -> np.ndarray:
        return np.array([r.sigma for r in self.records], dtype=float)

    @property
    def ids(self) -> List[str]:
        return [r.study_id for r in self.records]

    @property
    def significant_share(self) -> float:
        if not self.records:
            return float("nan")
        return float(np.mean(np.abs(self.x / self.sigma) >= 1.96))


class ModelParams(Struct, frozen=True):
    """Gamma laws of |Θ| and Σ plus one publication weight per |t| band."""

    theta: GammaParams
    sigma: GammaParams
    weights: Tuple[float, ...]

    def __post_init__(self) -> None:
        if any(not (math.isfinite(w) and w >= 0) for w in self.weights):
            raise DomainError(f"weights must be non-negative and finite, got {self.weights}")
        if not self.weights or self.weights[-1] <= 0:
            raise DomainError("the top band weight must be positive")

    @property
    def latent(self) -> LatentModel:
        return LatentModel(self.theta, self.sigma)

    def policy(self, spec: ModelSpec) -> StepPolicy:
        return StepPolicy(tuple(spec.cutoffs), tuple(self.weights))


class FitDiagnostics(Struct, frozen=True):
    """Optimizer trace of a multi-start fit."""

    best_start: int
    start_logliks: Tuple[Optional[float], ...]
    simplex_diameter: float
    n_records: int
    message: str = ""


class MleResult(Struct, frozen=True):
    """Fitted parameters and their uncertainty.

    Attributes:
        params: Point estimates
        loglik: Maximized log-likelihood
        robust_se: Sandwich standard errors keyed by ``parameter_names``; ``None``
            when the sandwich is not positive-definite
        converged: Best start's final simplex diameter below 1e-6 in log space
        n_evals: Objective evaluations over all starts
        diagnostics: Per-start trace
    """

    params: ModelParams
    loglik: float
    robust_se: Optional[Dict[str, float]] = None
    converged: bool = False
    n_evals: int = 0
    diagnostics: Optional[FitDiagnostics] = None


def parameter_names(spec: ModelSpec) -> List[str]:
    """Names of the estimated parameters; fixed bands and the top band are omitted."""
    return list(_GAMMA_NAMES) + [f"beta_p{band + 1}" for band in spec.free_bands]


def _pack(params: ModelParams, spec: ModelSpec) -> np.ndarray:
    top = params.weights[-1]
    values = [params.theta.shape, params.theta.scale, params.sigma.shape, params.sigma.scale]
    values += [params.weights[band] / top for band in spec.free_bands]
    if any(v <= 0 for v in values):
        raise DomainError("free parameters must be positive to be log-parameterized")
    return np.log(np.asarray(values, dtype=float))


def _unpack(phi: np.ndarray, spec: ModelSpec) -> ModelParams:
    values = np.exp(phi)
    weights = [0.0] * len(spec.cutoffs) + [1.0]
    for band, value in spec.fixed_weights.items():
        weights[band] = float(value)
    for band, value in zip(spec.free_bands, values[4:]):
        weights[band] = float(value)
    return ModelParams(
        theta=GammaParams(float(values[0]), float(values[1])),
        sigma=GammaParams(float(values[2]), float(values[3])),
        weights=tuple(weights),
    )


def _check_spec(params: ModelParams, spec: ModelSpec) -> None:
    if len(params.weights) != len(spec.cutoffs) + 1:
        raise DomainError(
            f"{len(spec.cutoffs)} cutoffs need {len(spec.cutoffs) + 1} weights, "
            f"got {len(params.weights)}"
        )


def publication_mass(params: ModelParams, spec: ModelSpec) -> float:
    """∫∫ band_probability(θ, σ) dG_θ dG_σ on the tensor Gauss-Legendre grid."""
    q = spec.quadrature
    theta_grid = gamma_grid(params.theta, q.theta_nodes, q.tail)
    sigma_grid = gamma_grid(params.sigma, q.sigma_nodes, q.tail)
    bands = band_probability(
        theta_grid.nodes[:, None], sigma_grid.nodes[None, :], params.policy(spec)
    )
    return float(theta_grid.weights @ bands @ sigma_grid.weights)


def _log_window_integral(theta: GammaParams, n: int, x: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """log ∫_0^∞ φ((x - θ)/σ)/σ g(θ) dθ over a ±``KERNEL_WINDOW``·σ window per record.

    Windows touching zero use the same power map as ``gamma_grid`` so the
    density's behaviour at θ = 0 stays integrable by Gauss-Legendre.
    """
    unit = build_grid(n, 0.0, 1.0)
    lo = np.maximum(x - KERNEL_WINDOW * sigma, 0.0)
    hi = np.maximum(x + KERNEL_WINDOW * sigma, KERNEL_WINDOW * sigma)
    power = np.where(lo == 0.0, 2.0 / min(theta.shape, 1.0), 1.0)[:, None]
    span = (hi - lo)[:, None]
    nodes = lo[:, None] + span * unit.nodes[None, :] ** power
    z = (x[:, None] - nodes) / sigma[:, None]
    log_terms = (
        np.log(unit.weights)[None, :]
        + np.log(span * power)
        + (power - 1.0) * np.log(unit.nodes)[None, :]
        + gamma_logpdf(theta, nodes)
        - 0.5 * z * z
        - _LOG_SQRT_2PI
        - np.log(sigma)[:, None]
    )
    return special.logsumexp(log_terms, axis=1)


def _log_convolution(params: ModelParams, spec: ModelSpec, x: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    n = spec.quadrature.theta_nodes
    out = _log_window_integral(params.theta, n, x, sigma)
    if spec.theta_sign == "symmetric":
        out = np.logaddexp(out, _log_window_integral(params.theta, n, -x, sigma)) - math.log(2.0)
    return out


def log_likelihood_terms(params: ModelParams, spec: ModelSpec, data: Dataset) -> np.ndarray:
    """Per-record log f(x_i, σ_i).

    Raises:
        NumericalError: when a record's density underflows or its band weight is zero,
            naming the record
    """
    _check_spec(params, spec)
    if len(data) == 0:
        return np.zeros(0)
    x, sigma = data.x, data.sigma
    weight = np.asarray(policy_weight(params.policy(spec), x / sigma), dtype=float)
    log_conv = _log_convolution(params, spec, x, sigma)
    mass = publication_mass(params, spec)
    if not (mass > 0 and math.isfinite(mass)):
        raise NumericalError(f"publication probability underflowed ({mass})")
    bad = np.flatnonzero(~((weight > 0) & np.isfinite(log_conv)))
    if bad.size:
        record = data.records[int(bad[0])]
        raise NumericalError(
            f"likelihood underflow for study {record.study_id!r} "
            f"(x={record.x:g}, sigma={record.sigma:g})"
        )
    return np.log(weight) + log_conv + gamma_logpdf(params.sigma, sigma) - math.log(mass)


def log_likelihood(params: ModelParams, spec: ModelSpec, data: Dataset) -> float:
    """Sum of ``log_likelihood_terms``; an empty dataset scores 0."""
    return float(np.sum(log_likelihood_terms(params, spec, data)))


def _initial_phi(data: Dataset, spec: ModelSpec) -> np.ndarray:
    abs_x, sigma = np.abs(data.x), data.sigma
    if np.ptp(data.x) == 0.0:
        raise DataError("degenerate data: all effect estimates are identical")
    if np.ptp(abs_x) == 0.0:
        raise DataError("degenerate data: all effect estimates share one magnitude")
    m_x, v_x = float(abs_x.mean()), float(abs_x.var())
    m_s = float(sigma.mean())
    v_s = max(float(sigma.var()), (0.01 * m_s) ** 2)
    v_theta = max(v_x - float(np.mean(sigma**2)), 0.1 * v_x)
    values = [
        m_x * m_x / v_theta,
        THETA_SCALE_DEFLATION * v_theta / m_x,
        m_s * m_s / v_s,
        v_s / m_s,
    ] + [INITIAL_WEIGHT] * len(spec.free_bands)
    return np.log(np.asarray(values, dtype=float))


def _simplex_diameter(simplex: np.ndarray) -> float:
    diffs = simplex[:, None, :] - simplex[None, :, :]
    return float(np.sqrt((diffs**2).sum(axis=-1)).max())


def _check_fixed_bands(data: Dataset, spec: ModelSpec) -> None:
    zero_bands = {band for band, value in spec.fixed_weights.items() if value == 0.0}
    if not zero_bands:
        return
    bands = np.searchsorted(
        np.asarray(spec.cutoffs, dtype=float), np.abs(data.x / data.sigma), side="right"
    )
    for index, band in enumerate(bands):
        if int(band) in zero_bands:
            record = data.records[index]
            raise DataError(
                f"study {record.study_id!r} has |t| in band {int(band)}, which is fixed at zero"
            )


def fit_mle(data: Dataset, spec: ModelSpec) -> MleResult:
    """Maximize the log-likelihood with multi-start Nelder-Mead in log-parameter space.

    Start 0 is the method-of-moments guess; start ``s`` jitters it by up to ±50%
    with ``RandomStream(spec.seed, s)``.

    Raises:
        DataError: fewer than 10 records, identical estimates, or a record in a
            band fixed at zero
    """
    if len(data) < MIN_RECORDS:
        raise DataError(f"need at least {MIN_RECORDS} records, got {len(data)}")
    _check_fixed_bands(data, spec)
    base = _initial_phi(data, spec)
    n = len(data)
    n_evals = 0

    def objective(phi: np.ndarray) -> float:
        try:
            value = -log_likelihood(_unpack(phi, spec), spec, data) / n
        except (NumericalError, DomainError, FloatingPointError):
            return math.inf
        return value if math.isfinite(value) else math.inf

    best: Optional[optimize.OptimizeResult] = None
    best_start = -1
    start_logliks: List[Optional[float]] = []
    for start in range(spec.n_starts):
        x0 = base.copy()
        if start:
            jitter = RandomStream(spec.seed, start).generator().uniform(-0.5, 0.5, base.size)
            x0 = base + np.log1p(jitter)
        with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
            res = optimize.minimize(
                objective,
                x0,
                method="Nelder-Mead",
                options={
                    "maxfev": spec.max_evals,
                    "xatol": 1e-8,
                    "fatol": 1e-12,
                    "adaptive": True,
                },
            )
        n_evals += int(res.nfev)
        finite = math.isfinite(res.fun)
        start_logliks.append(-res.fun * n if finite else None)
        LGR.debug("start %d: loglik %s after %d evaluations", start, start_logliks[-1], res.nfev)
        if finite and (best is None or res.fun < best.fun):
            best, best_start = res, start

    if best is None:
        LGR.warning("every optimizer start diverged")
        return MleResult(
            params=_unpack(base, spec),
            loglik=-math.inf,
            converged=False,
            n_evals=n_evals,
            diagnostics=FitDiagnostics(
                best_start=-1,
                start_logliks=tuple(start_logliks),
                simplex_diameter=math.inf,
                n_records=n,
                message="all starts diverged",
            ),
        )

    diameter = _simplex_diameter(best.final_simplex[0])
    converged = diameter < CONVERGENCE_DIAMETER
    params = _unpack(best.x, spec)
    message = str(best.message)
    if not converged:
        LGR.warning("best start %d did not converge (simplex diameter %.3g)", best_start, diameter)
    result = MleResult(
        params=params,
        loglik=-best.fun * n,
        converged=converged,
        n_evals=n_evals,
        diagnostics=FitDiagnostics(
            best_start=best_start,
            start_logliks=tuple(start_logliks),
            simplex_diameter=diameter,
            n_records=n,
            message=message,
        ),
    )
    try:
        se = robust_se(result, data, spec)
    except NumericalError as exc:
        LGR.warning("robust standard errors unavailable: %s", exc)
        se = None
    LGR.info("fit: loglik %.4f, converged=%s, %d evaluations", result.loglik, converged, n_evals)
    return MleResult(
        params=result.params,
        loglik=result.loglik,
        robust_se=se,
        converged=result.converged,
        n_evals=result.n_evals,
        diagnostics=result.diagnostics,
    )


def _terms_at(phi: np.ndarray, spec: ModelSpec, data: Dataset) -> np.ndarray:
    return log_likelihood_terms(_unpack(phi, spec), spec, data)


def robust_se(result: MleResult, data: Dataset, spec: ModelSpec) -> Optional[Dict[str, float]]:
    """Sandwich standard errors of the estimated parameters on their natural scale.

    Bread is the central-difference Hessian of the log-likelihood in log space
    (step 1e-4); meat is the outer product of per-record central-difference
    scores. Standard errors map back through the delta method, se = exp(φ) se_φ.
    Fixed bands have no entry.

    Returns:
        Mapping from ``parameter_names(spec)`` to standard errors, or ``None``
        when the sandwich is not positive-definite

    Raises:
        NumericalError: when the Hessian is singular; the message names the flat direction
    """
    names = parameter_names(spec)
    phi = _pack(result.params, spec)
    k, h = phi.size, HESSIAN_STEP
    eye = np.eye(k)

    center = float(np.sum(_terms_at(phi, spec, data)))
    plus = [_terms_at(phi + h * eye[i], spec, data) for i in range(k)]
    minus = [_terms_at(phi - h * eye[i], spec, data) for i in range(k)]

    scores = np.column_stack([(plus[i] - minus[i]) / (2.0 * h) for i in range(k)])
    hessian = np.empty((k, k))
    for i in range(k):
        hessian[i, i] = (plus[i].sum() - 2.0 * center + minus[i].sum()) / (h * h)
        for j in range(i + 1, k):
            cross = sum(
                si * sj * float(np.sum(_terms_at(phi + h * (si * eye[i] + sj * eye[j]), spec, data)))
                for si in (1.0, -1.0)
                for sj in (1.0, -1.0)
            )
            hessian[i, j] = hessian[j, i] = cross / (4.0 * h * h)

    bread = -hessian
    eigvals, eigvecs = np.linalg.eigh(bread)
    scale = float(np.abs(eigvals).max())
    if scale == 0.0 or float(np.abs(eigvals).min()) <= 1e-10 * scale:
        flat = int(np.argmin(np.abs(eigvals)))
        direction = names[int(np.argmax(np.abs(eigvecs[:, flat])))]
        raise NumericalError(f"singular Hessian: the likelihood is flat along {direction}")

    inverse = np.linalg.inv(bread)
    covariance = inverse @ (scores.T @ scores) @ inverse
    covariance = 0.5 * (covariance + covariance.T)
    if float(np.linalg.eigvalsh(covariance).min()) <= 0.0:
        LGR.warning("sandwich covariance is not positive-definite")
        return None
    se_phi = np.sqrt(np.diag(covariance))
    return {name: float(v) for name, v in zip(names, np.exp(phi) * se_phi)}


def generate_synthetic_dataset(
    params: ModelParams, policy: StepPolicy, n_published: int, seed: int = 0
) -> Dataset:
    """Rejection-sample latent studies until ``n_published`` pass publication.

    Batch ``k`` draws from ``RandomStream(seed, k)`` in the order θ, σ, noise,
    publication uniform; only (x, σ) are kept.

    Raises:
        DomainError: if ``n_published < 1``
        NumericalError: if the acceptance probability is below 1e-6
    """
    if n_published < 1:
        raise DomainError(f"n_published must be at least 1, got {n_published}")
    spec = ModelSpec(cutoffs=tuple(policy.cutoffs))
    scaled = ModelParams(params.theta, params.sigma, tuple(policy.weights))
    acceptance = publication_mass(scaled, spec) / policy.max_weight
    if acceptance < MIN_ACCEPTANCE:
        raise NumericalError(
            f"publication acceptance probability {acceptance:.3g} is below {MIN_ACCEPTANCE:g}"
        )

    xs: List[np.ndarray] = []
    sigmas: List[np.ndarray] = []
    kept, batch = 0, 0
    while kept < n_published:
        size = int(min(1 << 20, max(1024, math.ceil(1.2 * (n_published - kept) / acceptance))))
        rng = RandomStream(seed, batch).generator()
        theta = rng.gamma(params.theta.shape, params.theta.scale, size)
        sigma = rng.gamma(params.sigma.shape, params.sigma.scale, size)
        x = theta + sigma * rng.standard_normal(size)
        u = rng.random(size)
        accepted = u < policy_weight(policy, x / sigma) / policy.max_weight
        xs.append(x[accepted])
        sigmas.append(sigma[accepted])
        kept += int(accepted.sum())
        batch += 1
    LGR.debug("synthetic dataset: %d batches, acceptance %.4f", batch, acceptance)

    x_all = np.concatenate(xs)[:n_published]
    s_all = np.concatenate(sigmas)[:n_published]
    width = max(6, len(str(n_published)))
    return Dataset(
        records=tuple(
            StudyEstimate(f"syn-{i + 1:0{width}d}", float(x), float(s))
            for i, (x, s) in enumerate(zip(x_all, s_all))
        )
    )


def fitted_significant_share(result: MleResult, spec: ModelSpec) -> float:
    """Model-implied P(|X/Σ| >= 1.96 | published) at the fitted parameters."""
    params = result.params
    fitted = params.policy(spec)
    # split any band straddling 1.96 so the significant part has its own edge
    cutoffs = tuple(sorted(set(spec.cutoffs) | {SIGNIFICANCE}))
    edges = (0.0,) + cutoffs
    weights = tuple(
        float(policy_weight(fitted, edge)) if edge >= SIGNIFICANCE else 0.0 for edge in edges
    )
    split = structs.replace(spec, cutoffs=cutoffs, fixed_weights={})
    total = publication_mass(params, spec)
    return publication_mass(ModelParams(params.theta, params.sigma, weights), split) / total


def dataset_from_arrays(x: Sequence[float], sigma: Sequence[float], prefix: str = "s") -> Dataset:
    return Dataset(
        records=tuple(
            StudyEstimate(f"{prefix}{i + 1}", float(a), float(b)) for i, (a, b) in enumerate(zip(x, sigma))
        )
    )
