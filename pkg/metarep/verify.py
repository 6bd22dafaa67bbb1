"""Numerical checks of the model's analytic results, run by ``metarep verify``.

Each check is a function decorated with ``@invariant``. ``InvariantSuite``
discovers the decorated functions of this module, runs them in registration
order and turns ``InvariantViolation`` (or any other metarep error) into a
failed ``CheckOutcome``.
"""

import logging
import math
import sys
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np

from .config import PRESETS, ModelSpec, SimulationConfig, VerifyConfig
from .decorators import get_invariant_metadata, invariant, is_invariant
from .estimator import ModelParams, generate_synthetic_dataset, log_likelihood, publication_mass
from .replication_model import (
    CommonMean,
    common_power_sigma,
    concavity_interval,
    rp,
    rp_first_deriv,
    power_gap,
    rp_second_deriv,
)
from .selection_model import (
    DEFAULT_CUTOFFS,
    InsignificantFavored,
    NoBias,
    SignificantOnly,
    StepPolicy,
)
from .simulator import draw_studies, simple_example, simulate
from .stats_core import RandomStream, norm_cdf, norm_quantile
from .types import (
    CheckOutcome,
    ConfigurationError,
    FixedLatent,
    GammaParams,
    InvariantMetadata,
    InvariantViolation,
    LatentModel,
    MetarepError,
)

LGR = logging.getLogger(__name__)

POWERS = (0.80, 0.85, 0.90, 0.92, 0.95)
CONCAVITY_POWERS = (0.85, 0.90, 0.92, 0.95)
POWER_GAP_POWERS = (0.8314, 0.85, 0.90, 0.92, 0.95)
# Two-sided false-alarm rate shared by all points of a multi-point Monte Carlo check.
FAMILY_ALPHA = 0.002
# Models stream from this offset so they never share a stream with simulation chunks.
_MODEL_STREAM = 1 << 32

Check = Callable[[VerifyConfig], str]


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise InvariantViolation(message)


def comparison_margin(n_comparisons: int, alpha: float = FAMILY_ALPHA) -> float:
    """Bonferroni z-margin so that ``n_comparisons`` two-sided tests share ``alpha``."""
    if n_comparisons < 1:
        raise ConfigurationError(f"need at least one comparison, got {n_comparisons}")
    return float(norm_quantile(1.0 - alpha / (2.0 * n_comparisons)))


def random_latent_models(count: int, seed: int) -> List[LatentModel]:
    """Latent gamma models with parameters spread around the two presets."""
    rng = RandomStream(seed, _MODEL_STREAM).generator()
    models = []
    for _ in range(count):
        models.append(
            LatentModel(
                theta=GammaParams(rng.uniform(0.6, 3.0), rng.uniform(0.05, 0.5)),
                sigma=GammaParams(rng.uniform(1.5, 6.0), rng.uniform(0.03, 0.15)),
            )
        )
    return models


def _latent_pool(config: VerifyConfig) -> List[LatentModel]:
    return [p.latent for p in PRESETS.values()] + random_latent_models(
        config.random_models, config.seed
    )


@invariant(
    "rp_identity",
    reference="replication probability at x = θ",
    description="rp(θ, θ, common_power_sigma(θ, p)) equals the intended power",
)
def check_rp_identity(config: VerifyConfig) -> str:
    worst = 0.0
    for theta in np.linspace(0.1, 5.0, 10):
        for power in POWERS:
            sigma_r = common_power_sigma(float(theta), power).sigma_r
            worst = max(worst, abs(rp(float(theta), float(theta), sigma_r) - power))
    _require(worst < 1e-10, f"max deviation {worst:.3g}")
    return f"max deviation {worst:.3g} over 50 points"


def _rp_curve(x: np.ndarray, theta: float, power: float) -> np.ndarray:
    sigma_r = np.abs(x) / power_gap(power)
    return np.asarray(rp(x, theta, sigma_r))


@invariant(
    "derivative_agreement",
    reference="closed-form derivatives of the replication probability",
    description="first and second derivatives match central differences",
)
def check_derivative_agreement(config: VerifyConfig) -> str:
    worst = 0.0
    theta = 1.0
    for power in CONCAVITY_POWERS:
        for x in np.linspace(0.6, 4.0, 25):
            h = 1e-4 * x
            points = np.array([x - h, x, x + h])
            f = _rp_curve(points, theta, power)
            first = (f[2] - f[0]) / (2 * h)
            second = (f[2] - 2 * f[1] + f[0]) / (h * h)
            exact_first = rp_first_deriv(float(x), theta, power)
            exact_second = rp_second_deriv(float(x), theta, power)
            worst = max(worst, abs(first - exact_first) / abs(exact_first))
            if abs(exact_second) > 1e-3:
                worst = max(worst, abs(second - exact_second) / abs(exact_second))
    _require(worst < 1e-4, f"max relative error {worst:.3g}")
    return f"max relative error {worst:.3g}"


@invariant(
    "rp_monotonicity",
    reference="replication probability decreasing in x",
    description="rp under the common rule strictly decreases on each half-line",
)
def check_rp_monotonicity(config: VerifyConfig) -> str:
    for power in POWERS:
        for theta in (0.2, 1.0, 3.0):
            # Below |x| = θ/2 the probability saturates at 0 or 1 in double precision.
            positive = np.linspace(0.5 * theta, 10.0 * theta, 400)
            for grid in (positive, -positive[::-1]):
                values = _rp_curve(grid, theta, power)
                _require(
                    bool(np.all(np.diff(values) < 0)),
                    f"rp not decreasing at power {power}, theta {theta}",
                )
                _require(
                    bool(np.all(np.asarray(rp_first_deriv(grid, theta, power)) < 0)),
                    f"non-negative derivative at power {power}, theta {theta}",
                )
    return "strictly decreasing on both half-lines"


@invariant(
    "rp_concavity",
    reference="concavity around the true effect",
    description="second derivative negative inside the strict concavity interval",
)
def check_rp_concavity(config: VerifyConfig) -> str:
    for power in CONCAVITY_POWERS:
        for theta in (0.5, 1.0, 2.5):
            low, high = concavity_interval(theta, power, strict=True)
            interior = np.linspace(low, high, 102)[1:-1]
            interior = interior[interior > 0]
            values = np.asarray(rp_second_deriv(interior, theta, power))
            _require(
                bool(np.all(values < 0)),
                f"second derivative non-negative inside ({low:.4f}, {high:.4f}) at power {power}",
            )
    return "concave at 100 interior points per power"


@invariant(
    "rp_limits",
    reference="limits of the replication probability",
    description="0.025 as |x| grows, 1 and 0 as x approaches 0 from above and below",
)
def check_rp_limits(config: VerifyConfig) -> str:
    theta = 1.0
    for power in POWERS:
        big, tiny = 1e8, 1e-8
        limits = {
            "x -> +inf": (_rp_curve(np.array([big]), theta, power)[0], 0.025),
            "x -> -inf": (_rp_curve(np.array([-big]), theta, power)[0], 0.025),
            "x -> 0+": (_rp_curve(np.array([tiny]), theta, power)[0], 1.0),
            "x -> 0-": (_rp_curve(np.array([-tiny]), theta, power)[0], 0.0),
        }
        for label, (value, target) in limits.items():
            expected = norm_cdf(-1.96) if target == 0.025 else target
            _require(
                abs(value - expected) < 1e-6,
                f"{label} at power {power}: {value:.8f} (expected {expected})",
            )
    return "all four limits within 1e-6"


@invariant(
    "wrong_sign_bound",
    reference="wrong-sign originals",
    description="rp < 0.025 whenever x < 0 < θ",
)
def check_wrong_sign_bound(config: VerifyConfig) -> str:
    rng = RandomStream(config.seed, _MODEL_STREAM + 1).generator()
    x = -rng.uniform(0.01, 5.0, 1000)
    theta = rng.uniform(0.01, 5.0, 1000)
    sigma_r = rng.uniform(0.01, 2.0, 1000)
    values = np.asarray(rp(x, theta, sigma_r))
    _require(bool(np.all(values < 0.025)), f"max {values.max():.5f}")
    return f"max {values.max():.5f} over 1000 draws"


@invariant(
    "insignificant_weight_invariance",
    reference="replication rate ignores insignificant publication",
    description="replication rate identical across insignificant-band weights",
    slow=True,
)
def check_insignificant_weight_invariance(config: VerifyConfig) -> str:
    worst = 0.0
    for latent in random_latent_models(config.random_models, config.seed):
        rates, ses = [], []
        for beta in (0.0, 0.2, 1.0, 5.0):
            metrics = simulate(
                SimulationConfig(
                    latent=latent,
                    policy=StepPolicy(DEFAULT_CUTOFFS, (beta, beta, 1.0)),
                    power_rule=CommonMean(0.92),
                    n_draws=config.n_draws,
                    seed=config.seed,
                )
            )
            rates.append(metrics.replication_rate)
            ses.append(metrics.mc_se)
        spread = max(rates) - min(rates)
        tolerance = max(0.005, 4.0 * max(ses))
        _require(spread < tolerance, f"spread {spread:.4f} exceeds {tolerance:.4f}")
        worst = max(worst, spread)
    return f"max spread {worst:.4f}"


@invariant(
    "regression_to_mean",
    reference="regression to the mean of significant originals",
    description="significant originals overstate θ and replications are unbiased",
    slow=True,
)
def check_regression_to_mean(config: VerifyConfig) -> str:
    grid = [(theta, sigma) for theta in (0.1, 0.3, 1.0) for sigma in (0.1, 0.3)]
    margin = comparison_margin(len(grid))
    worst = 0.0
    for index, (theta, sigma) in enumerate(grid):
        cfg = SimulationConfig(
            latent=FixedLatent(theta, sigma),
            policy=StepPolicy(),
            power_rule=CommonMean(0.92),
            n_draws=config.n_draws,
            seed=config.seed,
        )
        arrays = draw_studies(cfg, min(config.n_draws, 1 << 20), RandomStream(config.seed, index))
        significant = np.abs(arrays.x) >= 1.96 * arrays.sigma
        x_r = arrays.x_r[significant]
        mean_x = float(arrays.x[significant].mean())
        mean_xr = float(x_r.mean())
        se_xr = float(x_r.std(ddof=1) / math.sqrt(x_r.size))
        z = abs(mean_xr - theta) / se_xr
        worst = max(worst, z)
        _require(mean_x > theta, f"E[X | sig] = {mean_x:.4f} <= θ = {theta}")
        _require(
            z <= margin,
            f"E[X_r | sig] = {mean_xr:.4f} differs from θ = {theta} by {z:.2f} SE (margin {margin:.2f})",
        )
    return f"{len(grid)} (θ, σ) points, max |z| {worst:.2f} of {margin:.2f}"


@invariant(
    "power_gap_bound",
    reference="replication rate below intended power",
    description="replication rate < intended power for intended power >= 0.8314",
    slow=True,
)
def check_power_gap_bound(config: VerifyConfig) -> str:
    worst = -1.0
    for latent in _latent_pool(config):
        for power in POWER_GAP_POWERS:
            metrics = simulate(
                SimulationConfig(
                    latent=latent,
                    policy=StepPolicy(),
                    power_rule=CommonMean(power),
                    n_draws=config.n_draws,
                    seed=config.seed,
                )
            )
            gap = metrics.replication_rate - 3.0 * metrics.mc_se - power
            _require(gap < 0, f"replication rate {metrics.replication_rate:.4f} >= {power}")
            worst = max(worst, gap)
    return f"largest rate - 3 SE - power: {worst:.4f}"


@invariant(
    "quadrature_vs_monte_carlo",
    reference="publication probability by quadrature",
    description="analytic publication mass agrees with the simulated publication share",
    slow=True,
)
def check_quadrature_vs_monte_carlo(config: VerifyConfig) -> str:
    worst = 0.0
    for preset in PRESETS.values():
        policy = preset.policy
        spec = ModelSpec(cutoffs=policy.cutoffs)
        params = ModelParams(preset.latent.theta, preset.latent.sigma, policy.weights)
        expected = publication_mass(params, spec) / policy.max_weight
        metrics = simulate(
            SimulationConfig(latent=preset.latent, policy=policy, n_draws=config.n_draws, seed=config.seed)
        )
        observed = metrics.n_published / metrics.n_draws
        se = math.sqrt(expected * (1 - expected) / metrics.n_draws)
        _require(
            abs(observed - expected) < 4 * se + 1e-4,
            f"{preset.name}: quadrature {expected:.5f} vs simulated {observed:.5f}",
        )
        worst = max(worst, abs(observed - expected))
    return f"max absolute gap {worst:.2e}"


@invariant(
    "likelihood_weight_scale",
    reference="likelihood invariance to the weight scale",
    description="scaling all publication weights leaves the log-likelihood unchanged",
)
def check_likelihood_weight_scale(config: VerifyConfig) -> str:
    preset = PRESETS["psych-table1"]
    params = ModelParams(preset.latent.theta, preset.latent.sigma, preset.policy.weights)
    spec = preset.model_spec
    data = generate_synthetic_dataset(params, preset.policy, 200, config.seed)
    base = log_likelihood(params, spec, data)
    worst = 0.0
    for factor in (0.1, 3.0, 40.0):
        scaled = ModelParams(
            params.theta, params.sigma, tuple(w * factor for w in params.weights)
        )
        worst = max(worst, abs(log_likelihood(scaled, spec, data) - base))
    _require(worst < 1e-10 * max(1.0, abs(base)), f"log-likelihood moved by {worst:.3g}")
    return f"max change {worst:.3g}"


_EXAMPLE_TARGETS = {
    "no-bias": (2.50, 0.00),
    "significant-only": (2.99, 0.49),
    "insignificant-favored": (1.87, -0.63),
}


@invariant(
    "worked_example",
    reference="θ = 2.5, σ = 1 worked example",
    description="three publication regimes reproduce the tabulated statistics",
    slow=True,
)
def check_worked_example(config: VerifyConfig) -> str:
    for regime in (NoBias(), SignificantOnly(), InsignificantFavored()):
        row = simple_example(regime, n_draws=config.n_draws, seed=config.seed)
        expected_x, bias = _EXAMPLE_TARGETS[row.regime]
        observed = {
            "E(X)": (row.expected_x, expected_x),
            "bias": (row.bias, bias),
            "E(X|sig)": (row.expected_x_significant, 2.99),
            "E(X_r|sig)": (row.expected_xr_significant, 2.50),
            "replication rate": (row.replication_rate, 0.77),
        }
        for label, (value, target) in observed.items():
            _require(
                abs(value - target) <= 0.01,
                f"{row.regime}: {label} = {value:.4f}, expected {target:.2f}",
            )
    return "three regimes within 0.01"


class InvariantSuite:
    """Registry of invariant checks discovered from decorated functions."""

    def __init__(self, config: Optional[VerifyConfig] = None, checks: Optional[Iterable[Check]] = None):
        self.config = config or VerifyConfig()
        self._checks: Dict[str, Check] = {}
        self._metadata: Dict[str, InvariantMetadata] = {}
        for func in checks if checks is not None else self._discover():
            self.register(func)

    @staticmethod
    def _discover() -> List[Check]:
        module = sys.modules[__name__]
        return [obj for obj in vars(module).values() if callable(obj) and is_invariant(obj)]

    def register(self, func: Check) -> None:
        meta = get_invariant_metadata(func)
        if meta is None:
            raise ConfigurationError(f"{func.__name__} is not decorated with @invariant")
        if meta.name in self._checks:
            raise ConfigurationError(f"duplicate invariant name {meta.name!r}")
        self._checks[meta.name] = func
        self._metadata[meta.name] = meta

    @property
    def names(self) -> List[str]:
        return list(self._checks)

    def metadata(self, name: str) -> InvariantMetadata:
        return self._metadata[name]

    def run(self, names: Optional[Iterable[str]] = None, include_slow: bool = True) -> List[CheckOutcome]:
        """Run the selected checks in registration order.

        Raises:
            ConfigurationError: for an unknown check name
        """
        selected = list(self._checks) if names is None else list(names)
        unknown = [n for n in selected if n not in self._checks]
        if unknown:
            raise ConfigurationError(f"unknown invariant(s): {', '.join(unknown)}")
        outcomes = []
        for name in selected:
            meta = self._metadata[name]
            if meta.slow and not include_slow:
                continue
            try:
                detail = self._checks[name](self.config)
                passed = True
            except InvariantViolation as exc:
                detail, passed = str(exc), False
            except MetarepError as exc:
                detail, passed = f"{type(exc).__name__}: {exc}", False
            LGR.info("%s: %s (%s)", name, "pass" if passed else "FAIL", detail)
            outcomes.append(CheckOutcome(name, meta.reference, passed, detail))
        return outcomes
