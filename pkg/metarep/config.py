"""Configuration blocks and published model presets for metarep runs."""

import math
import os
from pathlib import Path
from typing import Dict, Literal, Optional, Tuple

from msgspec import Struct, field

from .replication_model import CommonMean, PowerRule
from .selection_model import DEFAULT_CUTOFFS, StepPolicy
from .types import ConfigurationError, DataError, GammaParams, Latent, LatentModel

THREADS_ENV = "METAREP_THREADS"
DEFAULT_SEED = 0
MIN_DRAWS = 10_000


class QuadratureConfig(Struct, frozen=True):
    """Gauss-Legendre settings for the likelihood integrals.

    Attributes:
        theta_nodes: Nodes over the true-effect distribution
        sigma_nodes: Nodes over the standard-error distribution
        tail: Upper truncation mass; domains end at the ``1 - tail`` quantile
    """

    theta_nodes: int = 128
    sigma_nodes: int = 128
    tail: float = 1e-10

    def __post_init__(self) -> None:
        if self.theta_nodes < 2 or self.sigma_nodes < 2:
            raise ConfigurationError("quadrature needs at least 2 nodes per dimension")
        if not (0.0 < self.tail < 1e-3):
            raise ConfigurationError(f"tail mass must lie in (0, 1e-3), got {self.tail}")

    def doubled(self) -> "QuadratureConfig":
        return QuadratureConfig(self.theta_nodes * 2, self.sigma_nodes * 2, self.tail)


class SimulationConfig(Struct, frozen=True):
    """Inputs of one Monte Carlo run of the five-stage model.

    True effects are drawn positive; the sign convention is fixed.

    Attributes:
        latent: Distribution of (|Θ*|, Σ*)
        policy: Joint publication and replication-selection step policy
        power_rule: How replicators set σ_r
        n_draws: Number of latent studies
        seed: Run seed; chunk k draws from stream (seed, k)
        inclusion_threshold: |t| cut of the replication-rate conditioning set
    """

    latent: Latent
    policy: StepPolicy = field(default_factory=StepPolicy)
    power_rule: PowerRule = field(default_factory=CommonMean)
    n_draws: int = 10_000_000
    seed: int = DEFAULT_SEED
    inclusion_threshold: float = 1.96

    def __post_init__(self) -> None:
        if self.n_draws < MIN_DRAWS:
            raise ConfigurationError(f"n_draws must be at least {MIN_DRAWS}, got {self.n_draws}")
        if not (math.isfinite(self.inclusion_threshold) and self.inclusion_threshold > 0):
            raise ConfigurationError("inclusion threshold must be positive")


class ModelSpec(Struct, frozen=True):
    """Structure of the selection model to estimate.

    Attributes:
        cutoffs: |t| band edges; the band above the last cutoff is the reference (weight 1)
        fixed_weights: Band index -> fixed weight; fixed bands are not estimated
        quadrature: Integration settings
        n_starts: Optimizer starts
        seed: Seed for start jitter
        theta_sign: "positive" integrates against Θ = |Θ|, "symmetric" gives Θ a random sign
        max_evals: Objective evaluations allowed per start
    """

    cutoffs: Tuple[float, ...] = DEFAULT_CUTOFFS
    fixed_weights: Dict[int, float] = {}
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    n_starts: int = 8
    seed: int = DEFAULT_SEED
    theta_sign: Literal["positive", "symmetric"] = "positive"
    max_evals: int = 4000

    def __post_init__(self) -> None:
        n_bands = len(self.cutoffs)
        for band, value in self.fixed_weights.items():
            if not 0 <= band < n_bands:
                raise ConfigurationError(
                    f"band {band} cannot be fixed; valid bands are 0..{n_bands - 1}"
                )
            if not (math.isfinite(value) and value >= 0):
                raise ConfigurationError(f"fixed weight for band {band} must be >= 0")
        if self.n_starts < 1:
            raise ConfigurationError("at least one optimizer start is required")

    @property
    def free_bands(self) -> Tuple[int, ...]:
        return tuple(b for b in range(len(self.cutoffs)) if b not in self.fixed_weights)


class VerifyConfig(Struct, frozen=True):
    """Settings of the invariant suite run by ``metarep verify``."""

    n_draws: int = 1_000_000
    seed: int = DEFAULT_SEED
    random_models: int = 10


class Preset(Struct, frozen=True):
    """Published point estimates packaged as a ready-to-simulate model."""

    name: str
    latent: LatentModel
    policy: StepPolicy
    fixed_weights: Dict[int, float] = {}
    intended_power: float = 0.92
    description: str = ""

    @property
    def model_spec(self) -> ModelSpec:
        return ModelSpec(cutoffs=self.policy.cutoffs, fixed_weights=dict(self.fixed_weights))


PRESETS: Dict[str, Preset] = {
    "econ-table1": Preset(
        name="econ-table1",
        latent=LatentModel(GammaParams(1.426, 0.148), GammaParams(2.735, 0.103)),
        policy=StepPolicy(DEFAULT_CUTOFFS, (0.0, 0.038, 1.0)),
        fixed_weights={0: 0.0},
        description="Experimental economics; insignificant band fixed at zero",
    ),
    "psych-table1": Preset(
        name="psych-table1",
        latent=LatentModel(GammaParams(0.906, 0.156), GammaParams(4.762, 0.044)),
        policy=StepPolicy(DEFAULT_CUTOFFS, (0.012, 0.299, 1.0)),
        description="Psychology; selection random with respect to the t-ratio",
    ),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}"
        ) from None


def resolve_threads(explicit: Optional[int] = None) -> int:
    """Worker thread count: explicit value, else ``METAREP_THREADS``, else CPU count.

    Thread count never changes results, only wall time.
    """
    if explicit is not None:
        value: object = explicit
    else:
        raw = os.environ.get(THREADS_ENV)
        if raw is None or raw.strip() == "":
            return os.cpu_count() or 1
        value = raw.strip()
    try:
        threads = int(value)  # type: ignore[arg-type]
    except (TypeError, ValueError):
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {value!r}") from None
    if threads < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be at least 1, got {threads}")
    return threads


class RunConfig(Struct, frozen=True):
    """Parameter block of one CLI invocation.

    Attributes:
        command: Subcommand name
        preset: Preset name supplying latent parameters and policy
        data: Dataset CSV (study_id, x, sigma)
        policy: Step policy overriding the preset's
        power: Power rule specification (``mean:<p>``, ``realized:<path>``, ``original``)
        n_draws: Monte Carlo draws
        seed: Run seed, 0 unless given
        out: Output path, ``None`` for stdout
        format: Report format; each command has its own default
        fix: Band fixes for estimation, ``band=value``
        beta_grid: Grid for the sweeps
        kappa: Upper cutoff of the moderately significant band
        regime: Worked-example regime (1, 2 or 3); all three when omitted
        include_threshold: |t| cut of the replication-rate conditioning set
        beta_p1: Insignificant-band weight used by the tier sweep
    """

    command: str
    preset: Optional[str] = None
    data: Optional[str] = None
    policy: Optional[str] = None
    power: str = "mean:0.92"
    n_draws: Optional[int] = None
    seed: int = DEFAULT_SEED
    out: Optional[str] = None
    format: Optional[Literal["csv", "json"]] = None
    fix: Tuple[str, ...] = ()
    beta_grid: Optional[str] = None
    kappa: float = 3.0
    regime: Optional[int] = None
    include_threshold: float = 1.96
    beta_p1: float = 0.0

    def __post_init__(self) -> None:
        if self.data is not None and not Path(self.data).is_file():
            raise DataError(f"dataset file not found: {self.data}")
        if self.power.startswith("realized:"):
            path = self.power.split(":", 1)[1]
            if not Path(path).is_file():
                raise DataError(f"power ratio file not found: {path}")
        if self.regime is not None and self.regime not in (1, 2, 3):
            raise ConfigurationError(f"regime must be 1, 2 or 3, got {self.regime}")
