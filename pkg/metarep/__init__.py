"""
Selective publication and replication rates.

metarep simulates how results-dependent publication shapes the replication rate
of published studies, estimates the publication policy and the latent effect
distribution from published (estimate, standard error) pairs, and checks the
model's analytic results numerically.

All effect sizes are in Fisher-z units.
"""

from .config import PRESETS, ModelSpec, QuadratureConfig, SimulationConfig, get_preset
from .decorators import get_invariant_metadata, invariant
from .estimator import Dataset, MleResult, ModelParams, fit_mle, generate_synthetic_dataset, log_likelihood
from .replication_model import CommonMean, CommonRealized, OriginalPower, rp
from .selection_model import StepPolicy, band_probability, policy_weight
from .simulator import SimulationMetrics, simulate
from .types import FixedLatent, GammaParams, LatentModel, MetarepError
from .verify import InvariantSuite

__all__ = [
    "PRESETS",
    "CommonMean",
    "CommonRealized",
    "Dataset",
    "FixedLatent",
    "GammaParams",
    "InvariantSuite",
    "LatentModel",
    "MetarepError",
    "MleResult",
    "ModelParams",
    "ModelSpec",
    "OriginalPower",
    "QuadratureConfig",
    "SimulationConfig",
    "SimulationMetrics",
    "StepPolicy",
    "band_probability",
    "fit_mle",
    "generate_synthetic_dataset",
    "get_invariant_metadata",
    "get_preset",
    "invariant",
    "log_likelihood",
    "policy_weight",
    "rp",
    "simulate",
]
