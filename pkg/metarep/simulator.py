"""Monte Carlo engine for the five-stage selective publication and replication model.

Stages per latent study: draw (Θ*, Σ*), draw X* ~ N(Θ*, Σ*²), publish and select
with probability weight(X*/Σ*) / max weight, set σ_r by the power rule, draw
X_r ~ N(Θ*, σ_r²). Work is split into fixed-size chunks; chunk ``k`` draws from
``RandomStream(seed, k)`` in a fixed order, so metrics do not depend on the
number of worker threads, and two configs that differ only in their policy
share every latent and replication draw.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from msgspec import Struct

from .config import SimulationConfig, resolve_threads
from .replication_model import (
    SIGNIFICANCE,
    CommonMean,
    CommonRealized,
    OriginalPower,
    PowerRule,
    replication_sigmas,
)
from .selection_model import (
    DEFAULT_CUTOFFS,
    Custom,
    InsignificantFavored,
    NoBias,
    Regime,
    SignificantOnly,
    StepPolicy,
    policy_weight,
    regime_policy,
)
from .stats_core import RandomStream
from .types import (
    DomainError,
    EmptyConditioningError,
    FixedLatent,
    Latent,
    LatentModel,
    NumericalError,
)

LGR = logging.getLogger(__name__)

CHUNK_SIZE = 1 << 20
EXAMPLE_THETA = 2.5
EXAMPLE_SIGMA = 1.0
EXAMPLE_POWER = 0.90


class StudyRecord(Struct, frozen=True):
    """One latent study: true effect, standard error, estimate, publication and selection."""

    theta: float
    sigma: float
    x: float
    published: bool
    selected: bool


class ReplicationRecord(Struct, frozen=True):
    """A study together with its replication draw."""

    origin: StudyRecord
    sigma_r: float
    x_r: float


class StudyArrays(Struct):
    """Columnar batch of studies and replications, one entry per latent study."""

    theta: np.ndarray
    sigma: np.ndarray
    x: np.ndarray
    published: np.ndarray
    selected: np.ndarray
    sigma_r: np.ndarray
    x_r: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    def records(self) -> List[ReplicationRecord]:
        return [
            ReplicationRecord(
                origin=StudyRecord(
                    float(t), float(s), float(x), bool(p), bool(r)
                ),
                sigma_r=float(sr),
                x_r=float(xr),
            )
            for t, s, x, p, r, sr, xr in zip(
                self.theta, self.sigma, self.x, self.published,
                self.selected, self.sigma_r, self.x_r,
            )
        ]

    @classmethod
    def from_records(
        cls, records: Sequence[Union[ReplicationRecord, StudyRecord]]
    ) -> "StudyArrays":
        origins = [r.origin if isinstance(r, ReplicationRecord) else r for r in records]
        nan = float("nan")
        return cls(
            theta=np.array([o.theta for o in origins], dtype=float),
            sigma=np.array([o.sigma for o in origins], dtype=float),
            x=np.array([o.x for o in origins], dtype=float),
            published=np.array([o.published for o in origins], dtype=bool),
            selected=np.array([o.selected for o in origins], dtype=bool),
            sigma_r=np.array(
                [r.sigma_r if isinstance(r, ReplicationRecord) else nan for r in records],
                dtype=float,
            ),
            x_r=np.array(
                [r.x_r if isinstance(r, ReplicationRecord) else nan for r in records],
                dtype=float,
            ),
        )


Records = Union[StudyArrays, Sequence[ReplicationRecord], Sequence[StudyRecord]]


class SimulationMetrics(Struct, frozen=True):
    """Aggregate outputs of one simulation (Fisher-z units unless noted).

    Attributes:
        replication_rate: Share of included originals replicated significant with the same sign
        generalized_rr: Share of published originals replicated under the generalized definition
        rmr: Mean tanh(x_r) over mean tanh(x) among included originals (correlation units)
        mean_bias: E[X - Θ | D=1]
        coverage: P(Θ in (X - 1.96Σ, X + 1.96Σ) | D=1)
        share_significant: P(|X/Σ| >= 1.96 | D=1)
        n_included: Size of the replication-rate conditioning set
        mc_se: Binomial standard error of the replication rate
        n_draws: Latent studies drawn
        n_published: Latent studies published
        mean_true_effect: E[Θ | D=1]
        mean_published_effect: E[X | D=1]
        mean_original_significant: E[X | D=1, included]
        mean_replication_significant: E[X_r | D=1, included]
        rr_insignificant: Generalized success share among insignificant originals
    """

    replication_rate: float
    generalized_rr: float
    rmr: float
    mean_bias: float
    coverage: float
    share_significant: float
    n_included: int
    mc_se: float
    n_draws: int
    n_published: int
    mean_true_effect: float
    mean_published_effect: float
    mean_original_significant: float
    mean_replication_significant: float
    rr_insignificant: Optional[float] = None


class GeneralizedBreakdown(Struct, frozen=True):
    """Generalized replication rate and its decomposition by original significance."""

    generalized_rr: float
    rr_significant: Optional[float]
    rr_insignificant: Optional[float]
    share_significant: float
    share_insignificant: float


class ExampleRow(Struct, frozen=True):
    """Statistics of the fixed-effect worked example under one publication regime."""

    regime: str
    expected_x: float
    bias: float
    expected_x_significant: float
    expected_xr_significant: float
    replication_rate: float


class _Totals(Struct):
    n_draws: int = 0
    n_published: int = 0
    n_significant: int = 0
    n_included: int = 0
    n_replicated: int = 0
    n_selected: int = 0
    n_generalized: int = 0
    n_insig_selected: int = 0
    n_insig_generalized: int = 0
    n_covered: int = 0
    sum_bias: float = 0.0
    sum_theta: float = 0.0
    sum_x: float = 0.0
    sum_x_included: float = 0.0
    sum_xr_included: float = 0.0
    sum_tanh_x: float = 0.0
    sum_tanh_xr: float = 0.0


def _sign(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, -1.0)


def _replicated(x: np.ndarray, x_r: np.ndarray, sigma_r: np.ndarray) -> np.ndarray:
    return (np.abs(x_r) >= SIGNIFICANCE * sigma_r) & (_sign(x_r) == _sign(x))


def _generalized_success(arrays: StudyArrays) -> np.ndarray:
    significant = np.abs(arrays.x) >= SIGNIFICANCE * arrays.sigma
    null_kept = np.abs(arrays.x_r) < SIGNIFICANCE * arrays.sigma_r
    return np.where(significant, _replicated(arrays.x, arrays.x_r, arrays.sigma_r), null_kept)


def _as_arrays(records: Records) -> StudyArrays:
    if isinstance(records, StudyArrays):
        return records
    return StudyArrays.from_records(list(records))


def _draw_latent(latent: Latent, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(latent, LatentModel):
        theta = rng.gamma(latent.theta.shape, latent.theta.scale, n)
        sigma = rng.gamma(latent.sigma.shape, latent.sigma.scale, n)
        return theta, sigma
    if isinstance(latent, FixedLatent):
        return np.full(n, latent.theta), np.full(n, latent.sigma)
    raise DomainError(f"unknown latent distribution {latent!r}")


def draw_studies(config: SimulationConfig, n: int, stream: RandomStream) -> StudyArrays:
    """Run the five stages for ``n`` latent studies from one random stream.

    Draw order is fixed (Θ, Σ, X noise, publication uniform, replication noise,
    ratio pick) and independent of the policy and power rule.
    """
    rng = stream.generator()
    theta, sigma = _draw_latent(config.latent, n, rng)
    x = theta + sigma * rng.standard_normal(n)
    publish_u = rng.random(n)
    replication_z = rng.standard_normal(n)
    pick = rng.random(n)

    policy = config.policy
    published = publish_u < policy_weight(policy, x / sigma) / policy.max_weight
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_r = replication_sigmas(config.power_rule, x, sigma, pick)
    x_r = theta + sigma_r * replication_z
    return StudyArrays(
        theta=theta,
        sigma=sigma,
        x=x,
        published=published,
        selected=published.copy(),
        sigma_r=sigma_r,
        x_r=x_r,
    )


def _accumulate(arrays: StudyArrays, threshold: float) -> _Totals:
    pub = arrays.published
    sel = pub & arrays.selected
    abs_t = np.abs(arrays.x / arrays.sigma)
    included = sel & (abs_t >= threshold)
    insignificant = sel & (abs_t < SIGNIFICANCE)
    replicated = _replicated(arrays.x, arrays.x_r, arrays.sigma_r)
    generalized = _generalized_success(arrays)
    error = arrays.x - arrays.theta
    return _Totals(
        n_draws=len(arrays),
        n_published=int(pub.sum()),
        n_significant=int((pub & (abs_t >= SIGNIFICANCE)).sum()),
        n_included=int(included.sum()),
        n_replicated=int((included & replicated).sum()),
        n_selected=int(sel.sum()),
        n_generalized=int((sel & generalized).sum()),
        n_insig_selected=int(insignificant.sum()),
        n_insig_generalized=int((insignificant & generalized).sum()),
        n_covered=int((pub & (np.abs(error) < SIGNIFICANCE * arrays.sigma)).sum()),
        sum_bias=float(error[pub].sum()),
        sum_theta=float(arrays.theta[pub].sum()),
        sum_x=float(arrays.x[pub].sum()),
        sum_x_included=float(arrays.x[included].sum()),
        sum_xr_included=float(arrays.x_r[included].sum()),
        sum_tanh_x=float(np.tanh(arrays.x[included]).sum()),
        sum_tanh_xr=float(np.tanh(arrays.x_r[included]).sum()),
    )


def _merge(parts: Iterable[_Totals]) -> _Totals:
    total = _Totals()
    for part in parts:
        for name in total.__struct_fields__:
            setattr(total, name, getattr(total, name) + getattr(part, name))
    return total


def _finalize(totals: _Totals) -> SimulationMetrics:
    if totals.n_published == 0:
        raise EmptyConditioningError("empty conditioning set: no latent study was published")
    if totals.n_included == 0:
        raise EmptyConditioningError(
            "empty conditioning set: no published study is significant"
        )
    if totals.sum_tanh_x == 0.0:
        raise NumericalError("regression-to-the-mean ratio has a zero denominator")
    rate = totals.n_replicated / totals.n_included
    pub = totals.n_published
    return SimulationMetrics(
        replication_rate=rate,
        generalized_rr=totals.n_generalized / totals.n_selected,
        rmr=totals.sum_tanh_xr / totals.sum_tanh_x,
        mean_bias=totals.sum_bias / pub,
        coverage=totals.n_covered / pub,
        share_significant=totals.n_significant / pub,
        n_included=totals.n_included,
        mc_se=math.sqrt(rate * (1.0 - rate) / totals.n_included),
        n_draws=totals.n_draws,
        n_published=pub,
        mean_true_effect=totals.sum_theta / pub,
        mean_published_effect=totals.sum_x / pub,
        mean_original_significant=totals.sum_x_included / totals.n_included,
        mean_replication_significant=totals.sum_xr_included / totals.n_included,
        rr_insignificant=(
            totals.n_insig_generalized / totals.n_insig_selected
            if totals.n_insig_selected
            else None
        ),
    )


def _chunk_sizes(n_draws: int) -> List[int]:
    full, rest = divmod(n_draws, CHUNK_SIZE)
    return [CHUNK_SIZE] * full + ([rest] if rest else [])


def simulate(config: SimulationConfig, threads: Optional[int] = None) -> SimulationMetrics:
    """Simulate ``config.n_draws`` latent studies and aggregate every metric.

    Args:
        config: Latent model, policy, power rule, draws and seed
        threads: Worker threads; defaults to ``METAREP_THREADS`` or the CPU count

    Returns:
        SimulationMetrics, bitwise identical for any thread count

    Raises:
        EmptyConditioningError: when nothing is published or nothing significant is included
    """
    sizes = _chunk_sizes(config.n_draws)
    workers = min(resolve_threads(threads), len(sizes))

    def run_chunk(index: int) -> _Totals:
        arrays = draw_studies(config, sizes[index], RandomStream(config.seed, index))
        LGR.debug("chunk %d: %d draws", index, sizes[index])
        return _accumulate(arrays, config.inclusion_threshold)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run_chunk, range(len(sizes))))
    metrics = _finalize(_merge(parts))
    LGR.info(
        "simulated %d draws: replication rate %.4f (n=%d)",
        metrics.n_draws, metrics.replication_rate, metrics.n_included,
    )
    return metrics


def _included_mask(arrays: StudyArrays, threshold: float) -> np.ndarray:
    abs_t = np.abs(arrays.x / arrays.sigma)
    return arrays.published & arrays.selected & (abs_t >= threshold)


def simulated_replication_rate(records: Records, threshold: float = SIGNIFICANCE) -> float:
    """Share of published, selected, significant originals replicated with the same sign.

    Insignificant originals are excluded whatever their replication outcome.
    """
    arrays = _as_arrays(records)
    mask = _included_mask(arrays, threshold)
    if not mask.any():
        raise EmptyConditioningError("no published significant study to replicate")
    return float(_replicated(arrays.x, arrays.x_r, arrays.sigma_r)[mask].mean())


def regression_to_mean_ratio(records: Records, threshold: float = SIGNIFICANCE) -> float:
    """Mean tanh(x_r) over mean tanh(x) among the replication-rate conditioning set."""
    arrays = _as_arrays(records)
    mask = _included_mask(arrays, threshold)
    if not mask.any():
        raise EmptyConditioningError("no published significant study to replicate")
    denominator = float(np.tanh(arrays.x[mask]).mean())
    if denominator == 0.0:
        raise NumericalError("regression-to-the-mean ratio has a zero denominator")
    return float(np.tanh(arrays.x_r[mask]).mean()) / denominator


def generalized_breakdown(records: Records) -> GeneralizedBreakdown:
    arrays = _as_arrays(records)
    sel = arrays.published & arrays.selected
    if not sel.any():
        raise EmptyConditioningError("no published study was selected for replication")
    significant = np.abs(arrays.x) >= SIGNIFICANCE * arrays.sigma
    success = _generalized_success(arrays)
    sig, insig = sel & significant, sel & ~significant
    share = float(sig.sum()) / float(sel.sum())
    return GeneralizedBreakdown(
        generalized_rr=float(success[sel].mean()),
        rr_significant=float(success[sig].mean()) if sig.any() else None,
        rr_insignificant=float(success[insig].mean()) if insig.any() else None,
        share_significant=share,
        share_insignificant=1.0 - share,
    )


def generalized_replication_rate(records: Records) -> float:
    """Replication rate counting insignificant originals replicated as insignificant.

    Equals P(S=1) E[success | S=1] + P(S=0) E[success | S=0] over selected studies.
    """
    return generalized_breakdown(records).generalized_rr


def _published(records: Records) -> StudyArrays:
    arrays = _as_arrays(records)
    if not arrays.published.any():
        raise EmptyConditioningError("no published study")
    return arrays


def mean_bias(records: Records) -> float:
    """Sample mean of x - θ over published studies."""
    arrays = _published(records)
    pub = arrays.published
    return float((arrays.x[pub] - arrays.theta[pub]).mean())


def coverage(records: Records) -> float:
    """Share of published studies whose nominal 95% interval covers θ."""
    arrays = _published(records)
    pub = arrays.published
    error = np.abs(arrays.x[pub] - arrays.theta[pub])
    return float((error < SIGNIFICANCE * arrays.sigma[pub]).mean())


def sweep_policy(beta_p: float) -> StepPolicy:
    """Single-cutoff counterfactual: weight ``beta_p`` below 1.96 in both lower bands."""
    return StepPolicy(DEFAULT_CUTOFFS, (beta_p, beta_p, 1.0))


def policy_sweep(
    latent: Latent,
    beta_grid: Sequence[float],
    power_rule: PowerRule,
    n_draws: int = 10_000_000,
    seed: int = 0,
    threads: Optional[int] = None,
) -> pd.DataFrame:
    """Replication rate, mean bias and coverage as insignificant results gain publication.

    Every grid point reuses the same seed, so latent and replication draws are
    shared and only the publication decisions change.
    """
    rows = []
    for beta in beta_grid:
        if not 0.0 <= beta <= 1.0:
            raise DomainError(f"beta_p must lie in [0, 1], got {beta}")
        config = SimulationConfig(
            latent=latent,
            policy=sweep_policy(beta),
            power_rule=power_rule,
            n_draws=n_draws,
            seed=seed,
        )
        metrics = simulate(config, threads)
        rows.append(
            {
                "beta_p": float(beta),
                "replication_rate": metrics.replication_rate,
                "mean_bias": metrics.mean_bias,
                "coverage": metrics.coverage,
                "share_significant": metrics.share_significant,
                "mc_se": metrics.mc_se,
            }
        )
    return pd.DataFrame(rows)


def tier_policy(kappa: float, beta_p2: float, beta_p1: float = 0.0) -> StepPolicy:
    """Insignificant weight ``beta_p1``, moderately significant (1.96 <= |t| < κ) ``beta_p2``."""
    if not kappa > SIGNIFICANCE:
        raise DomainError(f"kappa must exceed 1.96, got {kappa}")
    return StepPolicy((1.64, SIGNIFICANCE, kappa), (beta_p1, beta_p1, beta_p2, 1.0))


def moderate_significance_sweep(
    latent: Latent,
    kappa: float,
    beta_p2_grid: Sequence[float],
    power: float = 0.92,
    beta_p1: float = 0.0,
    n_draws: int = 10_000_000,
    seed: int = 0,
    threads: Optional[int] = None,
) -> pd.DataFrame:
    """Replication rate, mean true effect and bias as moderately significant results gain publication."""
    rule = CommonMean(power)
    rows = []
    for beta in beta_p2_grid:
        if beta < 0:
            raise DomainError(f"beta_p2 must be non-negative, got {beta}")
        config = SimulationConfig(
            latent=latent,
            policy=tier_policy(kappa, beta, beta_p1),
            power_rule=rule,
            n_draws=n_draws,
            seed=seed,
        )
        metrics = simulate(config, threads)
        rows.append(
            {
                "beta_p2": float(beta),
                "replication_rate": metrics.replication_rate,
                "mean_true_effect": metrics.mean_true_effect,
                "mean_bias": metrics.mean_bias,
            }
        )
    return pd.DataFrame(rows)


_REGIME_LABELS = {
    NoBias: "no-bias",
    SignificantOnly: "significant-only",
    InsignificantFavored: "insignificant-favored",
    Custom: "custom",
}


def simple_example(
    regime: Regime,
    n_draws: int = 1_000_000,
    seed: int = 0,
    threads: Optional[int] = None,
) -> ExampleRow:
    """Worked example: θ = 2.5, σ = 1, 90% common power rule."""
    config = SimulationConfig(
        latent=FixedLatent(EXAMPLE_THETA, EXAMPLE_SIGMA),
        policy=regime_policy(regime),
        power_rule=CommonMean(EXAMPLE_POWER),
        n_draws=n_draws,
        seed=seed,
    )
    metrics = simulate(config, threads)
    return ExampleRow(
        regime=_REGIME_LABELS[type(regime)],
        expected_x=metrics.mean_published_effect,
        bias=metrics.mean_bias,
        expected_x_significant=metrics.mean_original_significant,
        expected_xr_significant=metrics.mean_replication_significant,
        replication_rate=metrics.replication_rate,
    )


def describe_rule(rule: PowerRule) -> str:
    if isinstance(rule, CommonMean):
        return f"mean:{rule.intended_power:g}"
    if isinstance(rule, CommonRealized):
        return "realized"
    if isinstance(rule, OriginalPower):
        return "original"
    raise DomainError(f"unknown power rule {rule!r}")


def generalized_table(
    latent: Latent,
    policy: StepPolicy,
    n_draws: int = 10_000_000,
    seed: int = 0,
    intended_power: float = 0.92,
    threads: Optional[int] = None,
) -> pd.DataFrame:
    """Generalized replication rate with and without publication bias, per power rule."""
    regimes = {"publication-bias": policy, "no-publication-bias": regime_policy(NoBias())}
    rules = (CommonMean(intended_power), OriginalPower())
    rows = []
    for label, regime in regimes.items():
        for rule in rules:
            metrics = simulate(
                SimulationConfig(latent, regime, rule, n_draws=n_draws, seed=seed), threads
            )
            rows.append(
                {
                    "regime": label,
                    "power_rule": describe_rule(rule),
                    "generalized_rr": metrics.generalized_rr,
                    "rr_significant": metrics.replication_rate,
                    "rr_insignificant": metrics.rr_insignificant,
                    "share_significant": metrics.share_significant,
                    "share_insignificant": 1.0 - metrics.share_significant,
                }
            )
    return pd.DataFrame(rows)


def power_rule_table(
    latent: Latent,
    policy: StepPolicy,
    rules: Mapping[str, PowerRule],
    n_draws: int = 10_000_000,
    seed: int = 0,
    threads: Optional[int] = None,
) -> pd.DataFrame:
    """Replication rate and regression-to-the-mean ratio under several power rules."""
    rows: List[Dict[str, object]] = []
    for label, rule in rules.items():
        metrics = simulate(
            SimulationConfig(latent, policy, rule, n_draws=n_draws, seed=seed), threads
        )
        rows.append(
            {
                "power_rule": label,
                "replication_rate": metrics.replication_rate,
                "rmr": metrics.rmr,
                "mc_se": metrics.mc_se,
            }
        )
    return pd.DataFrame(rows)
