"""Command-line interface: ``metarep <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical, convergence or empty-conditioning error, 4 failed invariant.
"""

import argparse
import logging
import re
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from .config import (
    THREADS_ENV,
    ModelSpec,
    RunConfig,
    SimulationConfig,
    VerifyConfig,
    get_preset,
)
from .estimator import MleResult, fit_mle
from .io import load_dataset, load_policy, parse_power_rule, write_report
from .replication_model import CommonMean
from .selection_model import InsignificantFavored, NoBias, SignificantOnly, StepPolicy
from .simulator import (
    generalized_table,
    moderate_significance_sweep,
    policy_sweep,
    simple_example,
    simulate,
)
from .types import (
    ConfigurationError,
    ConvergenceError,
    DataError,
    DomainError,
    EmptyConditioningError,
    InvariantViolation,
    Latent,
    NumericalError,
)
from .verify import InvariantSuite

LGR = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3
EXIT_INVARIANT = 4

DEFAULT_BETA_GRID = "0,0.25,0.5,0.75,1"
EXAMPLE_DRAWS = 1_000_000
_REGIMES = {1: NoBias(), 2: SignificantOnly(), 3: InsignificantFavored()}
_BAND_ALIASES = {"insig": 0}

Handler = Callable[[RunConfig], Tuple[Any, str]]


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise ConfigurationError(f"{self.prog}: {message}")


def _common_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--preset", help="econ-table1 or psych-table1")
    parent.add_argument("--data", help="dataset CSV with columns study_id,x,sigma (Fisher-z)")
    parent.add_argument("--policy", help="step policy as inline JSON or a JSON file")
    parent.add_argument(
        "--power", default="mean:0.92", help="mean:<p> | realized:<path> | original"
    )
    parent.add_argument("--n", dest="n_draws", type=int, help="Monte Carlo draws")
    parent.add_argument("--seed", type=int, default=0)
    parent.add_argument("--out", help="output path; stdout when omitted")
    parent.add_argument("--format", choices=("csv", "json"))
    parent.add_argument(
        "--fix", action="append", default=[], metavar="BAND=VALUE",
        help="fix a band weight during estimation, e.g. insig=0 or beta_p2=0.1",
    )
    parent.add_argument("--beta-grid", help="comma-separated weights for the sweeps")
    parent.add_argument("--kappa", type=float, default=3.0)
    parent.add_argument("--regime", type=int, choices=(1, 2, 3))
    parent.add_argument("--include-threshold", type=float, default=1.96)
    parent.add_argument("--beta-p1", type=float, default=0.0)
    parent.add_argument("-v", "--verbose", action="store_true")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="metarep",
        description=(
            "Selective publication and replication rates. "
            f"{THREADS_ENV} caps worker threads without changing results."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    parent = _common_options()
    for name, help_text in (
        ("simulate", "simulate the five-stage model"),
        ("estimate", "fit the selection model to a dataset"),
        ("predict", "fit, then simulate replication outcomes"),
        ("policy-sweep", "replication rate as insignificant results gain publication"),
        ("tier-sweep", "replication rate as moderately significant results gain publication"),
        ("example-figure1", "worked example with θ = 2.5, σ = 1"),
        ("generalized-rr", "generalized replication rates"),
        ("verify", "run the invariant suite"),
    ):
        sub.add_parser(name, parents=[parent], help=help_text)
    return parser


def _to_run_config(ns: argparse.Namespace) -> RunConfig:
    return RunConfig(
        command=ns.command,
        preset=ns.preset,
        data=ns.data,
        policy=ns.policy,
        power=ns.power,
        n_draws=ns.n_draws,
        seed=ns.seed,
        out=ns.out,
        format=ns.format,
        fix=tuple(ns.fix),
        beta_grid=ns.beta_grid,
        kappa=ns.kappa,
        regime=ns.regime,
        include_threshold=ns.include_threshold,
        beta_p1=ns.beta_p1,
    )


def _band_index(name: str) -> int:
    key = name.strip().lower()
    if key in _BAND_ALIASES:
        return _BAND_ALIASES[key]
    match = re.fullmatch(r"(?:beta_)?p(\d+)|(\d+)", key)
    if match is None:
        raise ConfigurationError(f"unknown band {name!r}; use insig, beta_p<k> or a band index")
    if match.group(1) is not None:
        return int(match.group(1)) - 1
    return int(match.group(2))


def parse_fixes(fixes: Sequence[str]) -> Dict[int, float]:
    """``["insig=0", "beta_p2=0.1"]`` -> ``{0: 0.0, 1: 0.1}``."""
    out: Dict[int, float] = {}
    for item in fixes:
        band, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--fix expects BAND=VALUE, got {item!r}")
        try:
            out[_band_index(band)] = float(value)
        except ValueError:
            raise ConfigurationError(f"--fix value must be a number, got {value!r}") from None
    return out


def parse_grid(text: Optional[str]) -> List[float]:
    try:
        return [float(v) for v in (text or DEFAULT_BETA_GRID).split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"invalid --beta-grid {text!r}") from None


def _latent(run: RunConfig) -> Latent:
    if run.preset is None:
        raise ConfigurationError(f"{run.command} requires --preset")
    return get_preset(run.preset).latent


def _policy(run: RunConfig) -> StepPolicy:
    if run.policy is not None:
        return load_policy(run.policy)
    if run.preset is None:
        raise ConfigurationError(f"{run.command} requires --preset or --policy")
    return get_preset(run.preset).policy


def _model_spec(run: RunConfig) -> ModelSpec:
    cutoffs = _policy(run).cutoffs if run.policy is not None else None
    base = get_preset(run.preset).model_spec if run.preset else ModelSpec()
    fixed = dict(base.fixed_weights)
    fixed.update(parse_fixes(run.fix))
    return ModelSpec(
        cutoffs=cutoffs if cutoffs is not None else base.cutoffs,
        fixed_weights=fixed,
        quadrature=base.quadrature,
        n_starts=base.n_starts,
        seed=run.seed,
        theta_sign=base.theta_sign,
        max_evals=base.max_evals,
    )


def _simulation_config(run: RunConfig, latent: Latent, policy: StepPolicy) -> SimulationConfig:
    kwargs: Dict[str, Any] = {}
    if run.n_draws is not None:
        kwargs["n_draws"] = run.n_draws
    return SimulationConfig(
        latent=latent,
        policy=policy,
        power_rule=parse_power_rule(run.power),
        seed=run.seed,
        inclusion_threshold=run.include_threshold,
        **kwargs,
    )


def _fit(run: RunConfig) -> Tuple[MleResult, ModelSpec]:
    if run.data is None:
        raise ConfigurationError(f"{run.command} requires --data")
    spec = _model_spec(run)
    return fit_mle(load_dataset(run.data), spec), spec


def cmd_simulate(run: RunConfig) -> Tuple[Any, str]:
    return simulate(_simulation_config(run, _latent(run), _policy(run))), "json"


def cmd_estimate(run: RunConfig) -> Tuple[Any, str]:
    result, _ = _fit(run)
    return result, "json"


def cmd_predict(run: RunConfig) -> Tuple[Any, str]:
    result, spec = _fit(run)
    if not result.converged:
        raise ConvergenceError("fit did not converge; refusing to simulate from it")
    config = _simulation_config(run, result.params.latent, result.params.policy(spec))
    return {"fit": result, "metrics": simulate(config)}, "json"


def _draws(run: RunConfig) -> Dict[str, Any]:
    return {"n_draws": run.n_draws} if run.n_draws is not None else {}


def cmd_policy_sweep(run: RunConfig) -> Tuple[Any, str]:
    table = policy_sweep(
        _latent(run), parse_grid(run.beta_grid), parse_power_rule(run.power),
        seed=run.seed, **_draws(run),
    )
    return table, "csv"


def cmd_tier_sweep(run: RunConfig) -> Tuple[Any, str]:
    rule = parse_power_rule(run.power)
    if not isinstance(rule, CommonMean):
        raise ConfigurationError("tier-sweep supports only the mean:<p> power rule")
    table = moderate_significance_sweep(
        _latent(run), run.kappa, parse_grid(run.beta_grid), power=rule.intended_power,
        beta_p1=run.beta_p1, seed=run.seed, **_draws(run),
    )
    return table, "csv"


def cmd_example(run: RunConfig) -> Tuple[Any, str]:
    n_draws = run.n_draws if run.n_draws is not None else EXAMPLE_DRAWS
    regimes = [run.regime] if run.regime is not None else sorted(_REGIMES)
    rows = [simple_example(_REGIMES[r], n_draws=n_draws, seed=run.seed) for r in regimes]
    return (rows[0] if run.regime is not None else rows), "json"


def cmd_generalized(run: RunConfig) -> Tuple[Any, str]:
    rule = parse_power_rule(run.power)
    power = rule.intended_power if isinstance(rule, CommonMean) else 0.92
    table = generalized_table(
        _latent(run), _policy(run), seed=run.seed, intended_power=power, **_draws(run)
    )
    return table, "csv"


def cmd_verify(run: RunConfig) -> Tuple[Any, str]:
    kwargs: Dict[str, Any] = {"seed": run.seed}
    if run.n_draws is not None:
        kwargs["n_draws"] = run.n_draws
    return InvariantSuite(VerifyConfig(**kwargs)).run(), "json"


COMMANDS: Dict[str, Handler] = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "predict": cmd_predict,
    "policy-sweep": cmd_policy_sweep,
    "tier-sweep": cmd_tier_sweep,
    "example-figure1": cmd_example,
    "generalized-rr": cmd_generalized,
    "verify": cmd_verify,
}


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    try:
        ns = build_parser().parse_args(argv)
    except ConfigurationError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return int(e.code or 0)
    _configure_logging(ns.verbose)

    try:
        run = _to_run_config(ns)
        result, default_format = COMMANDS[run.command](run)
        write_report(result, run.out, run.format or default_format)
    except (ConfigurationError, DomainError) as e:
        LGR.error("%s", e)
        return EXIT_USAGE
    except DataError as e:
        LGR.error("%s", e)
        return EXIT_DATA
    except (NumericalError, ConvergenceError, EmptyConditioningError) as e:
        LGR.error("%s", e)
        return EXIT_NUMERICAL

    if isinstance(result, MleResult) and not result.converged:
        LGR.error("fit did not converge: %s", result.diagnostics)
        return EXIT_NUMERICAL
    if run.command == "verify":
        failed = [o for o in result if not o.passed]
        for outcome in failed:
            LGR.error("%s", InvariantViolation(f"{outcome.name}: {outcome.detail}"))
        if failed:
            return EXIT_INVARIANT
    return EXIT_OK


def main() -> None:
    sys.exit(run_cli())
