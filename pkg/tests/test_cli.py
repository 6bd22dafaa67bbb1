import msgspec
import pytest
from metarep import cli, simulator
from metarep.cli import (
    EXIT_DATA,
    EXIT_INVARIANT,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_USAGE,
    build_parser,
    parse_fixes,
    parse_grid,
    run_cli,
)
from metarep.config import PRESETS, THREADS_ENV
from metarep.estimator import MleResult, ModelParams, generate_synthetic_dataset
from metarep.types import ConfigurationError

ECON = PRESETS["econ-table1"]


def write_synthetic_csv(path, n_published, seed):
    params = ModelParams(ECON.latent.theta, ECON.latent.sigma, ECON.policy.weights)
    data = generate_synthetic_dataset(params, ECON.policy, n_published, seed=seed)
    lines = ["study_id,x,sigma"] + [f"{r.study_id},{r.x!r},{r.sigma!r}" for r in data.records]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def econ_csv(tmp_path):
    return write_synthetic_csv(tmp_path / "synthetic.csv", 300, seed=4)


def run_json(capsys, *argv):
    code = run_cli(list(argv))
    return code, msgspec.json.decode(capsys.readouterr().out or "null")


# Argument handling


def test_parser_registers_every_command():
    parser = build_parser()
    for command in (
        "simulate",
        "estimate",
        "predict",
        "policy-sweep",
        "tier-sweep",
        "example-figure1",
        "generalized-rr",
        "verify",
    ):
        ns = parser.parse_args([command])
        assert ns.command == command
        assert ns.seed == 0
        assert ns.power == "mean:0.92"


def test_help_exits_cleanly(capsys):
    assert run_cli(["--help"]) == EXIT_OK
    assert "policy-sweep" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["frobnicate"],
        ["simulate", "--no-such-flag"],
        ["simulate", "--n", "many"],
        ["example-figure1", "--regime", "4"],
    ],
)
def test_usage_errors(argv):
    assert run_cli(argv) == EXIT_USAGE


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate"],
        ["simulate", "--preset", "astronomy"],
        ["simulate", "--preset", "econ-table1", "--n", "10"],
        ["simulate", "--preset", "econ-table1", "--power", "median:0.9"],
        ["policy-sweep", "--preset", "econ-table1", "--beta-grid", "0,x"],
        ["policy-sweep", "--preset", "econ-table1", "--beta-grid", "0,1.5", "--n", "10000"],
        ["tier-sweep", "--preset", "econ-table1", "--power", "original"],
        ["estimate"],
    ],
)
def test_configuration_errors(argv):
    assert run_cli(argv) == EXIT_USAGE


def test_parse_fixes():
    assert parse_fixes(["insig=0", "beta_p2=0.1"]) == {0: 0.0, 1: 0.1}
    assert parse_fixes(["p1=0.5", "1=0.2"]) == {0: 0.5, 1: 0.2}
    with pytest.raises(ConfigurationError, match="BAND=VALUE"):
        parse_fixes(["insig"])
    with pytest.raises(ConfigurationError, match="unknown band"):
        parse_fixes(["tails=1"])
    with pytest.raises(ConfigurationError, match="number"):
        parse_fixes(["insig=zero"])


def test_parse_grid():
    assert parse_grid(None) == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert parse_grid("0, 0.5,") == [0.0, 0.5]


# Commands


def test_simulate_is_reproducible(tmp_path, monkeypatch):
    # four chunks, so the thread count changes how work is scheduled
    monkeypatch.setattr(simulator, "CHUNK_SIZE", 5_000)
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    argv = ["simulate", "--preset", "econ-table1", "--n", "20000", "--seed", "3"]

    monkeypatch.setenv(THREADS_ENV, "1")
    assert run_cli(argv + ["--out", str(first)]) == EXIT_OK
    monkeypatch.setenv(THREADS_ENV, "4")
    assert run_cli(argv + ["--out", str(second)]) == EXIT_OK

    assert first.read_bytes() == second.read_bytes()
    metrics = msgspec.json.decode(first.read_bytes())
    assert metrics["n_draws"] == 20000
    assert 0.0 < metrics["replication_rate"] < 1.0


def test_simulate_with_inline_policy(capsys):
    code, metrics = run_json(
        capsys,
        "simulate",
        "--preset",
        "psych-table1",
        "--policy",
        '{"cutoffs": [1.96], "weights": [0.0, 1.0]}',
        "--n",
        "20000",
    )
    assert code == EXIT_OK
    assert metrics["share_significant"] == 1.0
    assert metrics["rr_insignificant"] is None


def test_empty_conditioning_is_a_numerical_exit():
    argv = [
        "simulate",
        "--preset",
        "econ-table1",
        "--policy",
        '{"cutoffs": [1.96], "weights": [1.0, 1e-300]}',
        "--n",
        "10000",
    ]
    assert run_cli(argv) == EXIT_NUMERICAL


def test_example_regime_three(capsys):
    code, row = run_json(capsys, "example-figure1", "--regime", "3", "--n", "200000")

    assert code == EXIT_OK
    assert row["regime"] == "insignificant-favored"
    assert row["expected_x"] == pytest.approx(1.87, abs=0.02)
    assert row["expected_x_significant"] == pytest.approx(2.99, abs=0.02)


def test_example_without_regime_lists_all_three(capsys):
    code, rows = run_json(capsys, "example-figure1", "--n", "20000")
    assert code == EXIT_OK
    assert [r["regime"] for r in rows] == ["no-bias", "significant-only", "insignificant-favored"]


def test_policy_sweep_csv(capsys):
    code = run_cli(
        ["policy-sweep", "--preset", "econ-table1", "--n", "20000", "--beta-grid", "0,1"]
    )
    lines = capsys.readouterr().out.splitlines()

    assert code == EXIT_OK
    assert lines[0] == "beta_p,replication_rate,mean_bias,coverage,share_significant,mc_se"
    assert len(lines) == 3
    assert lines[1].split(",")[1] == lines[2].split(",")[1]


def test_tier_sweep_csv(capsys):
    code = run_cli(
        ["tier-sweep", "--preset", "psych-table1", "--n", "20000", "--beta-grid", "0,1", "--kappa", "2.5"]
    )
    lines = capsys.readouterr().out.splitlines()

    assert code == EXIT_OK
    assert lines[0] == "beta_p2,replication_rate,mean_true_effect,mean_bias"


def test_generalized_rr_csv(capsys):
    code = run_cli(["generalized-rr", "--preset", "econ-table1", "--n", "20000"])
    lines = capsys.readouterr().out.splitlines()

    assert code == EXIT_OK
    assert lines[0] == (
        "regime,power_rule,generalized_rr,rr_significant,rr_insignificant,"
        "share_significant,share_insignificant"
    )
    assert len(lines) == 5


def test_json_format_override(capsys):
    code, rows = run_json(
        capsys, "policy-sweep", "--preset", "econ-table1", "--n", "20000",
        "--beta-grid", "0.5", "--format", "json",
    )
    assert code == EXIT_OK
    assert rows[0]["beta_p"] == 0.5


def test_estimate_data_errors(tmp_path):
    assert run_cli(["estimate", "--data", str(tmp_path / "absent.csv")]) == EXIT_DATA

    short = tmp_path / "short.csv"
    short.write_text("study_id,x,sigma\na,0.3,0.1\nb,0.2,0.1\n")
    assert run_cli(["estimate", "--data", str(short)]) == EXIT_DATA


def test_estimate_rejects_insignificant_record_in_fixed_band(tmp_path):
    path = tmp_path / "data.csv"
    rows = [f"s{i},{0.3 + 0.02 * i},0.1" for i in range(12)] + ["s99,0.01,0.1"]
    path.write_text("study_id,x,sigma\n" + "\n".join(rows) + "\n")
    assert run_cli(["estimate", "--data", str(path), "--fix", "insig=0"]) == EXIT_DATA


def test_unwritable_output_is_a_data_error(tmp_path):
    out = tmp_path / "missing" / "out.json"
    argv = ["example-figure1", "--regime", "1", "--n", "10000", "--out", str(out)]
    assert run_cli(argv) == EXIT_DATA


@pytest.mark.slow
def test_estimate_synthetic_csv(capsys, econ_csv):
    code, result = run_json(capsys, "estimate", "--data", str(econ_csv), "--fix", "insig=0")

    assert code in (EXIT_OK, EXIT_NUMERICAL)
    assert set(result) == {"params", "loglik", "robust_se", "converged", "n_evals", "diagnostics"}
    assert result["params"]["weights"][0] == 0.0
    assert result["params"]["weights"][2] == 1.0
    assert code == (EXIT_OK if result["converged"] else EXIT_NUMERICAL)


def test_predict_refuses_unconverged_fit(monkeypatch, econ_csv):
    def stalled(data, spec):
        params = ModelParams(ECON.latent.theta, ECON.latent.sigma, ECON.policy.weights)
        return MleResult(params=params, loglik=-1.0, converged=False)

    monkeypatch.setattr(cli, "fit_mle", stalled)
    argv = ["predict", "--data", str(econ_csv), "--fix", "insig=0", "--n", "10000"]
    assert run_cli(argv) == EXIT_NUMERICAL


@pytest.mark.slow
def test_predict_synthetic_csv(capsys, tmp_path):
    path = write_synthetic_csv(tmp_path / "large.csv", 2000, seed=12)
    code, report = run_json(
        capsys, "predict", "--data", str(path), "--fix", "insig=0", "--n", "100000"
    )

    assert code == EXIT_OK
    assert set(report) == {"fit", "metrics"}
    assert report["fit"]["converged"] is True
    assert report["fit"]["params"]["weights"][0] == 0.0
    assert report["metrics"]["n_draws"] == 100000
    assert 0.3 < report["metrics"]["replication_rate"] < 0.92


@pytest.mark.slow
def test_verify_passes(capsys):
    code, outcomes = run_json(capsys, "verify", "--n", "1000000")

    assert code == EXIT_OK, [o for o in outcomes if not o["passed"]]
    assert all(o["passed"] for o in outcomes)
    assert EXIT_INVARIANT == 4
