import os

import pytest
from metarep.config import (
    PRESETS,
    THREADS_ENV,
    ModelSpec,
    QuadratureConfig,
    RunConfig,
    SimulationConfig,
    get_preset,
    resolve_threads,
)
from metarep.replication_model import CommonMean
from metarep.selection_model import StepPolicy
from metarep.types import ConfigurationError, DataError, FixedLatent


def test_simulation_config_default():
    config = SimulationConfig(latent=FixedLatent(2.5, 1.0))
    assert config.n_draws == 10_000_000
    assert config.seed == 0
    assert config.policy == StepPolicy()
    assert config.power_rule == CommonMean(0.92)
    assert config.inclusion_threshold == 1.96


def test_simulation_config_rejects_few_draws():
    with pytest.raises(ConfigurationError, match="n_draws"):
        SimulationConfig(latent=FixedLatent(2.5, 1.0), n_draws=100)


def test_quadrature_config_default():
    config = QuadratureConfig()
    assert (config.theta_nodes, config.sigma_nodes, config.tail) == (128, 128, 1e-10)
    assert config.doubled().theta_nodes == 256


def test_quadrature_config_rejects_bad_values():
    with pytest.raises(ConfigurationError):
        QuadratureConfig(theta_nodes=1)
    with pytest.raises(ConfigurationError, match="tail"):
        QuadratureConfig(tail=0.5)


def test_model_spec_free_bands():
    spec = ModelSpec(fixed_weights={0: 0.0})
    assert spec.free_bands == (1,)
    assert ModelSpec().free_bands == (0, 1)


def test_model_spec_rejects_top_band_fix():
    with pytest.raises(ConfigurationError, match="cannot be fixed"):
        ModelSpec(fixed_weights={2: 1.0})
    with pytest.raises(ConfigurationError, match=">= 0"):
        ModelSpec(fixed_weights={0: -1.0})


def test_presets_embed_point_estimates():
    econ = get_preset("econ-table1")
    assert (econ.latent.theta.shape, econ.latent.theta.scale) == (1.426, 0.148)
    assert (econ.latent.sigma.shape, econ.latent.sigma.scale) == (2.735, 0.103)
    assert econ.policy.weights == (0.0, 0.038, 1.0)
    assert econ.model_spec.fixed_weights == {0: 0.0}

    psych = PRESETS["psych-table1"]
    assert (psych.latent.theta.shape, psych.latent.theta.scale) == (0.906, 0.156)
    assert (psych.latent.sigma.shape, psych.latent.sigma.scale) == (4.762, 0.044)
    assert psych.policy.weights == (0.012, 0.299, 1.0)
    assert psych.model_spec.free_bands == (0, 1)


def test_unknown_preset():
    with pytest.raises(ConfigurationError, match="unknown preset"):
        get_preset("physics")


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_threads() == (os.cpu_count() or 1)
    monkeypatch.setenv(THREADS_ENV, "3")
    assert resolve_threads() == 3
    assert resolve_threads(5) == 5


@pytest.mark.parametrize("value", ["zero", "0", "-2"])
def test_resolve_threads_invalid(monkeypatch, value):
    monkeypatch.setenv(THREADS_ENV, value)
    with pytest.raises(ConfigurationError, match=THREADS_ENV):
        resolve_threads()


def test_run_config_requires_existing_files(tmp_path):
    with pytest.raises(DataError, match="dataset file not found"):
        RunConfig(command="estimate", data=str(tmp_path / "missing.csv"))
    with pytest.raises(DataError, match="power ratio file not found"):
        RunConfig(command="simulate", power=f"realized:{tmp_path / 'nope.csv'}")


def test_run_config_defaults(tmp_path):
    data = tmp_path / "d.csv"
    data.write_text("study_id,x,sigma\n")
    run = RunConfig(command="estimate", data=str(data))
    assert run.seed == 0
    assert run.format is None
    with pytest.raises(ConfigurationError, match="regime"):
        RunConfig(command="example-figure1", regime=4)
