import cmath
import math

import numpy as np
import pytest
from pydantic import ValidationError

from scheduler.scenario_runner import input_template
from services.errors import ConfigError, MetricsError, UnitarityError
from services.fields import Grid1D, gaussian_envelope, translate_field
from services.quantum_metrics import (
    GaussianMode,
    TransferResult,
    apply_station_loss,
    beam_splitter_reduce,
    gaussian_oracle,
    project_translated_template,
    track_mode,
    transfer_metrics,
)
from services.units import BeamConfig

SQUEEZED = GaussianMode(mean_X=2 * math.sqrt(5e3), mean_Y=0.0, V_X=math.exp(-2), V_Y=math.exp(2))


class TestTransferMetrics:
    def test_lossless_channel(self):
        result = transfer_metrics(SQUEEZED, 1.0)
        assert result.T_q == pytest.approx(2.0)
        assert result.V_q == 0.0
        assert result.beta_abs == 1.0

    def test_reference_point(self):
        result = transfer_metrics(SQUEEZED, 0.9216)
        assert result.T_X == pytest.approx(0.61403, rel=1e-4)
        assert result.T_Y == pytest.approx(0.98862, rel=1e-4)
        assert result.Vcv_X == pytest.approx(0.0784)
        assert result.V_q == pytest.approx(0.00614656, rel=1e-6)

    def test_geometric_convention(self):
        assert transfer_metrics(SQUEEZED, 0.9216, 'geometric').V_q == pytest.approx(0.0784)

    def test_zero_mean_input(self):
        vacuum = GaussianMode(mean_X=0.0, mean_Y=0.0, V_X=1.0, V_Y=1.0)
        with pytest.raises(MetricsError):
            transfer_metrics(vacuum, 0.5)

    def test_transmissivity_range(self):
        with pytest.raises(ConfigError):
            transfer_metrics(SQUEEZED, 1.2)

    def test_matches_covariance_oracle(self):
        rng = np.random.default_rng(20240531)
        for _ in range(1000):
            eta = rng.uniform(0.0, 1.0)
            v_x = rng.uniform(0.05, 10.0)
            mode = GaussianMode(mean_X=1.0, mean_Y=0.0, V_X=v_x, V_Y=rng.uniform(1.0, 3.0) / v_x)
            result = transfer_metrics(mode, eta)
            oracle = gaussian_oracle(mode, eta)
            assert result.T_X == pytest.approx(oracle.T_X, rel=1e-9, abs=1e-12)
            assert result.T_Y == pytest.approx(oracle.T_Y, rel=1e-9, abs=1e-12)
            assert result.Vcv_X == pytest.approx(oracle.Vcv_X, rel=1e-9, abs=1e-12)
            assert result.V_q == pytest.approx(oracle.V_q, rel=1e-9, abs=1e-12)

    def test_record_is_strict(self):
        data = transfer_metrics(SQUEEZED, 0.5).model_dump()
        data['wall_time'] = 1.0
        with pytest.raises(ValidationError):
            TransferResult(**data)


class TestBeamSplitter:
    def test_clamps_rounding_excess(self):
        assert beam_splitter_reduce(1 + 1e-8) == 1.0

    def test_rejects_gain(self):
        with pytest.raises(UnitarityError):
            beam_splitter_reduce(1.01)

    def test_station_loss(self):
        assert apply_station_loss(1.0, 0.04) == pytest.approx(0.9216)
        assert apply_station_loss(0.9, 0.0, 0.5) == pytest.approx(0.45)
        with pytest.raises(ConfigError):
            apply_station_loss(1.0, 1.5)


class TestGaussianMode:
    def test_from_beam(self):
        mode = GaussianMode.from_beam(BeamConfig(n0=5e3))
        assert mode.mean_X == pytest.approx(2 * math.sqrt(5e3))
        assert mode.V_X * mode.V_Y == pytest.approx(1.0)

    def test_occupation_of_coherent_state(self):
        assert GaussianMode(mean_X=2 * math.sqrt(5e3), mean_Y=0.0, V_X=1.0, V_Y=1.0).occupation == pytest.approx(5e3)

    def test_uncertainty_bound(self):
        with pytest.raises(ConfigError):
            GaussianMode(mean_X=1.0, mean_Y=0.0, V_X=0.5, V_Y=1.5)


class TestProjection:
    @pytest.fixture
    def template(self):
        return gaussian_envelope(Grid1D(-40.0, 40.0, 2048), 0.0, 2.0, 1.0)

    def test_recovers_translation_and_overlap(self, template):
        beta = 0.8 * cmath.exp(0.7j)
        shifted = translate_field(template, 10.37).scaled(beta)
        result = project_translated_template(shifted, template, 10.0, 3.0)
        assert result.translation == pytest.approx(10.37, abs=1e-3)
        assert abs(result.beta - beta) < 1e-6
        assert not result.at_window_edge

    def test_flags_window_edge(self, template):
        shifted = translate_field(template, 10.37)
        assert project_translated_template(shifted, template, 0.0, 3.0).at_window_edge

    def test_window_must_fit(self, template):
        with pytest.raises(ConfigError):
            project_translated_template(template, template, 0.0, 45.0)


def test_tracked_mode_is_the_scaled_mean_field(fast_scenario, fast_run):
    sim = fast_run.sim
    grid = fast_scenario.sim_grid(sim)
    mode = track_mode(input_template(sim, grid), sim, fast_scenario.integrator_config(sim),
                      fast_scenario.t_final(sim))
    scale = fast_run.mode.f.peak()
    assert np.max(np.abs(mode.f.values - fast_run.mode.f.values)) < 1e-9 * scale
    assert mode.commutator_norm() == pytest.approx(fast_run.commutator, abs=1e-9)


def test_track_mode_requires_unit_norm(fast_setup):
    sim, grid = fast_setup
    u = gaussian_envelope(grid, sim.pulse_center, sim.pulse_width, 2.0, carrier=sim.carrier)
    with pytest.raises(ConfigError, match='normalized'):
        track_mode(u, sim, None)
