import json
import logging
import math

import pytest
from pythonjsonlogger import jsonlogger

from config.config import (
    ConfigManager,
    RuntimeConfig,
    ScenarioConfig,
    SpeciesSection,
    SweepSection,
    parse_scenario,
    setup_logging,
    validate_environment,
)
from services.dynamics import OpticalSolver
from services.errors import ConfigError


@pytest.fixture
def write_scenario(tmp_path):
    def _write(raw, name='scenario.json'):
        path = tmp_path / name
        path.write_text(json.dumps(raw))
        return str(path)
    return _write


@pytest.fixture
def restore_logging():
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


class TestParsing:
    def test_defaults(self):
        cfg = parse_scenario({})
        assert cfg.species == 'Rb87'
        assert cfg.grid.n == 32768
        assert cfg.beam.V_X * cfg.beam.V_Y == pytest.approx(1.0)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match='trap.omega'):
            parse_scenario({'trap': {'omega': 5.0}})

    def test_section_ranges(self):
        with pytest.raises(ConfigError, match='number_imbalance'):
            parse_scenario({'trap': {'number_imbalance': 1.0}})

    def test_inline_species(self, fast_raw):
        fast_raw['species'] = {
            'name': 'Rb87-custom', 'mass': 1.443160648e-25, 'dipole_d13': 2.534e-29,
            'scattering_length': 5.313e-9, 'raman_velocity': 0.012,
        }
        cfg = parse_scenario(fast_raw)
        assert isinstance(cfg.species, SpeciesSection)
        assert cfg.to_physical().species.name == 'Rb87-custom'

    def test_sweep_values(self):
        sweep = SweepSection(kind='rabi2d', start=0.5, stop=1.5, points=3, start2=1.0, stop2=2.0, points2=2)
        assert sweep.values() == [0.5, 1.0, 1.5]
        assert sweep.values2() == [1.0, 2.0]
        assert SweepSection().values()[-1] == 1.33


class TestDerivedNumerics:
    def test_integrator_defaults(self, fast_scenario, fast_setup):
        sim, _ = fast_setup
        integrator = fast_scenario.integrator_config(sim)
        assert integrator.dt == pytest.approx(sim.t_rabi / 200)
        assert integrator.snapshot_times == sim.default_snapshot_times(sim.default_t_final)
        assert fast_scenario.t_final(sim) == sim.default_t_final

    def test_explicit_times_are_seconds(self, fast_raw, fast_setup):
        sim, _ = fast_setup
        fast_raw['integrator'] = {'dt': 1e-5, 'snapshot_times': [0.0, 0.02], 't_final': 0.04}
        cfg = parse_scenario(fast_raw)
        integrator = cfg.integrator_config(sim)
        assert integrator.dt == pytest.approx(5e-5)
        assert integrator.snapshot_times == pytest.approx((0.0, 0.1))
        assert cfg.t_final(sim) == pytest.approx(0.2)

    def test_resolution_override(self, fast_scenario):
        refined = fast_scenario.with_overrides(resolution_mult=2, optical_solver='dynamic')
        assert refined.grid.n == 8192
        assert refined.integrator.steps_per_rabi == 400
        assert refined.integrator.optical_solver is OpticalSolver.DYNAMIC
        with pytest.raises(ConfigError, match='power of two'):
            fast_scenario.with_overrides(resolution_mult=3)

    def test_sim_grid_is_in_oscillator_units(self, fast_scenario, fast_setup):
        sim, grid = fast_setup
        assert grid.x_min == pytest.approx(-8e-4 / sim.scaling.x0)
        assert grid.n == 4096


class TestValidation:
    def test_fast_scenario_is_valid(self, fast_raw, write_scenario):
        issues = ConfigManager(write_scenario(fast_raw)).validate_config()
        assert issues['errors'] == []

    @pytest.mark.parametrize('section, update, message', [
        ('trap', {'x_send': -5e-5, 'x_recv': 5e-5}, 'overlap'),
        ('grid', {'n': 4000}, 'power of two'),
        ('integrator', {'steps_per_rabi': 4}, 'steps_per_rabi'),
        ('optical', {'Omega23': 0.3 * 2 * math.pi * 1e9}, 'adiabatic'),
    ])
    def test_errors(self, fast_raw, write_scenario, section, update, message):
        fast_raw.setdefault(section, {}).update(update)
        issues = ConfigManager(write_scenario(fast_raw)).validate_config()
        assert any(message in e for e in issues['errors'])

    def test_sweep_bounds(self, fast_raw, write_scenario):
        fast_raw['scenario'] = {'name': 'sweep-dn', 'sweep': {'kind': 'dn', 'start': 0.0, 'stop': 1.5}}
        issues = ConfigManager(write_scenario(fast_raw)).validate_config()
        assert any('outside' in e for e in issues['errors'])

    def test_two_axis_sweep_needs_both_axes(self, fast_raw, write_scenario):
        fast_raw['scenario'] = {'name': 'custom', 'sweep': {'kind': 'rabi2d'}}
        issues = ConfigManager(write_scenario(fast_raw)).validate_config()
        assert any('rabi2d' in e for e in issues['errors'])

    def test_sweep_scenario_needs_sweep(self, fast_raw, write_scenario):
        fast_raw['scenario'] = {'name': 'sweep-rabi'}
        issues = ConfigManager(write_scenario(fast_raw)).validate_config()
        assert any('needs a sweep section' in e for e in issues['errors'])

    def test_calibrated_loss_is_flagged(self, fast_raw, write_scenario):
        issues = ConfigManager(write_scenario(fast_raw)).validate_config()
        assert any('Spontaneous loss' in w for w in issues['warnings'])

    def test_validate_environment_prints_errors(self, fast_raw, write_scenario, capsys):
        fast_raw['grid'] = {'n': 4000}
        assert validate_environment(ConfigManager(write_scenario(fast_raw))) is False
        assert '❌ Configuration Errors:' in capsys.readouterr().out


class TestConfigManager:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match='not found'):
            ConfigManager(str(tmp_path / 'missing.json'))

    def test_malformed_json(self, tmp_path):
        path = tmp_path / 'broken.json'
        path.write_text('{"trap": ')
        with pytest.raises(ConfigError, match='Failed to parse'):
            ConfigManager(str(path))

    def test_non_object(self, write_scenario):
        with pytest.raises(ConfigError):
            ConfigManager(write_scenario([1, 2, 3]))

    def test_template_round_trip(self, tmp_path):
        path = ConfigManager().export_config_template(str(tmp_path / 'template.json'))
        cfg = ConfigManager(str(path)).scenario
        assert cfg == ScenarioConfig.model_validate(json.loads(path.read_text()))
        assert cfg.scenario.sweep is not None

    def test_overrides(self, fast_raw, write_scenario):
        manager = ConfigManager(write_scenario(fast_raw))
        manager.apply_overrides(resolution_mult=2)
        assert manager.scenario.grid.n == 8192

    def test_runtime_from_env(self, monkeypatch):
        monkeypatch.setenv('TELEPORT_LOG_LEVEL', 'debug')
        monkeypatch.setenv('TELEPORT_LOG_FORMAT', 'JSON')
        monkeypatch.setenv('TELEPORT_THREADS', '4')
        monkeypatch.delenv('TELEPORT_SPECIES_FILE', raising=False)
        runtime = RuntimeConfig.from_env()
        assert runtime.log_level == 'DEBUG'
        assert runtime.log_format == 'json'
        assert runtime.threads == 4
        assert runtime.species_file is None

    def test_env_file(self, tmp_path, monkeypatch):
        monkeypatch.setenv('TELEPORT_OUTPUT_DIR', 'unused')
        monkeypatch.delenv('TELEPORT_OUTPUT_DIR')
        env = tmp_path / '.env'
        env.write_text('TELEPORT_OUTPUT_DIR=results\n')
        assert ConfigManager(env_file=str(env)).runtime.output_dir == 'results'


def test_json_logging(tmp_path, restore_logging):
    log_file = tmp_path / 'logs' / 'run.log'
    setup_logging('debug', 'json', str(log_file))
    root = logging.getLogger()
    assert root.level == logging.DEBUG
    assert all(isinstance(h.formatter, jsonlogger.JsonFormatter) for h in root.handlers)

    logging.getLogger('teleport.test').info('hello')
    for handler in root.handlers:
        handler.flush()
    record = json.loads(log_file.read_text().splitlines()[-1])
    assert record['message'] == 'hello'
    assert record['levelname'] == 'INFO'
