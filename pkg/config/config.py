#!/usr/bin/env python3
"""
Configuration management for the atom-laser transfer simulator
Runtime settings come from the environment (.env supported); the physics and
numerics of a run come from a sectioned JSON scenario file.
"""

import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from pythonjsonlogger import jsonlogger

from services.dynamics import (
    STEP_ACCURACY_LIMIT,
    CondensateMode,
    IntegratorConfig,
    OpticalBoundary,
    OpticalSolver,
    build_coupling,
    build_initial_state,
    calibrate_control,
    coupling_step_rate,
)
from services.errors import ConfigError, OutputError
from services.fields import Grid1D
from services.loss_estimates import spontaneous_budget
from services.units import (
    ADIABATIC_LIMIT,
    SUPPORT_HALF_WIDTH,
    AtomSpecies,
    BeamConfig,
    OpticalConfig,
    PhysicalConfig,
    SimConfig,
    TrapConfig,
    load_species,
    nondimensionalize,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
JSON_LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s %(message)s'

ScenarioName = Literal['fig3-transfer', 'sweep-rabi', 'sweep-dn', 'loss-report', 'custom']
SweepKind = Literal['rabi', 'dn', 'rabi2d']

# Inclusive parameter bounds accepted for each sweep kind
SWEEP_BOUNDS = {
    'rabi': (0.0, 3.0),
    'rabi2d': (0.0, 3.0),
    'dn': (-0.99, 0.99),
}

GUARD_WIDTHS = 10.0


@dataclass
class RuntimeConfig:
    """Process-level settings that do not change the physics"""
    log_level: str
    log_format: str
    output_dir: str
    threads: int
    species_file: Optional[str]

    @classmethod
    def from_env(cls):
        return cls(
            log_level=os.getenv('TELEPORT_LOG_LEVEL', 'INFO').upper(),
            log_format=os.getenv('TELEPORT_LOG_FORMAT', 'text').lower(),
            output_dir=os.getenv('TELEPORT_OUTPUT_DIR', 'output'),
            threads=int(os.getenv('TELEPORT_THREADS', '1')),
            species_file=os.getenv('TELEPORT_SPECIES_FILE') or None,
        )


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class SpeciesSection(_Section):
    """Inline species data, SI units"""
    name: str
    mass: float = Field(gt=0)
    dipole_d13: float = Field(ge=0)
    scattering_length: Optional[float] = Field(default=None, ge=0)
    d_line_wavenumber: Optional[float] = Field(default=None, gt=0)
    natural_linewidth: Optional[float] = Field(default=None, ge=0)
    raman_velocity: Optional[float] = Field(default=None, gt=0)
    sources: Optional[Dict[str, str]] = None

    def to_species(self) -> AtomSpecies:
        return AtomSpecies(**self.model_dump(exclude={'sources'}))


class TrapSection(_Section):
    omega_t: float = Field(default=5.0, gt=0)
    omega_t_is_hz: bool = False
    N0: float = Field(default=1e6, gt=0)
    x_send: float = -5e-4
    x_recv: float = 5e-4
    number_imbalance: float = Field(default=0.0, gt=-1, lt=1)


class BeamSection(_Section):
    n0: float = Field(default=5e3, gt=0)
    k0: float = Field(default=8e6, gt=0)
    envelope_center: Optional[float] = None
    envelope_width: Optional[float] = Field(default=None, gt=0)
    V_X: float = Field(default=math.exp(-2.0), gt=0)
    V_Y: float = Field(default=math.exp(2.0), gt=0)


class OpticalSection(_Section):
    Omega23: Optional[float] = None
    Delta: float = 2 * math.pi * 1e9
    omega0: Optional[float] = Field(default=None, gt=0)
    waist: float = Field(default=1e-4, gt=0)
    rabi_ratio_send: float = Field(default=1.0, ge=0)
    rabi_ratio_recv: float = Field(default=1.0, ge=0)
    two_photon_detuning: float = 0.0


class GridSection(_Section):
    x_min: float = -2e-3
    x_max: float = 2e-3
    n: int = Field(default=32768, gt=1)


class IntegratorSection(_Section):
    """Times in seconds. dt defaults to T_Rabi / steps_per_rabi."""
    dt: Optional[float] = Field(default=None, gt=0)
    steps_per_rabi: int = Field(default=200, ge=4)
    optical_solver: OpticalSolver = OpticalSolver.QUASISTATIC
    reduced_c_factor: float = Field(default=1e-6, gt=0, le=1)
    optical_boundary: OpticalBoundary = OpticalBoundary.OPEN
    condensate_mode: CondensateMode = CondensateMode.FROZEN
    snapshot_times: Optional[List[float]] = None
    t_final: Optional[float] = Field(default=None, gt=0)
    guard_threshold: float = Field(default=1e-6, gt=0)


class SweepSection(_Section):
    """Parameter range of a sweep; the second axis is only used by rabi2d"""
    kind: SweepKind = 'rabi'
    start: float = 0.66
    stop: float = 1.33
    points: int = Field(default=21, ge=2)
    start2: Optional[float] = None
    stop2: Optional[float] = None
    points2: Optional[int] = Field(default=None, ge=2)

    def values(self) -> List[float]:
        return _linspace(self.start, self.stop, self.points)

    def values2(self) -> List[float]:
        if self.start2 is None or self.stop2 is None or self.points2 is None:
            return []
        return _linspace(self.start2, self.stop2, self.points2)


class ScenarioSection(_Section):
    name: ScenarioName = 'fig3-transfer'
    vq_convention: Literal['product', 'geometric'] = 'product'
    search_window_widths: float = Field(default=10.0, gt=0)
    station_loss: float = Field(default=0.0, ge=0, le=1)
    target_loss: float = Field(default=0.04, gt=0, lt=1)
    number_fluctuation: Literal['mean_field', 'poissonian'] = 'mean_field'
    convergence_tolerance: float = Field(default=1e-4, gt=0)
    sweep: Optional[SweepSection] = None


class ScenarioConfig(_Section):
    """A complete scenario file"""
    species: Union[str, SpeciesSection] = 'Rb87'
    trap: TrapSection = Field(default_factory=TrapSection)
    beam: BeamSection = Field(default_factory=BeamSection)
    optical: OpticalSection = Field(default_factory=OpticalSection)
    grid: GridSection = Field(default_factory=GridSection)
    integrator: IntegratorSection = Field(default_factory=IntegratorSection)
    scenario: ScenarioSection = Field(default_factory=ScenarioSection)

    def species_data(self, species_file: Optional[str] = None) -> AtomSpecies:
        if isinstance(self.species, SpeciesSection):
            return self.species.to_species()
        return load_species(self.species, Path(species_file) if species_file else None)

    def to_physical(self, species_file: Optional[str] = None) -> PhysicalConfig:
        """Build the validated SI configuration (dataclass checks raise ConfigError)"""
        return PhysicalConfig(
            species=self.species_data(species_file),
            trap=TrapConfig(**self.trap.model_dump()),
            beam=BeamConfig(**self.beam.model_dump()),
            optical=OpticalConfig(**self.optical.model_dump()),
        )

    def sim_grid(self, sim: SimConfig) -> Grid1D:
        x0 = sim.scaling.x0
        return Grid1D(self.grid.x_min / x0, self.grid.x_max / x0, self.grid.n)

    def t_final(self, sim: SimConfig) -> float:
        if self.integrator.t_final is None:
            return sim.default_t_final
        return sim.scaling.to_sim(self.integrator.t_final, 'time')

    def integrator_config(self, sim: SimConfig, occupation_scale: float = 1.0) -> IntegratorConfig:
        """Time stepping in oscillator units"""
        section = self.integrator
        if section.dt is not None:
            dt = sim.scaling.to_sim(section.dt, 'time')
        else:
            dt = sim.t_rabi / section.steps_per_rabi

        t_final = self.t_final(sim)
        if section.snapshot_times is None:
            snapshots = sim.default_snapshot_times(t_final)
        else:
            snapshots = tuple(sim.scaling.to_sim(t, 'time') for t in section.snapshot_times)

        return IntegratorConfig(
            dt=dt,
            optical_solver=section.optical_solver,
            reduced_c_factor=section.reduced_c_factor,
            optical_boundary=section.optical_boundary,
            condensate_mode=section.condensate_mode,
            snapshot_times=snapshots,
            occupation_scale=occupation_scale,
            guard_threshold=section.guard_threshold,
        )

    def with_overrides(self, resolution_mult: Optional[int] = None,
                       optical_solver: Optional[str] = None) -> 'ScenarioConfig':
        """Copy with the grid and time step refined and/or the optical solver switched"""
        data = self.model_dump()
        if resolution_mult is not None:
            if resolution_mult < 1 or resolution_mult & (resolution_mult - 1):
                raise ConfigError(f"Resolution multiplier {resolution_mult} must be a power of two")
            data['grid']['n'] *= resolution_mult
            if data['integrator']['dt'] is not None:
                data['integrator']['dt'] /= resolution_mult
            else:
                data['integrator']['steps_per_rabi'] *= resolution_mult
        if optical_solver is not None:
            data['integrator']['optical_solver'] = optical_solver
        return parse_scenario(data)


def _linspace(start: float, stop: float, points: int) -> List[float]:
    step = (stop - start) / (points - 1)
    return [start + i * step for i in range(points - 1)] + [stop]


def parse_scenario(raw: Dict[str, Any]) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(raw)
    except ValidationError as e:
        details = '; '.join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Invalid scenario: {details}")


def setup_logging(level: str = 'INFO', fmt: str = 'text', log_file: Optional[str] = None):
    """Configure root logging once for the process"""
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file))

    if fmt == 'json':
        formatter = jsonlogger.JsonFormatter(JSON_LOG_FORMAT)
    else:
        formatter = logging.Formatter(LOG_FORMAT)
    for handler in handlers:
        handler.setFormatter(formatter)

    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), handlers=handlers, force=True)


class ConfigManager:
    """Central configuration manager"""

    def __init__(self, config_file: Optional[str] = None, env_file: Optional[str] = None):
        self.config_file = config_file
        self.env_file = env_file or '.env'

        if Path(self.env_file).exists():
            load_dotenv(self.env_file)

        self.runtime = RuntimeConfig.from_env()
        self.raw = self._load_json_config()
        self._scenario: Optional[ScenarioConfig] = None

    def _load_json_config(self) -> Dict[str, Any]:
        """Load the scenario file; no file means all defaults"""
        if not self.config_file:
            return {}

        config_path = Path(self.config_file)
        if not config_path.exists():
            raise ConfigError(f"Scenario file not found: {config_path}")
        try:
            with open(config_path, 'r') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Failed to parse {config_path}: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"{config_path} must hold a JSON object with one key per section")
        return data

    @property
    def scenario(self) -> ScenarioConfig:
        if self._scenario is None:
            self._scenario = parse_scenario(self.raw)
        return self._scenario

    def apply_overrides(self, resolution_mult: Optional[int] = None, optical_solver: Optional[str] = None):
        self._scenario = self.scenario.with_overrides(resolution_mult, optical_solver)

    def validate_config(self) -> Dict[str, list]:
        """Validate configuration and return any issues"""
        issues = {
            'errors': [],
            'warnings': []
        }

        try:
            scenario = self.scenario
            physical = scenario.to_physical(self.runtime.species_file)
            omega23 = physical.optical.Omega23
            if omega23 is None:
                omega23 = calibrate_control(physical.species, physical.trap, physical.beam,
                                            physical.optical, physical.constants).omega23
            sim = nondimensionalize(physical)
        except ConfigError as e:
            issues['errors'].append(str(e))
            return issues

        base_ratio = max(physical.optical.rabi_ratio_send, physical.optical.rabi_ratio_recv)
        peak_ratio = base_ratio
        sweep = scenario.scenario.sweep
        if sweep is not None and sweep.kind in ('rabi', 'rabi2d'):
            swept = [v for v in (sweep.start, sweep.stop, sweep.start2, sweep.stop2) if v is not None]
            peak_ratio = max([base_ratio] + swept)
        ratio = abs(omega23 / physical.optical.Delta)
        if ratio * peak_ratio >= ADIABATIC_LIMIT:
            issues['errors'].append(
                f"|Omega23/Delta| reaches {ratio * peak_ratio:.3g}; adiabatic elimination needs < {ADIABATIC_LIMIT}"
            )

        # Station geometry
        if sim.x_recv - sim.x_send <= 2 * SUPPORT_HALF_WIDTH:
            issues['errors'].append(
                f"Stations are {sim.x_recv - sim.x_send:.3g} x0 apart; condensate supports overlap"
            )

        try:
            grid = scenario.sim_grid(sim)
        except ConfigError as e:
            issues['errors'].append(str(e))
            return issues

        width = sim.pulse_width
        if width <= 3 * grid.dx:
            issues['errors'].append(f"Pulse width {width:.3g} x0 is under-resolved (dx = {grid.dx:.3g} x0)")
        elif width < 10 * grid.dx:
            issues['warnings'].append(f"Pulse width spans only {width / grid.dx:.1f} cells")

        left = sim.x_send - SUPPORT_HALF_WIDTH - grid.x_min
        right = grid.x_max - sim.x_recv - SUPPORT_HALF_WIDTH
        for side, margin in (('upstream', left), ('downstream', right)):
            if margin < GUARD_WIDTHS * width:
                issues['warnings'].append(
                    f"Only {margin / width:.1f} pulse widths of {side} guard band (recommended {GUARD_WIDTHS:g})"
                )

        if issues['errors']:
            return issues

        # Step-size bounds need the actual coupling profile
        try:
            integrator = scenario.integrator_config(sim)
            state = build_initial_state(sim, grid)
            coupling = build_coupling(state.phi_send, state.phi_recv, sim, sim.scaling.to_sim(omega23, 'rate'))
            rate = coupling_step_rate(coupling, integrator)
            if base_ratio > 0:
                rate *= (peak_ratio / base_ratio) ** 2
        except ConfigError as e:
            issues['errors'].append(str(e))
            return issues

        if rate >= STEP_ACCURACY_LIMIT:
            issues['errors'].append(
                f"Coupling phase per step {rate:.3g} exceeds {STEP_ACCURACY_LIMIT}; increase steps_per_rabi"
            )

        k_edge = GUARD_WIDTHS / width
        band_phase = (0.5 * k_edge ** 2 + sim.carrier * k_edge) * integrator.dt
        if band_phase > math.pi / 2:
            issues['warnings'].append(
                f"Kinetic phase per step at the spectral band edge is {band_phase:.3g} rad; consider a smaller dt"
            )

        if integrator.optical_solver is OpticalSolver.DYNAMIC:
            c_eff = integrator.reduced_light_speed(grid, sim.light_speed)
            if c_eff * integrator.dt / grid.dx > 1e4:
                issues['warnings'].append("Reduced light speed needs more than 1e4 probe substeps per step")

        self._validate_sweep(scenario, issues)

        budget = spontaneous_budget(physical.species, physical.beam.k0, physical.beam.n0, ratio * base_ratio,
                                    sim.scaling.to_si(sim.t_rabi, 'time'), physical.constants)
        if not 0.01 <= budget.eta_loss <= 0.1:
            issues['warnings'].append(
                f"Spontaneous loss per station is {budget.eta_loss:.3g}, outside [0.01, 0.1]; "
                f"see the losses report for the ratio giving {scenario.scenario.target_loss:g}"
            )

        return issues

    def _validate_sweep(self, scenario: ScenarioConfig, issues: Dict[str, list]):
        sweep = scenario.scenario.sweep
        if scenario.scenario.name in ('sweep-rabi', 'sweep-dn') and sweep is None:
            issues['errors'].append(f"Scenario '{scenario.scenario.name}' needs a sweep section")
            return
        if sweep is None:
            return

        low, high = SWEEP_BOUNDS[sweep.kind]
        for value in (sweep.start, sweep.stop, sweep.start2, sweep.stop2):
            if value is not None and not low <= value <= high:
                issues['errors'].append(f"Sweep value {value} for '{sweep.kind}' lies outside [{low}, {high}]")
        if sweep.kind == 'rabi2d' and not sweep.values2():
            issues['errors'].append("A rabi2d sweep needs start2, stop2 and points2")
        if sweep.start == sweep.stop:
            issues['warnings'].append("Sweep range is a single value")

    def export_config_template(self, output_file: str = 'scenario_template.json') -> Path:
        """Export a fully populated default scenario"""
        template = ScenarioConfig(scenario=ScenarioSection(sweep=SweepSection())).model_dump(mode='json')
        path = Path(output_file)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, 'w') as f:
                json.dump(template, f, indent=2)
        except OSError as e:
            raise OutputError(f"Failed to write template {path}: {e}", str(path))

        logger.info(f"Configuration template exported to {path}")
        return path


# Global configuration instance
_config: Optional[ConfigManager] = None


def get_config(config_file: Optional[str] = None) -> ConfigManager:
    """Get the global configuration instance, loading it on first use"""
    global _config
    if _config is None or (config_file is not None and config_file != _config.config_file):
        _config = ConfigManager(config_file)
    return _config


def validate_environment(manager: Optional[ConfigManager] = None) -> bool:
    """Validate the current configuration, printing the findings"""
    manager = manager or get_config()
    issues = manager.validate_config()

    if issues['errors']:
        print("❌ Configuration Errors:")
        for error in issues['errors']:
            print(f"   • {error}")
        return False

    if issues['warnings']:
        print("⚠️ Configuration Warnings:")
        for warning in issues['warnings']:
            print(f"   • {warning}")

    if not issues['errors'] and not issues['warnings']:
        print("✅ Configuration is valid")

    return True


if __name__ == "__main__":
    config_path = sys.argv[1] if len(sys.argv) > 1 and not sys.argv[1].startswith('--') else None
    manager = get_config(config_path)
    ok = validate_environment(manager)
    if '--export-template' in sys.argv:
        manager.export_config_template()
    sys.exit(0 if ok else 1)
