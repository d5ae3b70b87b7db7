#!/usr/bin/env python3
"""
Scenario runner for the atom-laser transfer simulator
Runs the single transfer with snapshots, the T-V parameter sweeps and the
loss report, and hands the results to the output writers.
"""

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

from config.config import ConfigManager, ScenarioConfig, SweepSection, parse_scenario
from services.dynamics import (
    ExcitedPopulationMonitor,
    Observer,
    SystemState,
    Trajectory,
    build_coupling,
    build_initial_state,
    calibrate_control,
    effective_rabi_frequency,
    evolve,
    save_state,
    with_calibrated_control,
)
from services.errors import ConfigError, GuardTripError
from services.fields import ComplexField, Grid1D, centroid, gaussian_envelope
from services.loss_estimates import (
    phase_diffusion_estimate,
    ratio_for_loss,
    spontaneous_budget,
    spontaneous_budget_from_trajectory,
)
from services.outputs import SweepPointResult, emit_outputs, format_loss_table
from services.quantum_metrics import (
    GaussianMode,
    ModeFunction,
    ProjectionResult,
    TransferResult,
    apply_station_loss,
    beam_splitter_reduce,
    mode_from_state,
    project_translated_template,
    transfer_metrics,
)
from services.units import SimConfig, describe_scales, load_species, nondimensionalize

logger = logging.getLogger(__name__)

SWEEP_KINDS = ('rabi', 'dn', 'rabi2d')


@dataclass
class TransferRun:
    """Everything one simulated transfer produces"""
    sim: SimConfig
    trajectory: Trajectory
    mode: ModeFunction
    projection: ProjectionResult
    transfer: TransferResult
    converged: bool
    wall_time: float

    @property
    def snapshots(self) -> List[SystemState]:
        return self.trajectory.snapshots

    @property
    def commutator(self) -> float:
        return self.mode.commutator_norm()

    def output_centroid(self) -> float:
        """Centroid of the final beam in metres"""
        return self.sim.scaling.to_si(centroid(self.trajectory.final.psi), 'length')


def prepare_simulation(cfg: ScenarioConfig, species_file: Optional[str] = None) -> Tuple[SimConfig, Grid1D]:
    """Calibrated oscillator-unit parameters and the grid of a scenario"""
    physical = with_calibrated_control(cfg.to_physical(species_file))
    sim = nondimensionalize(physical)
    return sim, cfg.sim_grid(sim)


def input_template(sim: SimConfig, grid: Grid1D) -> ComplexField:
    """Unit-norm input envelope u(x)"""
    return gaussian_envelope(grid, sim.pulse_center, sim.pulse_width, 1.0, carrier=sim.carrier)


def simulate_transfer(cfg: ScenarioConfig, species_file: Optional[str] = None,
                      initial_state: Optional[SystemState] = None,
                      observers: Iterable[Observer] = ()) -> TransferRun:
    """
    Evolve the mean-field pulse through both stations, then project the
    output beam onto the translated input template.

    Args:
        cfg: Parsed scenario
        species_file: Optional species table overriding the shipped one
        initial_state: Resume from this state instead of the default start
        observers: Per-step callbacks

    Returns:
        TransferRun with the trajectory, mode function and transfer record
    """
    started = time.perf_counter()
    sim, grid = prepare_simulation(cfg, species_file)
    input_mode = GaussianMode.from_beam(sim.physical.beam)
    integrator = cfg.integrator_config(sim, occupation_scale=input_mode.occupation / sim.n0)

    if initial_state is None:
        state = build_initial_state(sim, grid)
    elif initial_state.grid != grid:
        raise ConfigError("Saved state was computed on a different grid than the scenario")
    else:
        state = initial_state
        logger.info(f"⏩ Resuming from t={state.t:.6g}")

    coupling = build_coupling(state.phi_send, state.phi_recv, sim)
    rabi_target = 2 * math.pi / sim.t_rabi
    for station in ('send', 'recv'):
        ratio = effective_rabi_frequency(coupling, station, sim.velocity) / rabi_target
        logger.debug(f"Station {station}: effective Rabi frequency {ratio:.4f} x 2pi/T_Rabi")
    t_final = cfg.t_final(sim)
    trajectory = evolve(state, t_final, coupling, integrator, observers)

    # The pulse held n0 quanta at the start, so this is the unit-norm mode
    mode = mode_from_state(trajectory.final, sim.n0)
    template = input_template(sim, grid)
    window = cfg.scenario.search_window_widths * sim.pulse_width
    projection = project_translated_template(mode.f, template, sim.template_translation(t_final), window)

    eta = beam_splitter_reduce(projection.beta)
    eta_eff = apply_station_loss(eta, cfg.scenario.station_loss)
    transfer = transfer_metrics(
        input_mode, eta_eff, cfg.scenario.vq_convention, projection.beta,
        sim.scaling.to_si(projection.translation, 'length'),
    )

    drift = abs(mode.commutator_norm() - 1.0)
    converged = drift <= cfg.scenario.convergence_tolerance and not projection.at_window_edge
    if not converged:
        logger.warning(
            f"⚠️ Run not converged: commutator drift {drift:.3e}, window edge {projection.at_window_edge}"
        )

    return TransferRun(
        sim=sim,
        trajectory=trajectory,
        mode=mode,
        projection=projection,
        transfer=transfer,
        converged=converged,
        wall_time=time.perf_counter() - started,
    )


def apply_sweep_value(cfg: ScenarioConfig, kind: str, value: float, value2: Optional[float] = None) -> ScenarioConfig:
    """
    Scenario for one sweep point. Rabi sweeps scale the calibrated control of
    both stations (rabi: jointly, rabi2d: independently); dn sweeps split N0
    between the stations at the control calibrated for equal numbers.
    """
    data = cfg.model_dump()
    if kind == 'rabi':
        data['optical']['rabi_ratio_send'] = value
        data['optical']['rabi_ratio_recv'] = value
    elif kind == 'rabi2d':
        if value2 is None:
            raise ConfigError("rabi2d sweep points need a receiver ratio")
        data['optical']['rabi_ratio_send'] = value
        data['optical']['rabi_ratio_recv'] = value2
    elif kind == 'dn':
        data['trap']['number_imbalance'] = value
    else:
        raise ConfigError(f"Unknown sweep kind '{kind}' (choose from {', '.join(SWEEP_KINDS)})")
    return parse_scenario(data)


def without_snapshots(cfg: ScenarioConfig) -> ScenarioConfig:
    data = cfg.model_dump()
    data['integrator']['snapshot_times'] = []
    return parse_scenario(data)


def run_sweep_point(raw: Dict[str, Any], kind: str, value: float, value2: Optional[float] = None,
                    species_file: Optional[str] = None) -> SweepPointResult:
    """Run one point; failures are recorded on the row instead of raised"""
    started = time.perf_counter()
    try:
        cfg = apply_sweep_value(parse_scenario(raw), kind, value, value2)
        run = simulate_transfer(cfg, species_file)
    except Exception as e:
        logger.error(f"❌ Sweep point {kind}={value:g} failed: {e}")
        return SweepPointResult(
            kind=kind, parameter=value, parameter2=value2,
            wall_time=time.perf_counter() - started, error=f"{type(e).__name__}: {e}",
        )

    return SweepPointResult(
        kind=kind,
        parameter=value,
        parameter2=value2,
        transfer=run.transfer,
        wall_time=time.perf_counter() - started,
        converged=run.converged,
        commutator=run.commutator,
        at_window_edge=run.projection.at_window_edge,
    )


def loss_report(cfg: ScenarioConfig, species_file: Optional[str] = None,
                loss_species: Sequence[str] = (), include_trajectory: bool = False) -> Dict[str, Any]:
    """
    Spontaneous-emission budget at the configured control and at the control
    giving the target loss, plus phase-diffusion coherence lengths.
    """
    physical = cfg.to_physical(species_file)
    species, beam, trap = physical.species, physical.beam, physical.trap
    calibration = calibrate_control(species, trap, beam, physical.optical, physical.constants)
    omega23 = physical.optical.Omega23 if physical.optical.Omega23 is not None else calibration.omega23
    ratio = abs(omega23 / physical.optical.Delta)

    configured = spontaneous_budget(species, beam.k0, beam.n0, ratio, calibration.t_rabi, physical.constants)
    target_loss = cfg.scenario.target_loss
    target_ratio = ratio_for_loss(target_loss, species, beam.k0, calibration.t_rabi, physical.constants)
    target = spontaneous_budget(species, beam.k0, beam.n0, target_ratio, calibration.t_rabi, physical.constants)

    coherence = {}
    fluctuation = cfg.scenario.number_fluctuation
    for entry in [species] + [load_species(name, species_file) for name in loss_species if name != species.name]:
        estimate = phase_diffusion_estimate(entry, trap.N0, trap.angular_frequency,
                                            number_fluctuation=fluctuation, constants=physical.constants)
        coherence[entry.name] = estimate.to_dict()

    report: Dict[str, Any] = {
        'species': species.name,
        'omega23': omega23,
        'ratio': ratio,
        't_rabi_s': calibration.t_rabi,
        'effective_rabi_frequency': calibration.effective_rabi_frequency,
        'configured': configured.to_dict(),
        'target_loss': target_loss,
        'target': target.to_dict(),
        'phase_diffusion': coherence,
    }

    if include_trajectory:
        monitor = ExcitedPopulationMonitor()
        run = simulate_transfer(without_snapshots(cfg), species_file, observers=[monitor])
        times = [run.sim.scaling.to_si(t, 'time') for t in monitor.times]
        integral = spontaneous_budget_from_trajectory(species, beam.k0, beam.n0, times,
                                                      monitor.send, monitor.recv, physical.constants)
        report['trajectory'] = integral.to_dict()

    return report


def loss_rows(report: Dict[str, Any]) -> List[Tuple[str, str]]:
    """Rows of the printed loss table"""
    configured, target = report['configured'], report['target']
    rows = [
        ('species', report['species']),
        ('|Omega23/Delta| configured', f"{report['ratio']:.4e}"),
        ('T_Rabi', f"{report['t_rabi_s']:.4e} s"),
        ('gamma_sp', f"{configured['gamma_sp']:.4e} 1/s"),
        ('eta_loss per station', f"{configured['eta_loss']:.4f}"),
        ('two-station efficiency', f"{configured['efficiency']:.4f}"),
        (f"|Omega23/Delta| for eta_loss={report['target_loss']:g}", f"{target['ratio']:.4e}"),
        ('two-station efficiency at target', f"{target['efficiency']:.4f}"),
    ]
    if 'trajectory' in report:
        rows.append(('eta_loss from trajectory', f"{report['trajectory']['eta_loss']:.4f}"))
    for name, estimate in report['phase_diffusion'].items():
        rows.append((f"{name} coherence length", f"{estimate['travel_distance'] * 1e3:.3g} mm"))
    return rows


class ScenarioRunner:
    """Batch execution of scenarios"""

    def __init__(self, manager: ConfigManager, out_dir: Optional[str] = None,
                 formats: Sequence[str] = ('csv', 'json', 'svg'), threads: Optional[int] = None,
                 config_file: str = 'sweep_config.json'):
        self.manager = manager
        self.out_dir = Path(out_dir or manager.runtime.output_dir)
        self.formats = tuple(formats)
        self.threads = threads if threads is not None else manager.runtime.threads
        self.config = self.load_config(config_file)

    def load_config(self, config_file: str) -> Dict[str, Any]:
        """Load default sweep ranges, shipped next to this module"""
        config_path = Path(__file__).parent / config_file

        default_config = {
            "sweeps": {
                "rabi": {"start": 0.66, "stop": 1.33, "points": 21},
                "dn": {"start": -0.66, "stop": 0.66, "points": 21},
                "rabi2d": {"start": 0.66, "stop": 1.33, "points": 5,
                           "start2": 0.66, "stop2": 1.33, "points2": 5},
            },
            "checkpoint_snapshots": True,
            "loss_species": ["Rb87", "Na23"],
        }

        if config_path.exists():
            try:
                with open(config_path, 'r') as f:
                    default_config.update(json.load(f))
                    logger.debug(f"Loaded sweep defaults from {config_file}")
            except json.JSONDecodeError as e:
                logger.warning(f"Failed to load {config_file}: {e}. Using defaults.")

        return default_config

    @property
    def scenario(self) -> ScenarioConfig:
        return self.manager.scenario

    def _metadata(self) -> Dict[str, Any]:
        cfg = self.scenario
        return {
            'scenario': cfg.scenario.name,
            'species': cfg.species if isinstance(cfg.species, str) else cfg.species.name,
            'grid_n': cfg.grid.n,
            'optical_solver': cfg.integrator.optical_solver.value,
            'vq_convention': cfg.scenario.vq_convention,
        }

    def sweep_spec(self, kind: Optional[str] = None) -> SweepSection:
        """The scenario's own sweep if it matches, else the shipped defaults for the kind"""
        own = self.scenario.scenario.sweep
        if own is not None and (kind is None or own.kind == kind):
            return own
        kind = kind or {'sweep-dn': 'dn'}.get(self.scenario.scenario.name, 'rabi')
        if kind not in self.config['sweeps']:
            raise ConfigError(f"No sweep defaults for kind '{kind}'")
        return SweepSection(kind=kind, **self.config['sweeps'][kind])

    def run_fig3(self, resume: Optional[SystemState] = None) -> TransferRun:
        """Single transfer with snapshots and the end-to-end transfer record"""
        logger.info("=" * 60)
        logger.info("🚀 Starting transfer simulation")
        logger.info("=" * 60)

        cfg = self.scenario
        try:
            run = simulate_transfer(cfg, self.manager.runtime.species_file, initial_state=resume)
        except GuardTripError as e:
            state = (e.context or {}).get('state')
            if state is not None:
                path = save_state(state, self.out_dir / 'guard_trip_state.npz')
                logger.error(f"❌ Guard trip at t={e.t:.6g}; state saved to {path}")
            raise

        scales = describe_scales(run.sim)
        logger.info("📊 Transfer results:")
        logger.info(f"   • x0 = {scales['x0_m']:.4e} m, T_Rabi = {scales['t_rabi_s']:.4e} s")
        logger.info(f"   • eta = {run.transfer.eta:.6f} (|beta| = {run.transfer.beta_abs:.6f})")
        logger.info(f"   • T_q = {run.transfer.T_q:.4f}, V_q = {run.transfer.V_q:.4e}")
        logger.info(f"   • Output centroid {run.output_centroid():.4e} m, receiver at {cfg.trap.x_recv:.4e} m")
        logger.info(f"   • Commutator {run.commutator:.9f}, {run.trajectory.steps} steps in {run.wall_time:.1f} s")

        if self.config.get('checkpoint_snapshots'):
            for index, state in enumerate(run.snapshots):
                save_state(state, self.out_dir / 'checkpoints' / f'snapshot_{index}.npz')

        emit_outputs(self.out_dir, self.formats, transfer=run.transfer, snapshots=run.snapshots,
                     sim=run.sim, metadata=self._metadata())
        logger.info("✅ Transfer simulation completed")
        return run

    def run_sweep(self, kind: Optional[str] = None) -> List[SweepPointResult]:
        """One transfer per sweep point, rows ordered by parameter value"""
        spec = self.sweep_spec(kind)
        values2 = spec.values2() if spec.kind == 'rabi2d' else [None]
        if spec.kind == 'rabi2d' and not values2:
            raise ConfigError("A rabi2d sweep needs start2, stop2 and points2")
        points = [(v, v2) for v in spec.values() for v2 in values2]

        logger.info("=" * 60)
        logger.info(f"🚀 Starting {spec.kind} sweep over {len(points)} points ({self.threads} worker(s))")
        logger.info("=" * 60)

        raw = self.scenario.model_dump(mode='json')
        species_file = self.manager.runtime.species_file
        if self.threads > 1:
            with ProcessPoolExecutor(max_workers=self.threads) as pool:
                futures = [pool.submit(run_sweep_point, raw, spec.kind, v, v2, species_file) for v, v2 in points]
                results = [future.result() for future in futures]
        else:
            results = [run_sweep_point(raw, spec.kind, v, v2, species_file) for v, v2 in points]

        results.sort(key=lambda p: (p.parameter, p.parameter2 if p.parameter2 is not None else 0.0))
        for point in results:
            if point.transfer is not None:
                logger.info(f"   • {spec.kind}={point.parameter:.4g}: T_q={point.transfer.T_q:.4f}, "
                            f"V_q={point.transfer.V_q:.4e} ({point.wall_time:.1f} s)")

        failed = sum(1 for p in results if p.error)
        if failed:
            logger.warning(f"⚠️ {failed} of {len(results)} sweep points failed")

        emit_outputs(self.out_dir, self.formats, sweeps={spec.kind: results})
        logger.info(f"✅ Sweep {spec.kind} completed")
        return results

    def run_losses(self, include_trajectory: bool = False) -> Dict[str, Any]:
        report = loss_report(self.scenario, self.manager.runtime.species_file,
                             self.config.get('loss_species', ()), include_trajectory)
        print(format_loss_table(loss_rows(report)))
        emit_outputs(self.out_dir, self.formats, losses=report)
        return report

    def run_scenario(self, resume: Optional[SystemState] = None):
        """Dispatch on the scenario name"""
        name = self.scenario.scenario.name
        if name == 'sweep-rabi':
            return self.run_sweep('rabi')
        if name == 'sweep-dn':
            return self.run_sweep('dn')
        if name == 'loss-report':
            return self.run_losses()
        if name == 'custom' and self.scenario.scenario.sweep is not None:
            return self.run_sweep()
        return self.run_fig3(resume)
