"""
Coupled envelope dynamics of the atom-laser beam, the optical probe and the
two station condensates on one cascaded domain.

Equations in oscillator units (beam envelope carrier K = 2 k0 x0, probe 3 k0):
    i dpsi/dt = ((k + K)^2 - K^2)/2 psi - Omega_C(x) E
    i dE/dt   = -i c dE/dx + s(x) E - conj(Omega_C(x)) psi
with s(x) the probe light shift plus the residual detuning constant. The
uniform atomic light shift and carrier constants are rotating-frame phases.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid

from services.errors import ConfigError, GuardTripError, OutputError
from services.fields import ComplexField, FieldKind, Grid1D, SpectralWorkspace, gaussian_envelope, require_same_grid
from services.units import (
    CODATA,
    SUPPORT_HALF_WIDTH,
    AtomSpecies,
    BeamConfig,
    OpticalConfig,
    PhysicalConfig,
    PhysicalConstants,
    SimConfig,
    TrapConfig,
    check_adiabatic,
    condensate_peak,
    coupling_g13,
    derive_beam_velocity,
    derive_rabi_period,
    oscillator_length,
)

logger = logging.getLogger(__name__)

STEP_ACCURACY_LIMIT = 0.05


class OpticalSolver(str, Enum):
    QUASISTATIC = 'quasistatic'
    DYNAMIC = 'dynamic'


class OpticalBoundary(str, Enum):
    OPEN = 'open'
    PERIODIC = 'periodic'


class CondensateMode(str, Enum):
    FROZEN = 'frozen'
    DYNAMIC = 'dynamic'


@dataclass(frozen=True)
class IntegratorConfig:
    """Time stepping options. All times in oscillator units."""
    dt: float
    optical_solver: OpticalSolver = OpticalSolver.QUASISTATIC
    reduced_c_factor: float = 1e-6
    optical_boundary: OpticalBoundary = OpticalBoundary.OPEN
    condensate_mode: CondensateMode = CondensateMode.FROZEN
    snapshot_times: Tuple[float, ...] = ()
    occupation_scale: float = 1.0
    guard_threshold: float = 1e-6
    guard_cells: int = 8

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("Time step dt must be positive")
        if not 0 < self.reduced_c_factor <= 1:
            raise ConfigError("reduced_c_factor must lie in (0, 1]")
        if not self.guard_threshold > 0:
            raise ConfigError("guard_threshold must be positive")
        object.__setattr__(self, 'optical_solver', OpticalSolver(self.optical_solver))
        object.__setattr__(self, 'optical_boundary', OpticalBoundary(self.optical_boundary))
        object.__setattr__(self, 'condensate_mode', CondensateMode(self.condensate_mode))
        object.__setattr__(self, 'snapshot_times', tuple(sorted(self.snapshot_times)))

    def reduced_light_speed(self, grid: Grid1D, light_speed: float) -> float:
        """
        Light speed of the dynamic solver, rounded so that one nominal step
        advects the probe by a whole number of cells.
        """
        cells = max(1, int(round(self.reduced_c_factor * light_speed * self.dt / grid.dx)))
        return cells * grid.dx / self.dt


@dataclass(frozen=True)
class ControlCalibration:
    """Control amplitude giving a quarter Rabi cycle over one condensate crossing"""
    omega23: float
    omega_c_peak: float
    effective_rabi_frequency: float
    ratio: float
    t_rabi: float


@dataclass(frozen=True, eq=False)
class StationCoupling:
    name: str
    center: float
    omega23: float
    mask: np.ndarray
    span: slice


@dataclass(frozen=True, eq=False)
class CouplingProfile:
    """Effective two-photon coupling and light shifts on the shared grid"""
    grid: Grid1D
    Omega_C: np.ndarray
    light_shift_atom: float
    light_shift_probe: np.ndarray
    detuning_const: float
    light_speed: float
    g13: float
    delta: float
    stations: Tuple[StationCoupling, ...]

    @cached_property
    def probe_diagonal(self) -> np.ndarray:
        return self.light_shift_probe + self.detuning_const

    @cached_property
    def probe_phase(self) -> np.ndarray:
        """exp(i Theta(x) / c) with Theta the running integral of the probe diagonal"""
        theta = cumulative_trapezoid(self.probe_diagonal, dx=self.grid.dx, initial=0.0)
        return np.exp(1j * theta / self.light_speed)

    def station(self, name: str) -> StationCoupling:
        for st in self.stations:
            if st.name == name:
                return st
        raise KeyError(name)

    def with_condensates(self, phi_send: ComplexField, phi_recv: ComplexField) -> 'CouplingProfile':
        """Recompute the profile after the condensates changed"""
        return _assemble_coupling(
            phi_send, phi_recv,
            [(st.name, st.center, st.omega23) for st in self.stations],
            self.g13, self.delta, self.light_speed, self.detuning_const, self.light_shift_atom,
        )


@dataclass(frozen=True)
class SystemState:
    """Beam, probe and condensate envelopes at time t. E is stored divided by optical_scale."""
    psi: ComplexField
    E: ComplexField
    phi_send: ComplexField
    phi_recv: ComplexField
    t: float = 0.0
    radiated: float = 0.0
    optical_scale: float = 1.0

    def __post_init__(self):
        for other in (self.E, self.phi_send, self.phi_recv):
            require_same_grid(self.psi, other, match_content=False)

    @property
    def grid(self) -> Grid1D:
        return self.psi.grid

    def quanta(self) -> float:
        """Beam plus probe quanta plus everything that left through the boundary"""
        return self.psi.norm() + self.E.norm() + self.radiated

    def physical_probe(self) -> np.ndarray:
        return self.optical_scale * self.E.values


@dataclass
class Trajectory:
    final: SystemState
    coupling: 'CouplingProfile'
    snapshots: List[SystemState] = field(default_factory=list)
    steps: int = 0


Observer = Callable[[SystemState, CouplingProfile], None]


def calibrate_control(species: AtomSpecies, trap: TrapConfig, beam: BeamConfig, optical: OpticalConfig,
                      constants: PhysicalConstants = CODATA) -> ControlCalibration:
    """
    Control Rabi frequency Omega23 for a quarter Rabi cycle per crossing.

    The probe escapes at c while the atoms move at v, so across a station the
    flux-normalised fields rotate at the local rate |Omega_C| / sqrt(v c).
    A quarter cycle is a rotation of pi/2, i.e. int |Omega_C| dx = (pi/2) sqrt(v c).
    The resulting effective two-photon Rabi frequency is 2 pi / T_Rabi.
    """
    omega_t = trap.angular_frequency
    x0 = oscillator_length(species, omega_t, constants)
    v = derive_beam_velocity(species, beam.k0, constants)
    c = constants.c

    crossing_integral = math.sqrt(2 * math.pi) * x0
    omega_c_peak = (math.pi / 2) * math.sqrt(v * c) / crossing_integral

    omega_k = optical.omega0 if optical.omega0 is not None else c * beam.k0
    g13 = coupling_g13(species, omega_k, optical.waist, constants)
    if g13 == 0:
        raise ConfigError("Zero atom-probe coupling cannot be calibrated")

    phi_peak = condensate_peak(trap.N0, x0)
    omega23 = omega_c_peak * optical.Delta / (phi_peak * g13)
    ratio = check_adiabatic(omega23, optical.Delta)

    calibration = ControlCalibration(
        omega23=omega23,
        omega_c_peak=omega_c_peak,
        effective_rabi_frequency=math.sqrt(v / c) * omega_c_peak * crossing_integral / x0,
        ratio=ratio,
        t_rabi=derive_rabi_period(species, omega_t, beam.k0, constants),
    )
    logger.debug(
        f"Calibrated control: Omega23={omega23:.4e} rad/s, |Omega23/Delta|={ratio:.3e}, "
        f"Omega_C peak={omega_c_peak:.4e} 1/s"
    )
    return calibration


def with_calibrated_control(config: PhysicalConfig) -> PhysicalConfig:
    """Fill in Omega23 from the quarter-cycle calibration unless it is already set"""
    if config.optical.Omega23 is not None:
        return config
    calibration = calibrate_control(config.species, config.trap, config.beam, config.optical, config.constants)
    return replace(config, optical=replace(config.optical, Omega23=calibration.omega23))


def condensate_ground_state(grid: Grid1D, center: float, atoms: float) -> ComplexField:
    """Harmonic ground state holding `atoms` atoms, zero beyond the support half-width"""
    offset = grid.x - center
    mask = np.abs(offset) <= SUPPORT_HALF_WIDTH
    shape = np.where(mask, np.exp(-offset ** 2 / 2), 0.0).astype(np.complex128)
    norm = np.vdot(shape, shape).real * grid.dx
    if norm == 0:
        raise ConfigError(f"Station at {center:.4g} lies outside the grid")
    shape *= math.sqrt(atoms / norm)
    return ComplexField(grid, shape, 0.0, FieldKind.CONDENSATE)


def build_initial_state(sim: SimConfig, grid: Grid1D, envelope: Optional[ComplexField] = None) -> SystemState:
    """
    Condensate ground states at both stations, the input pulse approaching
    the sender and an empty probe.
    """
    if sim.x_recv - sim.x_send <= 2 * SUPPORT_HALF_WIDTH:
        raise ConfigError(
            f"Stations {sim.x_recv - sim.x_send:.3g} x0 apart: condensate supports overlap "
            f"(need more than {2 * SUPPORT_HALF_WIDTH:g})"
        )
    for center in (sim.x_send, sim.x_recv):
        if center - SUPPORT_HALF_WIDTH < grid.x_min or center + SUPPORT_HALF_WIDTH >= grid.x_max:
            raise ConfigError(f"Station at {center:.4g} x0 does not fit inside the grid")

    if envelope is None:
        psi = gaussian_envelope(grid, sim.pulse_center, sim.pulse_width, math.sqrt(sim.n0),
                                carrier=sim.carrier, kind=FieldKind.ATOMIC_BEAM)
    else:
        if envelope.grid != grid:
            raise ConfigError("Supplied envelope lives on a different grid")
        psi = ComplexField(grid, envelope.values, sim.carrier, FieldKind.ATOMIC_BEAM)

    return SystemState(
        psi=psi,
        E=ComplexField.zeros(grid, sim.probe_carrier, FieldKind.OPTICAL_PROBE),
        phi_send=condensate_ground_state(grid, sim.x_send, sim.N_send),
        phi_recv=condensate_ground_state(grid, sim.x_recv, sim.N_recv),
    )


def build_coupling(phi_send: ComplexField, phi_recv: ComplexField, sim: SimConfig,
                   omega23: Optional[float] = None) -> CouplingProfile:
    """
    Omega_C(x) = phi(x) conj(Omega23) g13 / Delta summed over stations, each
    station using its own Rabi ratio. omega23 is in oscillator units.
    """
    if omega23 is None:
        omega23 = sim.omega23
    if omega23 is None:
        physical = sim.physical
        calibration = calibrate_control(physical.species, physical.trap, physical.beam,
                                        physical.optical, physical.constants)
        omega23 = sim.scaling.to_sim(calibration.omega23, 'rate')

    optical = sim.physical.optical
    stations = [
        ('send', sim.x_send, optical.rabi_ratio_send * omega23),
        ('recv', sim.x_recv, optical.rabi_ratio_recv * omega23),
    ]
    light_shift_atom = -abs(omega23) ** 2 / sim.delta
    return _assemble_coupling(phi_send, phi_recv, stations, sim.g13, sim.delta, sim.light_speed,
                              sim.two_photon_detuning, light_shift_atom)


def _assemble_coupling(phi_send, phi_recv, stations, g13, delta, light_speed, detuning, light_shift_atom):
    require_same_grid(phi_send, phi_recv)
    grid = phi_send.grid
    omega_c = np.zeros(grid.n, dtype=np.complex128)
    light_shift_probe = np.zeros(grid.n)
    entries = []

    for (name, center, omega23), phi in zip(stations, (phi_send, phi_recv)):
        mask = np.abs(grid.x - center) <= SUPPORT_HALF_WIDTH
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            raise ConfigError(f"Station '{name}' at {center:.4g} x0 has no grid support")
        values = np.where(mask, phi.values, 0.0)
        omega_c += values * np.conj(omega23) * g13 / delta
        light_shift_probe -= np.abs(values) ** 2 * g13 ** 2 / delta
        entries.append(StationCoupling(name, center, omega23, mask, slice(int(idx[0]), int(idx[-1]) + 1)))

    return CouplingProfile(
        grid=grid,
        Omega_C=omega_c,
        light_shift_atom=light_shift_atom,
        light_shift_probe=light_shift_probe,
        detuning_const=detuning,
        light_speed=light_speed,
        g13=g13,
        delta=delta,
        stations=tuple(entries),
    )


def coupling_step_rate(coupling: CouplingProfile, config: IntegratorConfig) -> float:
    """Dimensionless coupling phase per step; must stay below STEP_ACCURACY_LIMIT"""
    grid = coupling.grid
    if config.optical_solver is OpticalSolver.QUASISTATIC:
        return config.dt * float(np.sum(np.abs(coupling.Omega_C) ** 2)) * grid.dx / coupling.light_speed
    c_eff = config.reduced_light_speed(grid, coupling.light_speed)
    cells = max(1, int(round(c_eff * config.dt / grid.dx)))
    scale = math.sqrt(c_eff / coupling.light_speed)
    return config.dt / cells * scale * float(np.max(np.abs(coupling.Omega_C), initial=0.0))


def effective_rabi_frequency(coupling: CouplingProfile, station: str, velocity: float) -> float:
    """
    Two-photon Rabi frequency sqrt(v / c) * int |Omega_C| dx over one station
    (oscillator units). A calibrated station gives 2 pi / T_Rabi.
    """
    try:
        st = coupling.station(station)
    except KeyError:
        raise ConfigError(f"Unknown station '{station}', expected one of "
                          f"{[s.name for s in coupling.stations]}")
    crossing = float(np.sum(np.abs(coupling.Omega_C[st.mask]))) * coupling.grid.dx
    return math.sqrt(velocity / coupling.light_speed) * crossing


def solve_optical_quasistatic(state: SystemState, coupling: CouplingProfile) -> ComplexField:
    """Probe slaved to the beam: c dE/dx = i conj(Omega_C) psi - i s(x) E with E = 0 inflow"""
    values, _ = _probe_from_source(state.psi.values, coupling)
    return state.E.with_values(values)


def _probe_from_source(psi: np.ndarray, coupling: CouplingProfile) -> Tuple[np.ndarray, complex]:
    # E = exp(-i Theta / c) F; the half-weight on the current cell makes the
    # discrete flux balance d/dt sum|psi|^2 dx = -c |E_out|^2 exact.
    phase = coupling.probe_phase
    source = phase * np.conj(coupling.Omega_C) * psi
    scale = 1j * coupling.grid.dx / coupling.light_speed
    running = np.cumsum(source) - 0.5 * source
    return np.conj(phase) * scale * running, scale * source.sum()


def _quasistatic_coupling(psi: np.ndarray, coupling: CouplingProfile, dt: float) -> Tuple[np.ndarray, float]:
    """RK4 of dpsi/dt = i Omega_C E[psi]; returns the new beam and the quanta radiated"""
    omega_c, c = coupling.Omega_C, coupling.light_speed

    def rate(p):
        probe, outflow = _probe_from_source(p, coupling)
        return 1j * omega_c * probe, c * abs(outflow) ** 2

    k1, q1 = rate(psi)
    k2, q2 = rate(psi + 0.5 * dt * k1)
    k3, q3 = rate(psi + 0.5 * dt * k2)
    k4, q4 = rate(psi + dt * k3)
    psi = psi + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return psi, dt / 6 * (q1 + 2 * q2 + 2 * q3 + q4)


class _LocalRotation:
    """Exact exp(-i H t) of the pointwise 2x2 beam/probe system on the coupled cells"""

    def __init__(self, coupling: CouplingProfile, epsilon: float):
        if coupling.detuning_const != 0:
            spans = [slice(None)]
        else:
            spans = [st.span for st in coupling.stations]
        root = math.sqrt(epsilon)
        self.spans = spans
        self.terms = [(root * coupling.Omega_C[s], epsilon * coupling.probe_diagonal[s]) for s in spans]
        self._cache: Dict[float, list] = {}

    def matrices(self, t: float) -> list:
        if t not in self._cache:
            blocks = []
            for omega, b in self.terms:
                m, d = 0.5 * b, -0.5 * b
                lam = np.sqrt(d * d + np.abs(omega) ** 2)
                cos = np.cos(lam * t)
                s = t * np.sinc(lam * t / np.pi)
                ph = np.exp(-1j * m * t)
                blocks.append((ph * (cos - 1j * s * d), ph * (1j * s * omega),
                               ph * (1j * s * np.conj(omega)), ph * (cos + 1j * s * d)))
            self._cache[t] = blocks
        return self._cache[t]

    def apply(self, psi: np.ndarray, probe: np.ndarray, blocks: list):
        for span, (u00, u01, u10, u11) in zip(self.spans, blocks):
            p, e = psi[span], probe[span]
            new_p = u00 * p + u01 * e
            new_e = u10 * p + u11 * e
            psi[span] = new_p
            probe[span] = new_e


def _dynamic_optics(psi: np.ndarray, probe: np.ndarray, coupling: CouplingProfile,
                    config: IntegratorConfig, dt: float, c_eff: float) -> float:
    """
    Reduced-c optical transport: c -> eps c, Omega_C -> sqrt(eps) Omega_C and
    s -> eps s keep Omega_C^2 / c and the probe phase per length unchanged.
    Each substep advects the probe by exactly one cell. Updates in place and
    returns the quanta that left through the right boundary.
    """
    dx = coupling.grid.dx
    cells = max(1, int(round(c_eff * dt / dx)))
    dt_sub = dt / cells
    rotation = _LocalRotation(coupling, c_eff / coupling.light_speed)
    half, full = rotation.matrices(dt_sub / 2), rotation.matrices(dt_sub)
    open_boundary = config.optical_boundary is OpticalBoundary.OPEN

    radiated = 0.0
    rotation.apply(psi, probe, half)
    for i in range(cells):
        last = probe[-1]
        probe[1:] = probe[:-1]
        if open_boundary:
            radiated += abs(last) ** 2 * dx
            probe[0] = 0.0
        else:
            probe[0] = last
        rotation.apply(psi, probe, full if i < cells - 1 else half)
    return radiated


def _beam_kinetic(workspace: SpectralWorkspace, carrier: float, tau: float) -> np.ndarray:
    # ((k + K)^2 - K^2) / 2: dispersion plus exact advection at the group velocity K
    return workspace.propagator(('beam', carrier, tau),
                                lambda k: np.exp(-0.5j * (k * k + 2 * carrier * k) * tau))


def condensate_correlators(state: SystemState, occupation_scale: float) -> Tuple[np.ndarray, np.ndarray]:
    """<E^dag psi>(x) and <E^dag E>(x) for the tracked mode times its occupation"""
    probe = state.physical_probe()
    return (occupation_scale * np.conj(probe) * state.psi.values,
            occupation_scale * np.abs(probe) ** 2)


def step_condensate(state: SystemState, coupling: CouplingProfile, config: IntegratorConfig,
                    workspace: Optional[SpectralWorkspace] = None, dt: Optional[float] = None,
                    previous: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Tuple[ComplexField, ComplexField]:
    """
    Advance both condensates by dt: split-step trap and kinetic terms plus the
    probe light shift, and the beam-probe correlator as a source. `previous`
    holds the correlators at the start of the step (trapezoidal source).
    Frozen mode returns the condensates unchanged.
    """
    if config.condensate_mode is CondensateMode.FROZEN:
        return state.phi_send, state.phi_recv

    dt = config.dt if dt is None else dt
    grid = state.grid
    workspace = workspace or SpectralWorkspace(grid)
    kinetic = workspace.propagator(('condensate', dt), lambda k: np.exp(-0.5j * k * k * dt))

    cross, intensity = condensate_correlators(state, config.occupation_scale)
    source = cross if previous is None else 0.5 * (cross + previous[0])
    light_shift = -coupling.g13 ** 2 / coupling.delta * intensity

    updated = []
    for st, phi in zip(coupling.stations, (state.phi_send, state.phi_recv)):
        # Ground-state energy 1/2 is a rotating-frame constant
        potential = 0.5 * (grid.x - st.center) ** 2 - 0.5 + light_shift
        half = np.exp(-0.5j * potential * dt)
        values = half * phi.values
        values = workspace.apply(values, kinetic)
        values = half * values
        kappa = coupling.g13 * st.omega23 / coupling.delta
        values = values + 1j * kappa * dt * source
        updated.append(phi.with_values(np.where(st.mask, values, 0.0)))
    return updated[0], updated[1]


def step(state: SystemState, coupling: CouplingProfile, config: IntegratorConfig,
         workspace: Optional[SpectralWorkspace] = None, dt: Optional[float] = None,
         guard_reference: Optional[float] = None) -> SystemState:
    """
    One Strang step: half kinetic, local coupling with optical transport for
    the full step, half kinetic, then the condensates.
    """
    dt = config.dt if dt is None else dt
    grid = state.grid
    workspace = workspace or SpectralWorkspace(grid)
    half_kinetic = _beam_kinetic(workspace, state.psi.carrier, dt / 2)
    dynamic_condensate = config.condensate_mode is CondensateMode.DYNAMIC
    previous = condensate_correlators(state, config.occupation_scale) if dynamic_condensate else None

    psi = workspace.apply(state.psi.values, half_kinetic)
    if config.optical_solver is OpticalSolver.QUASISTATIC:
        psi, radiated = _quasistatic_coupling(psi, coupling, dt)
        psi = workspace.apply(psi, half_kinetic)
        probe, _ = _probe_from_source(psi, coupling)
        optical_scale = 1.0
    else:
        c_eff = config.reduced_light_speed(grid, coupling.light_speed)
        optical_scale = math.sqrt(c_eff / coupling.light_speed)
        probe = state.E.values * (state.optical_scale / optical_scale)
        radiated = _dynamic_optics(psi, probe, coupling, config, dt, c_eff)
        psi = workspace.apply(psi, half_kinetic)

    new_state = SystemState(
        psi=state.psi.with_values(psi),
        E=state.E.with_values(probe),
        phi_send=state.phi_send,
        phi_recv=state.phi_recv,
        t=state.t + dt,
        radiated=state.radiated + radiated,
        optical_scale=optical_scale,
    )

    if dynamic_condensate:
        phi_send, phi_recv = step_condensate(new_state, coupling, config, workspace, dt, previous)
        new_state = replace(new_state, phi_send=phi_send, phi_recv=phi_recv)

    _check_guards(new_state, config, guard_reference)
    return new_state


def _check_guards(state: SystemState, config: IntegratorConfig, reference: Optional[float]):
    psi = state.psi.values
    if not (np.all(np.isfinite(psi)) and np.all(np.isfinite(state.E.values))):
        raise GuardTripError(f"Non-finite field values at t={state.t:.6g}", state.t, {'state': state})

    reference = float(np.max(np.abs(psi))) if reference is None else reference
    if reference <= 0:
        return
    m = config.guard_cells
    edge = max(float(np.max(np.abs(psi[:m]))), float(np.max(np.abs(psi[-m:]))))
    if edge > config.guard_threshold * reference:
        raise GuardTripError(
            f"Beam amplitude {edge / reference:.3e} of peak reached the domain boundary at t={state.t:.6g}; "
            f"enlarge the guard bands",
            state.t,
            {'boundary_amplitude': edge, 'reference_peak': reference, 'state': state},
        )


def evolve(state: SystemState, t_final: float, coupling: CouplingProfile, config: IntegratorConfig,
           observers: Iterable[Observer] = (), workspace: Optional[SpectralWorkspace] = None) -> Trajectory:
    """
    Step to t_final, landing exactly on every requested snapshot time.
    Deterministic: identical inputs give bit-identical outputs.
    """
    if t_final < state.t:
        raise ConfigError(f"t_final={t_final:.6g} precedes the current time {state.t:.6g}")

    rate = coupling_step_rate(coupling, config)
    if rate >= STEP_ACCURACY_LIMIT:
        raise ConfigError(
            f"Coupling phase per step {rate:.3g} exceeds {STEP_ACCURACY_LIMIT}; reduce dt"
        )
    if config.optical_solver is OpticalSolver.DYNAMIC:
        c_eff = config.reduced_light_speed(state.grid, coupling.light_speed)
        logger.info(
            f"🔦 Reduced light speed: reduced_c_factor {config.reduced_c_factor:.6g} adjusted to "
            f"{c_eff / coupling.light_speed:.6g} ({int(round(c_eff * config.dt / state.grid.dx))} cells per step)"
        )

    observers = list(observers)
    workspace = workspace or SpectralWorkspace(state.grid)
    reference = state.psi.peak()
    tolerance = 1e-9 * config.dt

    snapshot_times = [t for t in config.snapshot_times if state.t - tolerance <= t <= t_final + tolerance]
    trajectory = Trajectory(final=state, coupling=coupling)
    if snapshot_times and abs(snapshot_times[0] - state.t) <= tolerance:
        trajectory.snapshots.append(state)
        snapshot_times = snapshot_times[1:]

    targets = sorted(set(snapshot_times) | {t_final})
    current = state
    for target in targets:
        while target - current.t > tolerance:
            remaining = target - current.t
            dt = config.dt if remaining >= config.dt - tolerance else remaining
            current = step(current, coupling, config, workspace, dt, reference)
            trajectory.steps += 1
            if config.condensate_mode is CondensateMode.DYNAMIC:
                coupling = coupling.with_condensates(current.phi_send, current.phi_recv)
            for observer in observers:
                observer(current, coupling)
        current = replace(current, t=target)
        if target in snapshot_times:
            trajectory.snapshots.append(current)
            logger.info(f"📸 Snapshot at t={target:.6g} (beam {current.psi.norm():.6g}, "
                        f"radiated {current.radiated:.6g})")

    trajectory.final = current
    trajectory.coupling = coupling
    logger.debug(f"Evolved {trajectory.steps} steps to t={current.t:.6g}")
    return trajectory


def excited_population(state: SystemState, coupling: CouplingProfile, station: Optional[str] = None) -> float:
    """
    Adiabatically eliminated excited-state number.

    The control term (Omega23/Delta)^2 |psi|^2 is weighted by each station's
    condensate density relative to its peak (the region the control laser
    illuminates); the probe term g13^2 |E|^2 |phi|^2 / Delta^2 is added.
    """
    dx = state.grid.dx
    beam_density = np.abs(state.psi.values) ** 2
    probe_density = np.abs(state.physical_probe()) ** 2
    total = 0.0
    for st, phi in zip(coupling.stations, (state.phi_send, state.phi_recv)):
        if station is not None and st.name != station:
            continue
        density = np.abs(phi.values) ** 2
        peak = density.max()
        if peak == 0:
            continue
        ratio = st.omega23 / coupling.delta
        total += abs(ratio) ** 2 * float(np.dot(beam_density, density / peak)) * dx
        total += coupling.g13 ** 2 / coupling.delta ** 2 * float(np.dot(probe_density, density)) * dx
    return total


class ConservationMonitor:
    """Observer recording the quanta ledger after every step"""

    def __init__(self):
        self.times: List[float] = []
        self.beam: List[float] = []
        self.probe: List[float] = []
        self.radiated: List[float] = []

    def __call__(self, state: SystemState, coupling: CouplingProfile):
        self.times.append(state.t)
        self.beam.append(state.psi.norm())
        self.probe.append(state.E.norm())
        self.radiated.append(state.radiated)

    @property
    def totals(self) -> np.ndarray:
        return np.array(self.beam) + np.array(self.probe) + np.array(self.radiated)


class ExcitedPopulationMonitor:
    """Observer recording the excited-state number per station"""

    def __init__(self):
        self.times: List[float] = []
        self.send: List[float] = []
        self.recv: List[float] = []

    def __call__(self, state: SystemState, coupling: CouplingProfile):
        self.times.append(state.t)
        self.send.append(excited_population(state, coupling, 'send'))
        self.recv.append(excited_population(state, coupling, 'recv'))


def save_state(state: SystemState, path: Union[str, Path]) -> Path:
    """Write a resumable snapshot (.npz, bit-exact)"""
    path = Path(path)
    g = state.grid
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(
            path,
            grid=np.array([g.x_min, g.x_max, g.n], dtype=float),
            psi=state.psi.values, E=state.E.values,
            phi_send=state.phi_send.values, phi_recv=state.phi_recv.values,
            carriers=np.array([state.psi.carrier, state.E.carrier]),
            scalars=np.array([state.t, state.radiated, state.optical_scale]),
        )
    except OSError as e:
        raise OutputError(f"Failed to save state to {path}: {e}", str(path))
    return path


def load_state(path: Union[str, Path]) -> SystemState:
    path = Path(path)
    try:
        data = np.load(path)
    except OSError as e:
        raise OutputError(f"Failed to load state from {path}: {e}", str(path))

    with data:
        x_min, x_max, n = data['grid']
        grid = Grid1D(float(x_min), float(x_max), int(n))
        beam_carrier, probe_carrier = data['carriers']
        t, radiated, optical_scale = data['scalars']
        return SystemState(
            psi=ComplexField(grid, data['psi'], float(beam_carrier), FieldKind.ATOMIC_BEAM),
            E=ComplexField(grid, data['E'], float(probe_carrier), FieldKind.OPTICAL_PROBE),
            phi_send=ComplexField(grid, data['phi_send'], 0.0, FieldKind.CONDENSATE),
            phi_recv=ComplexField(grid, data['phi_recv'], 0.0, FieldKind.CONDENSATE),
            t=float(t),
            radiated=float(radiated),
            optical_scale=float(optical_scale),
        )
