"""
Physical parameters, derived scales and simulation units.

All user-facing quantities are SI. The simulation works in harmonic-oscillator
units of the trap: lengths in x0 = sqrt(hbar / (m omega_t)), times in
t0 = 1 / omega_t, and field amplitudes in 1 / sqrt(x0) so that the integral of
|psi|^2 over x is a particle number.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import scipy.constants as const

from services.errors import ConfigError

logger = logging.getLogger(__name__)

SPECIES_FILE = Path(__file__).parent.parent / 'config' / 'species.json'

# Condensate support half-width in oscillator lengths
SUPPORT_HALF_WIDTH = 6.0

ADIABATIC_LIMIT = 0.25


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA constants used by the model"""
    hbar: float = const.hbar
    c: float = const.c
    eps0: float = const.epsilon_0

    def __post_init__(self):
        for name in ('hbar', 'c', 'eps0'):
            if getattr(self, name) <= 0:
                raise ConfigError(f"Physical constant {name} must be positive")


CODATA = PhysicalConstants()


@dataclass(frozen=True)
class AtomSpecies:
    """Atomic species data. The scattering length is only used by the phase-diffusion estimate."""
    name: str
    mass: float
    dipole_d13: float
    scattering_length: Optional[float] = None
    d_line_wavenumber: Optional[float] = None
    natural_linewidth: Optional[float] = None
    raman_velocity: Optional[float] = None

    def __post_init__(self):
        if self.mass <= 0:
            raise ConfigError(f"{self.name}: mass must be positive")
        if self.dipole_d13 < 0:
            raise ConfigError(f"{self.name}: dipole moment must be non-negative")
        if self.scattering_length is not None and self.scattering_length < 0:
            raise ConfigError(f"{self.name}: negative scattering length is not supported")


@dataclass(frozen=True)
class TrapConfig:
    """Condensate traps at the sending and receiving stations"""
    omega_t: float = 5.0
    N0: float = 1e6
    x_send: float = -5e-4
    x_recv: float = 5e-4
    number_imbalance: float = 0.0
    omega_t_is_hz: bool = False

    def __post_init__(self):
        if self.omega_t <= 0:
            raise ConfigError("Trap frequency omega_t must be positive")
        if self.N0 <= 0:
            raise ConfigError("Condensate atom number N0 must be positive")
        if self.x_recv <= self.x_send:
            raise ConfigError("Receiver must sit downstream of the sender (x_recv > x_send)")
        if not -1.0 < self.number_imbalance < 1.0:
            raise ConfigError("Number imbalance must lie in (-1, 1)")

    @property
    def angular_frequency(self) -> float:
        """Trap frequency in rad/s, honouring the Hz switch"""
        return 2 * math.pi * self.omega_t if self.omega_t_is_hz else self.omega_t

    @property
    def N_send(self) -> float:
        return self.N0 * (1.0 + self.number_imbalance)

    @property
    def N_recv(self) -> float:
        return self.N0 * (1.0 - self.number_imbalance)


@dataclass(frozen=True)
class BeamConfig:
    """Input atom-laser pulse. Centre and width default from the trap geometry when None."""
    n0: float = 5e3
    k0: float = 8e6
    envelope_center: Optional[float] = None
    envelope_width: Optional[float] = None
    V_X: float = math.exp(-2.0)
    V_Y: float = math.exp(2.0)

    def __post_init__(self):
        if self.n0 <= 0:
            raise ConfigError("Input pulse atom number n0 must be positive")
        if self.k0 <= 0:
            raise ConfigError("Optical wavevector k0 must be positive")
        if self.envelope_width is not None and self.envelope_width <= 0:
            raise ConfigError("Pulse envelope width must be positive")
        if self.V_X <= 0 or self.V_Y <= 0:
            raise ConfigError("Quadrature variances must be positive")
        if self.V_X * self.V_Y < 1.0 - 1e-3:
            raise ConfigError(f"V_X * V_Y = {self.V_X * self.V_Y:.4f} violates the uncertainty bound")


@dataclass(frozen=True)
class OpticalConfig:
    """Control laser and probe transition. Omega23 = None means calibrate to a quarter Rabi cycle."""
    Omega23: Optional[float] = None
    Delta: float = 2 * math.pi * 1e9
    omega0: Optional[float] = None
    waist: float = 1e-4
    rabi_ratio_send: float = 1.0
    rabi_ratio_recv: float = 1.0
    two_photon_detuning: float = 0.0

    def __post_init__(self):
        if self.Delta == 0:
            raise ConfigError("Single-photon detuning Delta must be non-zero")
        if self.waist <= 0:
            raise ConfigError("Control laser waist must be positive")
        if self.omega0 is not None and self.omega0 <= 0:
            raise ConfigError("Transition frequency omega0 must be positive")
        if self.rabi_ratio_send < 0 or self.rabi_ratio_recv < 0:
            raise ConfigError("Rabi ratios must be non-negative")
        if self.Omega23 is not None:
            check_adiabatic(self.Omega23 * max(self.rabi_ratio_send, self.rabi_ratio_recv), self.Delta)

    @property
    def cross_section(self) -> float:
        return math.pi * self.waist ** 2 / 2


@dataclass(frozen=True)
class PhysicalConfig:
    species: AtomSpecies
    trap: TrapConfig = field(default_factory=TrapConfig)
    beam: BeamConfig = field(default_factory=BeamConfig)
    optical: OpticalConfig = field(default_factory=OpticalConfig)
    constants: PhysicalConstants = CODATA


# Conversion kinds: SI value = sim value * factor
SCALING_KINDS = ('length', 'time', 'rate', 'velocity', 'wavenumber', 'field', 'coupling', 'number')


@dataclass(frozen=True)
class SimScaling:
    """Oscillator-unit scales of one trap and species"""
    x0: float
    t0: float

    @property
    def factors(self) -> Dict[str, float]:
        x0, t0 = self.x0, self.t0
        return {
            'length': x0,
            'time': t0,
            'rate': 1.0 / t0,
            'velocity': x0 / t0,
            'wavenumber': 1.0 / x0,
            'field': 1.0 / math.sqrt(x0),
            # g13 carries s^-1 m^1/2 in the one-dimensional model
            'coupling': math.sqrt(x0) / t0,
            'number': 1.0,
        }

    def to_sim(self, value, kind: str):
        return value / self._factor(kind)

    def to_si(self, value, kind: str):
        return value * self._factor(kind)

    def _factor(self, kind: str) -> float:
        try:
            return self.factors[kind]
        except KeyError:
            raise ConfigError(f"Unknown unit kind '{kind}', expected one of {SCALING_KINDS}")


@dataclass(frozen=True)
class SimConfig:
    """Dimensionless model parameters derived from a PhysicalConfig"""
    physical: PhysicalConfig
    scaling: SimScaling
    carrier: float
    light_speed: float
    g13: float
    delta: float
    omega23: Optional[float]
    two_photon_detuning: float
    x_send: float
    x_recv: float
    pulse_center: float
    pulse_width: float
    n0: float
    N_send: float
    N_recv: float
    t_rabi: float

    @property
    def velocity(self) -> float:
        """Beam group velocity; equals the atomic carrier 2 k0 x0 in oscillator units"""
        return self.carrier

    @property
    def probe_carrier(self) -> float:
        return 1.5 * self.carrier

    @property
    def default_t_final(self) -> float:
        """Time for the pulse to travel from its start to the same offset past the receiver"""
        return (2 * SUPPORT_HALF_WIDTH + 10 * self.pulse_width) / self.velocity

    def default_snapshot_times(self, t_final: float) -> Tuple[float, ...]:
        """Approach, partial absorption, probe transit and the reconstructed pulse"""
        arrival = (self.x_send - self.pulse_center) / self.velocity
        half_width = 0.5 * self.pulse_width / self.velocity
        times = (0.0, arrival - half_width, arrival + half_width, t_final)
        return tuple(sorted(t for t in set(times) if 0.0 <= t <= t_final))

    def template_translation(self, t: float) -> float:
        """Ballistic displacement of a pulse re-emitted by the receiver after time t"""
        return self.velocity * t + (self.x_recv - self.x_send)


def load_species(name: str, path: Optional[Path] = None) -> AtomSpecies:
    """Look up a species in the shipped data file"""
    species_path = Path(path or os.getenv('TELEPORT_SPECIES_FILE') or SPECIES_FILE)
    try:
        with open(species_path, 'r') as f:
            table = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read species table {species_path}: {e}")

    if name not in table:
        raise ConfigError(f"Unknown species '{name}' (available: {', '.join(sorted(table))})")

    entry = {k: v for k, v in table[name].items() if k != 'sources'}
    entry.setdefault('name', name)
    return AtomSpecies(**entry)


def check_adiabatic(omega23: float, delta: float) -> float:
    ratio = abs(omega23 / delta)
    if ratio >= ADIABATIC_LIMIT:
        raise ConfigError(
            f"|Omega23/Delta| = {ratio:.3g} breaks adiabatic elimination (limit {ADIABATIC_LIMIT}); "
            f"increase the detuning Delta"
        )
    return ratio


def oscillator_length(species: AtomSpecies, omega_t: float, constants: PhysicalConstants = CODATA) -> float:
    return math.sqrt(constants.hbar / (species.mass * omega_t))


def derive_beam_velocity(species: AtomSpecies, k0: float, constants: PhysicalConstants = CODATA) -> float:
    """Two-photon recoil velocity 2 hbar k0 / m"""
    if k0 < 0:
        raise ConfigError("Wavevector k0 must be non-negative")
    return 2 * constants.hbar * k0 / species.mass


def derive_rabi_period(species: AtomSpecies, omega_t: float, k0: float,
                       constants: PhysicalConstants = CODATA) -> float:
    """
    Rabi period whose quarter equals the condensate crossing time.

    Returns 4 x0 / v_atom with x0 the trap oscillator length.
    """
    if omega_t <= 0:
        raise ConfigError("Trap frequency must be positive")
    if k0 <= 0:
        raise ConfigError("Wavevector k0 must be positive")
    return 4 * oscillator_length(species, omega_t, constants) / derive_beam_velocity(species, k0, constants)


def derive_rabi_frequency(t_rabi: float) -> float:
    if t_rabi <= 0:
        raise ConfigError("Rabi period must be positive")
    return 2 * math.pi / t_rabi


def coupling_g13(species: AtomSpecies, omega_k: float, waist: float,
                 constants: PhysicalConstants = CODATA) -> float:
    """Atom-probe coupling (d13/hbar) sqrt(hbar omega_k / (2 eps0 A)), A = pi waist^2 / 2"""
    if omega_k <= 0:
        raise ConfigError("Probe frequency must be positive")
    if waist <= 0:
        raise ConfigError("Waist must be positive")
    area = math.pi * waist ** 2 / 2
    return species.dipole_d13 / constants.hbar * math.sqrt(constants.hbar * omega_k / (2 * constants.eps0 * area))


def spontaneous_rate(species: AtomSpecies, k0: float, constants: PhysicalConstants = CODATA) -> float:
    """Free-space decay rate k0^3 d13^2 / (3 pi hbar eps0)"""
    if k0 <= 0:
        raise ConfigError("Wavevector k0 must be positive")
    return k0 ** 3 * species.dipole_d13 ** 2 / (3 * math.pi * constants.hbar * constants.eps0)


def condensate_peak(N: float, x0: float) -> float:
    """Peak amplitude of a harmonic ground state holding N atoms (SI, m^-1/2)"""
    return math.sqrt(N) * (math.pi * x0 ** 2) ** -0.25


def nondimensionalize(config: PhysicalConfig) -> SimConfig:
    """Convert a validated physical configuration into oscillator units"""
    species, trap, beam, optical = config.species, config.trap, config.beam, config.optical
    hbar, c = config.constants.hbar, config.constants.c

    omega_t = trap.angular_frequency
    x0 = oscillator_length(species, omega_t, config.constants)
    t0 = 1.0 / omega_t
    scaling = SimScaling(x0=x0, t0=t0)

    omega_k = optical.omega0 if optical.omega0 is not None else c * beam.k0
    g13 = coupling_g13(species, omega_k, optical.waist, config.constants)
    t_rabi = derive_rabi_period(species, omega_t, beam.k0, config.constants)

    x_send = trap.x_send / x0
    x_recv = trap.x_recv / x0
    width = beam.envelope_width / x0 if beam.envelope_width is not None else 4.0
    if beam.envelope_center is not None:
        center = beam.envelope_center / x0
    else:
        center = x_send - SUPPORT_HALF_WIDTH - 5 * width

    sim = SimConfig(
        physical=config,
        scaling=scaling,
        carrier=2 * beam.k0 * x0,
        light_speed=scaling.to_sim(c, 'velocity'),
        g13=scaling.to_sim(g13, 'coupling'),
        delta=scaling.to_sim(optical.Delta, 'rate'),
        omega23=scaling.to_sim(optical.Omega23, 'rate') if optical.Omega23 is not None else None,
        two_photon_detuning=scaling.to_sim(optical.two_photon_detuning, 'rate'),
        x_send=x_send,
        x_recv=x_recv,
        pulse_center=center,
        pulse_width=width,
        n0=beam.n0,
        N_send=trap.N_send,
        N_recv=trap.N_recv,
        t_rabi=scaling.to_sim(t_rabi, 'time'),
    )

    logger.debug(
        f"Sim units: x0={x0:.4e} m, t0={t0:.4e} s, carrier={sim.carrier:.2f}, "
        f"c={sim.light_speed:.3e}, T_Rabi={sim.t_rabi:.4e}"
    )
    return sim


def redimensionalize(value, kind: str, scaling: SimScaling):
    """Inverse of SimScaling.to_sim"""
    return scaling.to_si(value, kind)


def describe_scales(sim: SimConfig) -> Dict[str, Any]:
    """Human-readable summary of the derived scales"""
    s = sim.scaling
    return {
        'x0_m': s.x0,
        't0_s': s.t0,
        'beam_velocity_m_s': s.to_si(sim.velocity, 'velocity'),
        't_rabi_s': s.to_si(sim.t_rabi, 'time'),
        'light_speed_sim': sim.light_speed,
        'g13_si': s.to_si(sim.g13, 'coupling'),
        'omega23_si': s.to_si(sim.omega23, 'rate') if sim.omega23 is not None else None,
        'factors': s.factors,
    }
