"""
Analytic degradation budget: spontaneous emission from the adiabatically
eliminated excited state, and collisional phase diffusion of the condensates.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Literal, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from services.errors import ConfigError
from services.units import CODATA, AtomSpecies, PhysicalConstants, oscillator_length, spontaneous_rate

logger = logging.getLogger(__name__)

NumberFluctuation = Literal['mean_field', 'poissonian']


@dataclass(frozen=True)
class LossBudget:
    """Spontaneous-emission loss per station; efficiency composes both stations"""
    gamma_sp: float
    N3_bar: float
    L_sp: float
    eta_loss: float
    efficiency: float
    ratio: Optional[float] = None
    form: str = 'bound'
    eta_loss_send: Optional[float] = None
    eta_loss_recv: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class CoherenceEstimate:
    t_coh: float
    travel_distance: float
    species: str
    chemical_potential: Optional[float] = None
    number_fluctuation: str = 'mean_field'

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _clamped(eta_loss: float) -> float:
    if eta_loss > 1:
        logger.warning(f"⚠️ Estimated loss fraction {eta_loss:.3g} exceeds one; clamping")
        return 1.0
    return eta_loss


def spontaneous_budget(species: AtomSpecies, k0: float, n0: float, ratio: float, t_rabi: float,
                       constants: PhysicalConstants = CODATA) -> LossBudget:
    """
    Bound form: each of the N3 = n0 (Omega23/Delta)^2 excited atoms stays
    excited for about T_Rabi / 4, so L_sp = gamma_sp N3 T_Rabi / 4.
    """
    if n0 <= 0 or t_rabi <= 0:
        raise ConfigError("n0 and T_Rabi must be positive")

    gamma = spontaneous_rate(species, k0, constants)
    n3 = n0 * ratio ** 2
    lost = gamma * n3 * t_rabi / 4
    eta = _clamped(lost / n0)
    return LossBudget(
        gamma_sp=gamma, N3_bar=n3, L_sp=lost, eta_loss=eta, efficiency=(1 - eta) ** 2,
        ratio=abs(ratio), form='bound', eta_loss_send=eta, eta_loss_recv=eta,
    )


def spontaneous_budget_from_trajectory(species: AtomSpecies, k0: float, n0: float, times: Sequence[float],
                                       excited_send: Sequence[float], excited_recv: Sequence[float],
                                       constants: PhysicalConstants = CODATA) -> LossBudget:
    """
    Integral form L_sp = gamma_sp * int dt N3(t) per station, from the excited
    population recorded along a simulated trajectory (times in seconds).
    """
    if len(times) < 2:
        raise ConfigError("A trajectory needs at least two samples for the loss integral")

    gamma = spontaneous_rate(species, k0, constants)
    t = np.asarray(times, dtype=float)
    lost_send = gamma * trapezoid(np.asarray(excited_send, dtype=float), t)
    lost_recv = gamma * trapezoid(np.asarray(excited_recv, dtype=float), t)
    eta_send = _clamped(lost_send / n0)
    eta_recv = _clamped(lost_recv / n0)
    return LossBudget(
        gamma_sp=gamma,
        N3_bar=float(max(np.max(excited_send), np.max(excited_recv))),
        L_sp=lost_send + lost_recv,
        eta_loss=0.5 * (eta_send + eta_recv),
        efficiency=(1 - eta_send) * (1 - eta_recv),
        form='integral',
        eta_loss_send=eta_send,
        eta_loss_recv=eta_recv,
    )


def ratio_for_loss(target: float, species: AtomSpecies, k0: float, t_rabi: float,
                   constants: PhysicalConstants = CODATA) -> float:
    """|Omega23/Delta| giving a requested per-station loss in the bound form"""
    if not 0 < target < 1:
        raise ConfigError("Target loss must lie in (0, 1)")
    gamma = spontaneous_rate(species, k0, constants)
    if gamma == 0:
        raise ConfigError(f"{species.name} has no spontaneous decay; any ratio is lossless")
    return math.sqrt(4 * target / (gamma * t_rabi))


def thomas_fermi_chemical_potential(species: AtomSpecies, N: float, omega_t: float,
                                    constants: PhysicalConstants = CODATA) -> float:
    """mu = (hbar omega / 2) (15 N a / a_ho)^(2/5) for an isotropic harmonic trap"""
    a_ho = oscillator_length(species, omega_t, constants)
    return 0.5 * constants.hbar * omega_t * (15 * N * species.scattering_length / a_ho) ** 0.4


def phase_diffusion_estimate(species: AtomSpecies, N0: float, omega_t: float,
                             velocity: Optional[float] = None,
                             number_fluctuation: NumberFluctuation = 'mean_field',
                             constants: PhysicalConstants = CODATA) -> CoherenceEstimate:
    """
    Single-mode phase-diffusion time t_coh = hbar / (dN dmu/dN) with the
    Thomas-Fermi chemical potential (dmu/dN = 2 mu / 5 N). dN is N0 for
    'mean_field' and sqrt(N0) for 'poissonian' number fluctuations.
    Returns math.inf for a non-interacting gas.
    """
    if species.scattering_length is None:
        raise ConfigError(f"{species.name} has no scattering length data")
    if N0 <= 0 or omega_t <= 0:
        raise ConfigError("N0 and omega_t must be positive")

    velocity = species.raman_velocity if velocity is None else velocity
    if velocity is None:
        raise ConfigError(f"{species.name} has no beam velocity; pass one explicitly")

    if species.scattering_length == 0:
        return CoherenceEstimate(math.inf, math.inf, species.name, 0.0, number_fluctuation)

    mu = thomas_fermi_chemical_potential(species, N0, omega_t, constants)
    dmu_dn = 0.4 * mu / N0
    if number_fluctuation == 'mean_field':
        spread = N0
    elif number_fluctuation == 'poissonian':
        spread = math.sqrt(N0)
    else:
        raise ConfigError(f"Unknown number fluctuation model '{number_fluctuation}'")

    t_coh = constants.hbar / (spread * dmu_dn)
    estimate = CoherenceEstimate(t_coh, velocity * t_coh, species.name, mu, number_fluctuation)
    logger.debug(f"{species.name}: mu={mu:.3e} J, t_coh={t_coh:.3e} s, distance={estimate.travel_distance:.3e} m")
    return estimate
