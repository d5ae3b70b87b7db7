"""
Quantum-statistics layer.

The field equations are linear in the beam and probe at frozen condensates,
so one classical solution seeded with the normalized input envelope carries
the Heisenberg evolution of the input mode. Projecting it onto a translated
copy of the input gives the overlap beta of an effective beam-splitter
channel, from which the Gaussian transfer coefficients follow.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import fft
from scipy.optimize import minimize_scalar

from services.dynamics import (
    IntegratorConfig,
    Observer,
    SystemState,
    build_coupling,
    build_initial_state,
    evolve,
)
from services.errors import ConfigError, MetricsError, UnitarityError
from services.fields import ComplexField, Grid1D, require_same_grid
from services.units import BeamConfig, SimConfig

logger = logging.getLogger(__name__)

BETA_CLAMP = 1e-9
BETA_LIMIT = 1e-6

VqConvention = Literal['product', 'geometric']


@dataclass(frozen=True)
class ModeFunction:
    """Atomic (f) and optical (g) components of one tracked mode"""
    f: ComplexField
    g: ComplexField
    t: float
    radiated: float = 0.0

    def commutator_norm(self) -> float:
        """||f||^2 + ||g||^2 plus the quanta radiated through the boundary"""
        return self.f.norm() + self.g.norm() + self.radiated


@dataclass(frozen=True)
class GaussianMode:
    """Quadrature moments of a single-mode Gaussian state, vacuum variance 1"""
    mean_X: float
    mean_Y: float
    V_X: float
    V_Y: float

    def __post_init__(self):
        if self.V_X <= 0 or self.V_Y <= 0:
            raise ConfigError("Quadrature variances must be positive")
        # Quoted squeezed variances are rounded, hence the small allowance
        if self.V_X * self.V_Y < 1.0 - 1e-3:
            raise ConfigError(f"V_X * V_Y = {self.V_X * self.V_Y:.4f} violates the uncertainty bound")

    @property
    def occupation(self) -> float:
        """Mean quanta: coherent part plus the squeezing contribution"""
        return (self.mean_X ** 2 + self.mean_Y ** 2) / 4 + (self.V_X + self.V_Y - 2) / 4

    @classmethod
    def from_beam(cls, beam: BeamConfig) -> 'GaussianMode':
        """Coherent amplitude sqrt(n0) on the X axis (X = a + a^dag)"""
        return cls(mean_X=2 * math.sqrt(beam.n0), mean_Y=0.0, V_X=beam.V_X, V_Y=beam.V_Y)


class TransferResult(BaseModel):
    """End-to-end transfer record"""
    model_config = ConfigDict(extra='forbid')

    beta_abs: float = Field(ge=0, le=1 + BETA_LIMIT)
    beta_phase: float = 0.0
    eta: float = Field(ge=0, le=1)
    T_X: float = Field(ge=0, le=1)
    T_Y: float = Field(ge=0, le=1)
    T_q: float = Field(ge=0, le=2)
    Vcv_X: float = Field(ge=0, le=1)
    Vcv_Y: float = Field(ge=0, le=1)
    V_q: float = Field(ge=0)
    translation_m: Optional[float] = None
    vq_convention: VqConvention = 'product'


@dataclass(frozen=True)
class ProjectionResult:
    beta: complex
    translation: float
    at_window_edge: bool = False


@dataclass(frozen=True)
class OracleMoments:
    """Moments from explicit covariance-matrix propagation"""
    covariance: np.ndarray
    means: np.ndarray
    V_out_X: float
    V_out_Y: float
    Vcv_X: float
    Vcv_Y: float
    T_X: float
    T_Y: float

    @property
    def T_q(self) -> float:
        return self.T_X + self.T_Y

    @property
    def V_q(self) -> float:
        return self.Vcv_X * self.Vcv_Y


def track_mode(u: ComplexField, sim: SimConfig, integrator: IntegratorConfig, t_final: Optional[float] = None,
               observers: Iterable[Observer] = ()) -> ModeFunction:
    """Evolve the mode (u, 0) through sender, probe and receiver"""
    if abs(u.norm() - 1.0) > 1e-9:
        raise ConfigError(f"Mode envelope must be normalized, got norm {u.norm():.12g}")

    state = build_initial_state(sim, u.grid, envelope=u)
    coupling = build_coupling(state.phi_send, state.phi_recv, sim)
    t_final = sim.default_t_final if t_final is None else t_final
    trajectory = evolve(state, t_final, coupling, integrator, observers)
    return mode_from_state(trajectory.final, 1.0)


def mode_from_state(state: SystemState, input_norm: float) -> ModeFunction:
    """Mode function of a mean-field run whose input beam held `input_norm` quanta"""
    if input_norm <= 0:
        raise ConfigError("Input norm must be positive")
    scale = 1.0 / math.sqrt(input_norm)
    return ModeFunction(
        f=state.psi.scaled(scale),
        g=state.E.scaled(scale),
        t=state.t,
        radiated=state.radiated / input_norm,
    )


def project_translated_template(f_final: ComplexField, u: ComplexField, center: float,
                                window: float) -> ProjectionResult:
    """
    Maximize |<translate(u, s), f_final>| over |s - center| <= window.
    Coarse scan on grid shifts, then bounded refinement to 1e-3 dx.
    """
    require_same_grid(f_final, u)
    grid = f_final.grid
    if window <= 0 or 2 * window >= grid.length:
        raise ConfigError(f"Search window {window:.4g} does not fit inside the domain {grid.length:.4g}")

    n, dx, length = grid.n, grid.dx, grid.length
    product = np.conj(fft.fft(u.values)) * fft.fft(f_final.values)
    scan = dx * fft.ifft(product)

    # Representative of each periodic grid shift nearest to the expected translation
    shifts = center + np.mod(np.arange(n) * dx - center + length / 2, length) - length / 2
    inside = np.flatnonzero(np.abs(shifts - center) <= window)
    order = inside[np.argsort(shifts[inside])]
    best_pos = int(np.argmax(np.abs(scan[order])))
    best = order[best_pos]
    at_edge = best_pos in (0, len(order) - 1)

    k = grid.k

    def overlap(s: float) -> complex:
        return complex(dx / n * np.sum(product * np.exp(1j * k * s)))

    s_best = float(shifts[best])
    beta = complex(scan[best])
    refined = minimize_scalar(lambda s: -abs(overlap(s)), bounds=(s_best - dx, s_best + dx),
                              method='bounded', options={'xatol': 1e-3 * dx})
    if refined.success and -refined.fun >= abs(beta):
        s_best = float(refined.x)
        beta = overlap(s_best)

    if at_edge:
        logger.warning(f"⚠️ Template overlap maximum sits at the search window edge (shift {s_best:.4g})")
    return ProjectionResult(beta=beta, translation=s_best, at_window_edge=at_edge)


def beam_splitter_reduce(beta: complex) -> float:
    """Transmissivity eta = |beta|^2 of the equivalent beam-splitter channel"""
    magnitude = abs(beta)
    if magnitude > 1 + BETA_LIMIT:
        raise UnitarityError(f"|beta| = {magnitude:.9f} exceeds one; the propagation is not unitary")
    if magnitude > 1 + BETA_CLAMP:
        logger.warning(f"⚠️ Clamping |beta| = {magnitude:.9f} to one")
    return min(magnitude, 1.0) ** 2


def apply_station_loss(eta: float, loss_send: float, loss_recv: Optional[float] = None) -> float:
    """Compose the channel with one loss beam splitter per station"""
    loss_recv = loss_send if loss_recv is None else loss_recv
    for loss in (loss_send, loss_recv):
        if not 0 <= loss <= 1:
            raise ConfigError(f"Station loss {loss} must lie in [0, 1]")
    return eta * (1 - loss_send) * (1 - loss_recv)


def transfer_metrics(mode: GaussianMode, eta_eff: float, convention: VqConvention = 'product',
                     beta: Optional[complex] = None, translation_m: Optional[float] = None) -> TransferResult:
    """
    Signal transfer and conditional variances of a beam-splitter channel with
    vacuum ancilla: V_out = eta V_in + 1 - eta, T = eta V_in / V_out per
    quadrature, Vcv = 1 - eta per quadrature.
    """
    if not 0 <= eta_eff <= 1:
        raise ConfigError(f"Transmissivity {eta_eff} must lie in [0, 1]")
    if mode.mean_X == 0 and mode.mean_Y == 0:
        raise MetricsError("Signal-to-noise ratio is undefined for a zero-mean input")

    loss = 1 - eta_eff
    t_x = eta_eff * mode.V_X / (eta_eff * mode.V_X + loss)
    t_y = eta_eff * mode.V_Y / (eta_eff * mode.V_Y + loss)
    if convention == 'product':
        v_q = loss * loss
    elif convention == 'geometric':
        v_q = loss
    else:
        raise ConfigError(f"Unknown V_q convention '{convention}'")

    beta = complex(math.sqrt(eta_eff)) if beta is None else complex(beta)
    return TransferResult(
        beta_abs=abs(beta),
        beta_phase=math.atan2(beta.imag, beta.real),
        eta=eta_eff,
        T_X=t_x,
        T_Y=t_y,
        T_q=t_x + t_y,
        Vcv_X=loss,
        Vcv_Y=loss,
        V_q=v_q,
        translation_m=translation_m,
        vq_convention=convention,
    )


def gaussian_oracle(mode: GaussianMode, eta: float) -> OracleMoments:
    """
    Propagate the 4x4 covariance of (signal, vacuum) quadratures through the
    map (signal, vacuum) -> (signal, sqrt(eta) signal + sqrt(1-eta) vacuum),
    then read transfer coefficients and Schur-complement conditional variances.
    """
    identity = np.eye(2)
    symplectic = np.block([
        [identity, np.zeros((2, 2))],
        [math.sqrt(eta) * identity, math.sqrt(1 - eta) * identity],
    ])
    covariance_in = np.diag([mode.V_X, mode.V_Y, 1.0, 1.0])
    covariance = symplectic @ covariance_in @ symplectic.T
    means = symplectic @ np.array([mode.mean_X, mode.mean_Y, 0.0, 0.0])

    v_out = np.diag(covariance)[2:]
    v_in = np.diag(covariance)[:2]
    cross = np.array([covariance[0, 2], covariance[1, 3]])
    gain = np.array([symplectic[2, 0], symplectic[3, 1]])
    conditional = v_out - cross ** 2 / v_in
    transfer = gain ** 2 * v_in / v_out

    return OracleMoments(
        covariance=covariance,
        means=means,
        V_out_X=float(v_out[0]),
        V_out_Y=float(v_out[1]),
        Vcv_X=float(conditional[0]),
        Vcv_Y=float(conditional[1]),
        T_X=float(transfer[0]),
        T_Y=float(transfer[1]),
    )
