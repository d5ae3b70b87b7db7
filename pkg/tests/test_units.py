import math
from dataclasses import replace

import pytest

from services.errors import ConfigError
from services.units import (
    BeamConfig,
    OpticalConfig,
    PhysicalConfig,
    SimScaling,
    TrapConfig,
    check_adiabatic,
    coupling_g13,
    derive_beam_velocity,
    derive_rabi_frequency,
    derive_rabi_period,
    describe_scales,
    load_species,
    nondimensionalize,
    oscillator_length,
    redimensionalize,
    spontaneous_rate,
)


def test_species_table_strips_sources(rb87):
    assert rb87.name == 'Rb87'
    assert rb87.mass == pytest.approx(1.443160648e-25)
    assert rb87.scattering_length == pytest.approx(5.313e-9)


def test_unknown_species_is_config_error():
    with pytest.raises(ConfigError, match='Unknown species'):
        load_species('Cs133')


def test_beam_velocity_matches_quoted_rb87_value(rb87):
    # 2 hbar k0 / m is quoted as 1.1 cm/s
    v = derive_beam_velocity(rb87, 8e6)
    assert v == pytest.approx(0.011, rel=0.1)


def test_rabi_period_is_four_crossing_times(rb87):
    x0 = oscillator_length(rb87, 5.0)
    t_rabi = derive_rabi_period(rb87, 5.0, 8e6)
    assert x0 == pytest.approx(1.2089e-5, rel=1e-3)
    assert t_rabi == pytest.approx(4 * x0 / derive_beam_velocity(rb87, 8e6))
    assert derive_rabi_frequency(t_rabi) == pytest.approx(2 * math.pi / t_rabi)


@pytest.mark.parametrize('k0, omega_t', [(0.0, 5.0), (8e6, 0.0), (-1.0, 5.0)])
def test_rabi_period_rejects_non_positive_inputs(rb87, k0, omega_t):
    with pytest.raises(ConfigError):
        derive_rabi_period(rb87, omega_t, k0)


def test_coupling_falls_off_with_waist(rb87):
    omega_k = 2.99792458e8 * 8e6
    g13 = coupling_g13(rb87, omega_k, 1e-4)
    assert g13 > 0
    assert coupling_g13(rb87, omega_k, 2e-4) == pytest.approx(g13 / 2, rel=1e-12)
    assert coupling_g13(replace(rb87, dipole_d13=0.0), omega_k, 1e-4) == 0.0


def test_spontaneous_rate_scales_as_k0_cubed(rb87):
    assert spontaneous_rate(rb87, 2.4e7) == pytest.approx(27 * spontaneous_rate(rb87, 8e6), rel=1e-12)


def test_adiabatic_limit():
    assert check_adiabatic(1.0, 100.0) == pytest.approx(0.01)
    with pytest.raises(ConfigError, match='adiabatic'):
        check_adiabatic(30.0, 100.0)
    with pytest.raises(ConfigError):
        OpticalConfig(Omega23=0.3 * 2 * math.pi * 1e9)


class TestParameterValidation:
    def test_receiver_must_be_downstream(self):
        with pytest.raises(ConfigError, match='downstream'):
            TrapConfig(x_send=1e-4, x_recv=-1e-4)

    def test_number_imbalance_splits_n0(self):
        trap = TrapConfig(number_imbalance=0.5)
        assert trap.N_send == pytest.approx(1.5e6)
        assert trap.N_recv == pytest.approx(0.5e6)
        with pytest.raises(ConfigError):
            TrapConfig(number_imbalance=1.0)

    def test_hz_switch(self):
        assert TrapConfig(omega_t=5.0, omega_t_is_hz=True).angular_frequency == pytest.approx(10 * math.pi)
        assert TrapConfig(omega_t=5.0).angular_frequency == 5.0

    def test_uncertainty_bound(self):
        BeamConfig(V_X=0.14, V_Y=7.39)
        with pytest.raises(ConfigError, match='uncertainty'):
            BeamConfig(V_X=0.1, V_Y=2.0)

    def test_zero_detuning(self):
        with pytest.raises(ConfigError):
            OpticalConfig(Delta=0.0)


class TestNondimensionalize:
    def test_oscillator_units(self, default_physical):
        sim = nondimensionalize(default_physical)
        x0 = sim.scaling.x0
        assert sim.scaling.t0 == pytest.approx(0.2)
        assert sim.carrier == pytest.approx(2 * 8e6 * x0)
        assert sim.velocity == sim.carrier
        assert sim.probe_carrier == pytest.approx(1.5 * sim.carrier)
        assert sim.x_send == pytest.approx(-5e-4 / x0)
        assert sim.t_rabi == pytest.approx(4 / sim.carrier)

    def test_velocity_in_sim_units_is_beam_velocity(self, default_physical, rb87):
        sim = nondimensionalize(default_physical)
        v = redimensionalize(sim.velocity, 'velocity', sim.scaling)
        assert v == pytest.approx(derive_beam_velocity(rb87, 8e6), rel=1e-12)

    def test_default_pulse_geometry(self, default_physical):
        sim = nondimensionalize(default_physical)
        assert sim.pulse_width == 4.0
        assert sim.pulse_center == pytest.approx(sim.x_send - 6 - 20)
        assert sim.default_t_final == pytest.approx((12 + 40) / sim.velocity)
        assert sim.template_translation(0.0) == pytest.approx(sim.x_recv - sim.x_send)

    def test_uncalibrated_control_stays_unset(self, default_physical):
        assert nondimensionalize(default_physical).omega23 is None

    def test_default_snapshot_times(self, default_physical):
        sim = nondimensionalize(default_physical)
        times = sim.default_snapshot_times(sim.default_t_final)
        assert len(times) == 4
        assert times[0] == 0.0
        assert times[-1] == sim.default_t_final
        assert list(times) == sorted(times)

    def test_describe_scales(self, default_physical):
        scales = describe_scales(nondimensionalize(default_physical))
        assert scales['t_rabi_s'] == pytest.approx(derive_rabi_period(default_physical.species, 5.0, 8e6))
        assert scales['omega23_si'] is None


def test_scaling_rejects_unknown_kind():
    with pytest.raises(ConfigError, match='Unknown unit kind'):
        SimScaling(1.0, 1.0).to_sim(1.0, 'charge')


def test_scaling_inverse():
    scaling = SimScaling(x0=2e-5, t0=0.2)
    for kind in ('length', 'time', 'rate', 'velocity', 'wavenumber', 'field', 'coupling'):
        assert scaling.to_si(scaling.to_sim(3.7, kind), kind) == pytest.approx(3.7, rel=1e-14)


def test_physical_config_defaults(default_physical):
    assert isinstance(default_physical.trap, TrapConfig)
    assert default_physical.optical.Omega23 is None
    assert default_physical.beam.V_X * default_physical.beam.V_Y == pytest.approx(1.0)
