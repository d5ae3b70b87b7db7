"""
Shared fixtures. The fast scenario shrinks the default geometry (stations at
+-0.15 mm on a +-0.8 mm domain of 2^12 points, 3 x0 pulse) so a full
transfer runs in a few seconds.
"""

import copy

import pytest

from config.config import parse_scenario
from scheduler.scenario_runner import prepare_simulation, simulate_transfer
from services.units import PhysicalConfig, load_species, oscillator_length

RB_X0 = oscillator_length(load_species('Rb87'), 5.0)

FAST_SCENARIO = {
    'species': 'Rb87',
    'trap': {'omega_t': 5.0, 'N0': 1e6, 'x_send': -1.5e-4, 'x_recv': 1.5e-4},
    'beam': {'n0': 5e3, 'k0': 8e6, 'envelope_width': 3 * RB_X0},
    'grid': {'x_min': -8e-4, 'x_max': 8e-4, 'n': 4096},
    'scenario': {'name': 'fig3-transfer'},
}


@pytest.fixture
def fast_raw():
    return copy.deepcopy(FAST_SCENARIO)


@pytest.fixture
def fast_scenario(fast_raw):
    return parse_scenario(fast_raw)


@pytest.fixture
def fast_setup(fast_scenario):
    """(sim, grid) of the fast scenario with the calibrated control"""
    return prepare_simulation(fast_scenario)


@pytest.fixture(scope='session')
def fast_run():
    return simulate_transfer(parse_scenario(copy.deepcopy(FAST_SCENARIO)))


@pytest.fixture
def rb87():
    return load_species('Rb87')


@pytest.fixture
def na23():
    return load_species('Na23')


@pytest.fixture
def default_physical(rb87):
    return PhysicalConfig(species=rb87)


@pytest.fixture
def out_dir(tmp_path):
    return tmp_path / 'out'
