import numpy as np
import pytest

from otrobust.controller import LqrWeights, build_schedule, lqr_gain, linearize_plant
from otrobust.f16 import DEG, AeroTables, AircraftParams
from otrobust.harness import NOMINAL_ALPHA_DEG, NOMINAL_V, ControllerSetup
from otrobust.trim import find_trim, trim_grid


@pytest.fixture(scope="session")
def params():
    return AircraftParams()


@pytest.fixture(scope="session")
def tables():
    return AeroTables.default()


@pytest.fixture(scope="session")
def nominal_trim(params, tables):
    return find_trim(NOMINAL_V, NOMINAL_ALPHA_DEG * DEG, params, tables)


@pytest.fixture(scope="session")
def nominal_gain(params, tables, nominal_trim):
    model = linearize_plant(nominal_trim.x_trim, nominal_trim.u_trim, params, tables)
    return lqr_gain(model, LqrWeights())


@pytest.fixture(scope="session")
def grid_trims(params, tables):
    return trim_grid(None, params, tables)


@pytest.fixture(scope="session")
def schedule(params, tables, grid_trims, nominal_trim):
    return build_schedule(grid_trims, LqrWeights(), params, tables,
                          reference=nominal_trim)


@pytest.fixture(scope="session")
def setup(params, tables, nominal_trim, nominal_gain, schedule):
    model = linearize_plant(nominal_trim.x_trim, nominal_trim.u_trim, params, tables)
    return ControllerSetup(trim=nominal_trim, K=nominal_gain, model=model,
                           schedule=schedule)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
