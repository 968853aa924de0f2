import numpy as np
import pytest

from phaserings.forward_sim import (
    DeformationMap,
    ReflectorConfig,
    apply_deformation,
    measure_power,
    nominal_aperture,
    radiate,
    random_smooth_map,
)
from phaserings.spectral_core import (
    ApertureGeometry,
    ModalBasis,
    RadialGrid,
    SpectralRadialGrid,
)


@pytest.fixture(scope="session")
def geom_small():
    return ApertureGeometry(radius=4.0)


@pytest.fixture(scope="session")
def geom_nominal():
    return ApertureGeometry(radius=10.0)


@pytest.fixture(scope="session")
def basis_small(geom_small):
    return ModalBasis.build(geom_small)


@pytest.fixture(scope="session")
def basis_nominal(geom_nominal):
    return ModalBasis.build(geom_nominal)


@pytest.fixture(scope="session")
def grids_small(geom_small):
    return RadialGrid.gauss_legendre(geom_small), SpectralRadialGrid.uniform(geom_small)


@pytest.fixture(scope="session")
def scenario_config(geom_nominal):
    return ReflectorConfig(geom=geom_nominal, focal_length=3.0)


@pytest.fixture(scope="session")
def scenario_pattern(scenario_config):
    """Far field of the defocused reflector with a gentle surface dent."""
    dent = DeformationMap(delta=random_smooth_map(1.0 / 30.0, harmonics=4, seed=7))
    aperture = apply_deformation(
        nominal_aperture(scenario_config), dent, scenario_config
    )
    return radiate(aperture, scenario_config.geom)


@pytest.fixture(scope="session")
def scenario_meas(scenario_pattern):
    return measure_power(scenario_pattern)


def nmse(reference, trial, weights=None):
    """Plain normalized mean square error, no phase alignment."""
    reference = np.asarray(reference)
    trial = np.asarray(trial)
    if weights is None:
        weights = np.ones(reference.shape)
    num = np.sum(weights * np.abs(trial - reference) ** 2)
    den = np.sum(weights * np.abs(reference) ** 2)
    return float(num / den)
