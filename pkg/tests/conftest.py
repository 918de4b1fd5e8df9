import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from edgeharvest.config import default_config_path, load_config
from edgeharvest.energy import DeviceProfile, EnergyMdf, PowerModeSpec, uniform_arrival_mdf

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def default_config():
    return load_config(default_config_path())


@pytest.fixture(scope="session")
def analysis_profile(default_config):
    return default_config.profile("analysis")


@pytest.fixture(scope="session")
def testbed_profile(default_config):
    return default_config.profile("testbed")


def small_profile(lo=0, hi=4, e_max=40, e_th=4, e_thp=8, modes=None, lookup=((0.4, 2), (0.6, 3))):
    """A scaled-down device (40 units) that keeps every rule of the full one."""
    modes = modes or (
        PowerModeSpec(1, "15 W", 3, 11),
        PowerModeSpec(2, "30 W", 2, 9),
        PowerModeSpec(3, "60 W", 1, 10),
    )
    p = np.zeros(hi + 1)
    p[lo:] = 1.0 / (hi - lo + 1)
    return DeviceProfile(modes, e_max, e_th, e_thp, lookup, EnergyMdf(p), 100.0, base_mode=1)


@pytest.fixture
def small():
    return small_profile()


def mean_profile(base: DeviceProfile, mean_units: float, spread: float = 0.5) -> DeviceProfile:
    u = base.unit_joules
    return base.with_arrival(uniform_arrival_mdf(mean_units * u * (1 - spread), mean_units * u * (1 + spread), u))
