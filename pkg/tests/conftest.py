import numpy as np
import pytest

from LegFusion.modules.manifold import NominalState, Rotation
from LegFusion.modules.simulator import SensorConfig, generate_log, standard_scenarios


# sparse ray pattern and short corridors keep the end-to-end tests fast
FAST_SENSORS = dict(n_azimuth=120, n_elevation=8)
SHORT_CORRIDOR = 8.0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

@pytest.fixture
def tangent_order():
    '''Canonical StateTangent ordering'''
    return ['theta', 'p', 'v', 'b_g', 'b_a']

def random_state(rng:np.random.Generator, t:float = 0.0) -> NominalState:
    q = rng.standard_normal(4)
    return NominalState(
        R = Rotation.from_quaternion(q),
        p = rng.standard_normal(3),
        v = rng.standard_normal(3),
        b_g = 0.01 * rng.standard_normal(3),
        b_a = 0.1 * rng.standard_normal(3),
        t = t)

def random_spd(rng:np.random.Generator, n:int, scale:float = 1.0) -> np.ndarray:
    A = rng.standard_normal((n, n))
    return scale * (A @ A.T + n * np.eye(n))

@pytest.fixture(scope='session')
def fast_sensors() -> SensorConfig:
    return SensorConfig(**FAST_SENSORS)

@pytest.fixture(scope='session')
def short_scenarios(fast_sensors):
    return standard_scenarios(fast_sensors, corridor_length=SHORT_CORRIDOR)

@pytest.fixture(scope='session')
def featured_log(short_scenarios):
    sc = short_scenarios['corridor_featured']
    return generate_log(sc.world, sc.traj, sc.cfg, 0, sc.segments)

@pytest.fixture(scope='session')
def corridor_log(short_scenarios):
    sc = short_scenarios['corridor_ab']
    return generate_log(sc.world, sc.traj, sc.cfg, 0, sc.segments)
