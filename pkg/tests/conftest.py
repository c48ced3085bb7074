"""
Description:
    Shared fixtures: the generic template pair, the body model, the sensor
    map, the pose prior and two synthetic walks, built once per test session.

To-do:
"""
# third party imports
import pytest

# local imports
from managers.body_model import BodyModel, Camera, build_generic_templates
from managers.energy import GroundPlane, fit_gmm_prior
from managers.pressure_contact import build_sensor_vertex_map
from managers.synth_oracle import MotionScript, NoiseSpec, motion_library, synthesize_sequence


@pytest.fixture(scope='session')
def templates():
    return build_generic_templates(seed=0)


@pytest.fixture(scope='session')
def adult(templates):
    return templates[0]


@pytest.fixture(scope='session')
def child(templates):
    return templates[1]


@pytest.fixture(scope='session')
def model(templates):
    return BodyModel(*templates)


@pytest.fixture(scope='session')
def cam():
    return Camera()


@pytest.fixture(scope='session')
def floor():
    return GroundPlane()


@pytest.fixture(scope='session')
def sensor_map(adult):
    return build_sensor_vertex_map(adult)


@pytest.fixture(scope='session')
def walk_script():
    return MotionScript('walk', duration=1.0, frame_rate=30.0, standing_duration=0.3, seed=0)


@pytest.fixture(scope='session')
def walk_sequence(walk_script, model, cam, floor, sensor_map):
    """
    Noise-free walk: 30 frames, the first 9 standing.
    """
    return synthesize_sequence(
        walk_script, model, cam, NoiseSpec(), floor, sensor_map, subject='walk')


@pytest.fixture(scope='session')
def child_walk_sequence(model, cam, floor, sensor_map):
    """
    Noise-free walk of a smaller subject (blend 0.7): 60 frames, the first 9 standing.
    """
    script = MotionScript(
        'walk', duration=2.0, frame_rate=30.0, standing_duration=0.3, seed=0, alpha=0.7)

    return synthesize_sequence(
        script, model, cam, NoiseSpec(), floor, sensor_map, subject='child_walk')


@pytest.fixture(scope='session')
def pose_prior():
    return fit_gmm_prior(motion_library(seed=0))
