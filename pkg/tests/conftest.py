import numpy as np
import pytest
from hypothesis import settings

from poseadapt import body, worldsim
from poseadapt.regressor import RegressorSpec, init_weights

settings.register_profile("suite", max_examples=30, deadline=None)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def humanoid():
    return body.default_body(13)


@pytest.fixture(scope="session")
def small_body():
    return body.default_body(5)


@pytest.fixture(scope="session")
def small_world():
    return worldsim.DomainConfig(n_joints=5, n_distractors=2)


@pytest.fixture(scope="session")
def small_dataset(small_world):
    return worldsim.make_source_dataset(small_world, 60, seed=0)


@pytest.fixture(scope="session")
def tiny_spec(small_world):
    return RegressorSpec(input_dim=small_world.obs_dim, hidden=(6, 6), n_joints=5)


@pytest.fixture(scope="session")
def tiny_weights(tiny_spec):
    return init_weights(tiny_spec, 0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
