import numpy as np
import pytest

from facadeloc.synth import SceneConfig, generate_scene


@pytest.fixture(scope="session")
def frontal_scene():
    return generate_scene(SceneConfig(seed=42))


@pytest.fixture(scope="session")
def oblique_scene():
    return generate_scene(SceneConfig(seed=42, yaw_deg=45.0))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
