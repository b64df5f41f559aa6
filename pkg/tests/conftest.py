import time

import numpy as np
import pytest

from rtimplant import imagecore, inpaintnet, synthtrain


@pytest.fixture(scope="session")
def quick_model():
    """A briefly trained model: enough for behavioural tests, not for acceptance numbers."""
    scenes = synthtrain.load_dataset(synthtrain.make_manifest(32, base_seed=11))
    cfg = synthtrain.TrainConfig(epochs=4)
    return synthtrain.train(inpaintnet.init_model(0), scenes, cfg).model


@pytest.fixture(scope="session")
def scene():
    return synthtrain.generate_scene(synthtrain.SceneSpec(seed=5))


@pytest.fixture
def trigger():
    return imagecore.centered_square(64, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_training():
    """Default config on 200 scenes from base seed 0; returns (result, seconds)."""
    scenes = synthtrain.load_dataset(synthtrain.make_manifest(200, base_seed=0))
    start = time.perf_counter()
    result = synthtrain.train(inpaintnet.init_model(0), scenes, synthtrain.TrainConfig())
    return result, time.perf_counter() - start


@pytest.fixture(scope="session")
def default_model(default_training):
    return default_training[0].model


@pytest.fixture(scope="session")
def test_scenes():
    """Held-out scene specs (disjoint base seed from training)."""
    return synthtrain.scene_specs(synthtrain.make_manifest(20, base_seed=1))


# one line per acceptance criterion, printed at the end of every run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
