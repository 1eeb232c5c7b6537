import numpy as np
import pytest
import torch

from clhad.hsi_io import SceneSpec, synth_scene

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def scene():
    return synth_scene(SceneSpec(seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
