import numpy as np
import pytest
from hypothesis import settings

from byzsim import RunConfig


def small_cfg(**overrides):
    """A tiny synthetic task that runs in well under a second."""
    base = {
        "topology.n_agents": 5,
        "data.n_classes": 3,
        "data.dim": 5,
        "data.z_per_agent": 40,
        "data.test_size": 3000,
        "run.steps": 100,
        "run.eval_every": 20,
    }
    base.update(overrides)
    return RunConfig().replace(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")
