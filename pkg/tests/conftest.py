import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from cartpole_nmpc.harness import ScenarioConfig, run_episode  # noqa: E402

ROOT = os.path.dirname(os.path.dirname(__file__))
DEFAULT_CONFIG = os.path.join(ROOT, "configs", "default.cfg")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_config():
    return ScenarioConfig.from_file(DEFAULT_CONFIG)


@pytest.fixture(scope="session")
def swingup_run(default_config):
    """The checked-in swing-up scenario, run once per session with diagnostics."""
    import time

    started = time.perf_counter()
    sim = run_episode(default_config, keep_diagnostics=True)
    return sim, time.perf_counter() - started
