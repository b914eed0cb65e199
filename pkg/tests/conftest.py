"""Shared fixtures: small simulated scenes reused across test modules."""

import numpy as np
import pytest

from smat.simworld import SceneConfig, generate_scene, simulate_sequence, straight_path


@pytest.fixture(scope="session")
def small_scene():
    """20x10 corridor, 4 agents, 80 scans: fast enough for per-module tests."""
    config = SceneConfig(agent_count=4, seed=7, sensor_path=straight_path(80))
    return generate_scene(config)


@pytest.fixture(scope="session")
def small_scans(small_scene):
    return simulate_sequence(small_scene)


@pytest.fixture(scope="session")
def static_scene():
    """Corridor with no agents: every point is static. The sensor moves well
    below the tracker's speed threshold so reveal fronts can never look like
    stable movers."""
    config = SceneConfig(agent_count=0, seed=3, sensor_path=straight_path(40, x_end=5.0))
    return generate_scene(config)


@pytest.fixture(scope="session")
def static_scans(static_scene):
    return simulate_sequence(static_scene)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
