"""Shared fixtures. The default scenario and its pretrained source model
are expensive relative to everything else, so they are built once per
test session and treated as read-only by every consumer."""

import numpy as np
import pytest

from groto.model import PretrainConfig, pretrain_source
from groto.scenario import ScenarioConfig, generate_scenario


@pytest.fixture(scope="session")
def default_scenario():
    return generate_scenario(ScenarioConfig(seed=0))


@pytest.fixture(scope="session")
def source_snapshot(default_scenario):
    return pretrain_source(default_scenario, PretrainConfig(seed=0))


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
