from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "qvortex",
    max_examples=20,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("qvortex")


@pytest.fixture
def ho():
    from qvortex.scenarios import HoTrapScenario

    return HoTrapScenario(lam=math.sqrt(2.0), alpha=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
