import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "qbwnn", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("qbwnn")


@pytest.fixture
def unit_probes():
    def make(m, d, seed=0):
        g = np.random.default_rng(seed).standard_normal((m, d))
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    return make
