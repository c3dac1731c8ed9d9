import math
import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from twinforge.scene import Building, Scene, Terrain, TxConfig  # noqa: E402

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def box(bid, x0, y0, x1, y1, h=20.0, base=0.0):
    return Building(bid, ((x0, y0), (x1, y0), (x1, y1), (x0, y1)), base, h)


def flat_scene(buildings=(), n=20, cell=5.0, origin=(0.0, 0.0)):
    return Scene(tuple(buildings), Terrain(origin, cell, n, n, 0.0))


def regular_polygon(cx, cy, r, k, rot=0.0):
    return tuple((cx + r * math.cos(rot + 2 * math.pi * i / k), cy + r * math.sin(rot + 2 * math.pi * i / k))
                 for i in range(k))


@pytest.fixture
def tx35():
    return TxConfig((50.0, 50.0, 10.0), 3.5e9, 8, 0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
