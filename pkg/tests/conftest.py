import math

import pytest

from latefuse.core import AgentClass, BoundingBox, State2D


def make_box(agent_id, x, y, length=2.0, width=2.0, height=1.5, heading=0.0, cls=AgentClass.CAR):
    return BoundingBox(State2D(x, y), length, width, height, heading, agent_id, cls)


@pytest.fixture
def box():
    return make_box


def angle_close(a, b, tol=1e-12):
    return abs(math.remainder(a - b, 2 * math.pi)) <= tol
