import math

import numpy as np
import pytest

from lodempc.linearize import linearize
from lodempc.lodegp import Hyperparameters, build_lodegp_model
from lodempc.mpc import BoxConstraints, ConstraintMode, MpcConfig
from lodempc.plant import TwoTankParams, two_tank_system

P = TwoTankParams()


def equilibrium_oracle(u, p=P):
    """Closed-form two-tank equilibrium, written out independently of the package."""
    x2 = u**2 / (2 * p.g * p.c2R**2)
    x1 = x2 + u**2 / (2 * p.g * p.c12**2)
    return np.array([x1, x2])


def jacobian_oracle(x, p=P):
    a = p.c12 / p.A * p.g / math.sqrt(2 * p.g * (x[0] - x[1]))
    b = p.c2R / p.A * p.g / math.sqrt(2 * p.g * x[1])
    return np.array([[-a, a], [a, -a - b]]), np.array([[1 / p.A], [0.0]])


_cache = {}


def reference_model():
    """Model at the 0.3 u_max equilibrium, cached for hypothesis tests that cannot take fixtures."""
    if "m" not in _cache:
        lin = linearize(two_tank_system(P), 0.3 * P.u1_max, [0.5, 0.2])
        _cache["m"] = build_lodegp_model(lin, Hyperparameters(0.04, 20.0))
    return _cache["m"]


@pytest.fixture(scope="session")
def plant():
    return two_tank_system(P)


@pytest.fixture(scope="session")
def lin0(plant):
    return linearize(plant, 0.2 * P.u1_max, [0.3, 0.1])


@pytest.fixture(scope="session")
def lin1(plant):
    return linearize(plant, 0.3 * P.u1_max, [0.5, 0.2])


@pytest.fixture(scope="session")
def model(lin1):
    return build_lodegp_model(lin1, Hyperparameters(0.04, 20.0))


@pytest.fixture(scope="session")
def box():
    return BoxConstraints([0.0, 0.0, 0.0], [0.6, 0.6, P.u1_max])


@pytest.fixture(scope="session")
def configs(lin1, box):
    z_ref = np.concatenate([lin1.x_e, lin1.u_e])
    return {
        "A": MpcConfig(z_ref, box),
        "B": MpcConfig(z_ref, box, t_ref=100.0, use_endpoint=True),
        "C": MpcConfig(z_ref, box, constraint_mode=ConstraintMode.REFERENCE_BAND),
    }


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
