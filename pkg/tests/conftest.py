"""Shared fixtures: table parameters and cached expensive trajectories."""

import numpy as np
import pytest

from tendonrod import make_params
from tendonrod.bvp_shooting import SolverConfig, rollout
from tendonrod.controls_experiments import default_training_schedules


@pytest.fixture(scope="session")
def table_params():
    """True-robot parameters from the key-parameter table."""
    return make_params()


@pytest.fixture(scope="session")
def euler_solver():
    return SolverConfig(integrator="euler")


@pytest.fixture(scope="session")
def truth_training_data(table_params, euler_solver):
    """Two 30-step sine trajectories of the true robot (Euler integrator),
    shared by the learning tests."""
    return [rollout(table_params, s.tensions, cfg=euler_solver)
            for s in default_training_schedules(table_params.dt, 30,
                                                table_params.tendon_count)]


def random_unit_quaternion(rng):
    h = rng.normal(size=4)
    return h / np.linalg.norm(h)
