import time

import numpy as np
import pytest

from sqkam.dynamics import integrate
from sqkam.iteration import SolveConfig, solve
from sqkam.model import henon_heiles, initial_state
from sqkam.sqmatrix import build_square_matrix, jordan_chains

E_REF = 1.0 / 12.0
PY_REF = 0.18


@pytest.fixture(scope="session")
def hh():
    return henon_heiles()


@pytest.fixture(scope="session")
def state_ref():
    return initial_state(E_REF, 0.0, 0.0, PY_REF)


@pytest.fixture(scope="session")
def m5(hh):
    return build_square_matrix(hh, 5)


@pytest.fixture(scope="session")
def pair5(m5):
    return jordan_chains(m5)


@pytest.fixture(scope="session")
def ref_solve_timed(hh, state_ref, pair5):
    t = time.perf_counter()
    res = solve(hh, state_ref, SolveConfig(), pair=pair5)
    return res, time.perf_counter() - t


@pytest.fixture(scope="session")
def ref_solve(ref_solve_timed):
    return ref_solve_timed[0]


@pytest.fixture(scope="session")
def oracle_traj(hh, state_ref):
    return integrate(hh, state_ref, 2000.0, dt=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
