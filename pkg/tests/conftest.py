"""Session-scoped solves shared across test modules.

Solving the benchmark takes a few hundred milliseconds; the suites for
verification, balancing, the CLI, and the acceptance gate all consume the
same converged solutions, so they are computed once here.
"""

import pytest

from ocscale import scaling as sc
from ocscale import solver as sv
from ocscale.problem import brachistochrone

# initial costates and final time in original units, good enough for the
# damped Newton iteration to converge from
SHIPPED_GUESS = {"lambda0": [-0.013, 0.225, -0.113], "tf": 24.0}


@pytest.fixture(scope="session")
def brach():
    return brachistochrone()


@pytest.fixture(scope="session")
def unscaled_solution(brach) -> sv.SolveResult:
    return sv.solve_bvp_full(brach, None, SHIPPED_GUESS)


def _scaled_solution(brach, name):
    s = sc.builtin_scale_set(name, brach)
    return s, sv.solve_bvp_full(brach, s, SHIPPED_GUESS)


@pytest.fixture(scope="session")
def set1_solution(brach) -> tuple:
    return _scaled_solution(brach, "set1")


@pytest.fixture(scope="session")
def set2_solution(brach) -> tuple:
    return _scaled_solution(brach, "set2")


@pytest.fixture(scope="session")
def set3_solution(brach) -> tuple:
    return _scaled_solution(brach, "set3")
