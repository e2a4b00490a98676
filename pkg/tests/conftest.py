import numpy as np
import pytest

from rbdsde.condexp import RegressionBasis
from rbdsde.families import build_problem
from rbdsde.paths import make_grid, simulate_ensemble
from rbdsde.solver import SolverConfig


@pytest.fixture(scope="session")
def small_ens():
    return simulate_ensemble(make_grid(1.0, 20), 2000, 1, seed=42)


@pytest.fixture(scope="session")
def mid_ens():
    return simulate_ensemble(make_grid(1.0, 50), 10_000, 1, seed=2024)


@pytest.fixture
def cfg():
    return SolverConfig(RegressionBasis(2))


def problem(family, T=1.0, barrier=None, p=1.5, d=1, **params):
    block = {"family": family, "params": params, "p": p, "d": d}
    if barrier is not None:
        block["barrier"] = barrier
    return build_problem(block, T)


def assert_invariants(sol, spec):
    from rbdsde.estimates import skorokhod_residual
    from rbdsde.solver import barrier_matrix

    assert np.all(sol.K[:, 0] == 0)
    assert np.all(np.diff(sol.K, axis=1) >= 0)
    assert np.array_equal(sol.Y[:, -1], spec.xi(sol.ensemble.W[:, -1]))
    L = barrier_matrix(spec, sol.ensemble)
    if L is not None:
        assert np.all(sol.Y >= L)
    assert skorokhod_residual(sol, spec) == 0.0
