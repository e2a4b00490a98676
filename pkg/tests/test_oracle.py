import numpy as np
import pytest

from conftest import problem
from rbdsde.errors import OracleUnsupported, ShapeError, UnknownCase
from rbdsde.oracle import (CATALOG_NOTES, catalog_problem, compare_solutions, linear_g_continuum,
                           reference_catalog, snell_lattice, step_residuals)
from rbdsde.paths import make_grid, simulate_ensemble
from rbdsde.solver import DiscreteSolution, SolverConfig, solve_reflected_bdsde

# Cox-Ross-Rubinstein American put (s0=1, K=1.1, r=0.06, sigma=0.2, T=1), 10^4 steps,
# computed with an independent binomial tree
CRR_AMERICAN_PUT = 0.116571645
AMERICAN_PUT = {"family": "american-put", "barrier": {"kind": "payoff"},
                "s0": 1.0, "strike": 1.1, "r": 0.06, "sigma": 0.2}


def _put():
    block = dict(AMERICAN_PUT)
    return problem(block.pop("family"), barrier=block.pop("barrier"), **block)


def test_lattice_deterministic_barrier_is_its_envelope():
    sol = snell_lattice(problem("deterministic-barrier", level=0.5), 200)
    assert sol.Y0 == pytest.approx(0.5, abs=1e-14)
    for i in (0, 50, 199):
        assert np.allclose(sol.values[i], 0.5 * (1 - i / 200))


def test_lattice_constant_and_martingale():
    assert snell_lattice(problem("constant", c=2.5), 64).Y0 == pytest.approx(2.5, abs=1e-14)
    # a + b W_T is linear in the walk, so the tree average is exact
    assert snell_lattice(problem("martingale", xi_a=0.3, xi_b=2.0), 64).Y0 == pytest.approx(0.3, abs=1e-12)


def test_lattice_nodes_recombine():
    sol = snell_lattice(problem("constant"), 10)
    assert sol.nodes(4).tolist() == pytest.approx((np.arange(-4, 5, 2) * np.sqrt(0.1)).tolist())
    assert [len(v) for v in sol.values] == list(range(1, 12))


def test_lattice_rejects_backward_noise_and_dimension():
    with pytest.raises(OracleUnsupported):
        snell_lattice(problem("linear", xi_b=1.0, g_y=0.2), 50)
    with pytest.raises(OracleUnsupported):
        snell_lattice(problem("linear", xi_b=1.0, f_z=0.2), 50)
    with pytest.raises(OracleUnsupported):
        snell_lattice(problem("martingale", d=2), 50)


def test_lattice_american_put_matches_crr():
    fine = snell_lattice(_put(), 1000)
    coarse = snell_lattice(_put(), 500)
    assert abs(fine.Y0 - CRR_AMERICAN_PUT) <= 1e-4
    richardson = 2 * fine.Y0 - coarse.Y0
    assert abs(richardson - CRR_AMERICAN_PUT) <= abs(fine.Y0 - CRR_AMERICAN_PUT) + 1e-5
    # early exercise premium over the Black-Scholes European put (0.10031)
    assert fine.Y0 > 0.1003
    assert fine.exercise[500].any() and not fine.exercise[500].all()


def test_lattice_monotone_in_barrier():
    y0 = [snell_lattice(problem("martingale", barrier={"kind": "constant", "level": lv}), 100).Y0
          for lv in (-1.0, 0.0, 0.2, 0.5)]
    assert all(b >= a for a, b in zip(y0, y0[1:]))
    assert y0[-1] == pytest.approx(max(0.5, y0[-1]))


@pytest.mark.parametrize("case,params", [
    ("constant", {"c": 1.7}),
    ("martingale", {"xi_a": 0.2, "xi_b": 0.8}),
    ("deterministic_barrier", {"level": 0.5}),
    ("linear_f_ode", {"r": 0.2, "c": 1.3}),
    ("linear_g", {"beta": 0.4, "xi_a": 1.0}),
])
def test_catalog_satisfies_discrete_equation(small_ens, case, params):
    sol = reference_catalog(case, small_ens.grid, small_ens, **params)
    spec = catalog_problem(case, 1.0, **params)
    assert sol.meta["self_check"] <= 1e-8
    assert np.max(np.abs(step_residuals(sol, spec))) <= 1e-8
    assert sol.meta["derivation"] == CATALOG_NOTES[case]
    L = spec.barrier_at
    dK = np.diff(sol.K, axis=1)
    assert np.all(dK >= 0)
    if spec.has_barrier:
        Lmat = np.stack([L(small_ens.grid.t(i), small_ens.W[:, i]) for i in range(21)], axis=1)
        assert np.all(sol.Y >= Lmat - 1e-14)
        assert np.sum((sol.Y[:, :-1] - Lmat[:, :-1]) * dK) == pytest.approx(0.0, abs=1e-12)


def test_catalog_errors(small_ens):
    with pytest.raises(UnknownCase):
        reference_catalog("no-such-case", small_ens.grid)
    with pytest.raises(ValueError):
        reference_catalog("martingale", small_ens.grid)
    with pytest.raises(ShapeError):
        reference_catalog("constant", make_grid(1.0, 10), small_ens)


def test_linear_f_catalog_tends_to_exponential():
    for M in (10, 1000):
        sol = reference_catalog("linear_f_ode", make_grid(1.0, M), r=0.5, c=2.0)
        err = abs(sol.Y[0, 0] - 2.0 * np.exp(-0.5))
        assert err <= 2.0 * 0.25 / M
    assert err > 0


def test_linear_g_continuum_substitution_shrinks():
    rms = []
    for M in (250, 2000):
        ens = simulate_ensemble(make_grid(1.0, M), 2000, 1, seed=3)
        Y, Z = linear_g_continuum(ens, 0.3, 1.0)
        cand = DiscreteSolution(Y, Z, np.zeros_like(Y), ens.grid, {}, ens)
        r = step_residuals(cand, catalog_problem("linear_g", 1.0, beta=0.3, xi_a=1.0))
        rms.append(np.sqrt(np.mean(r.sum(axis=1) ** 2)))
    assert rms[1] < 0.5 * rms[0]
    assert rms[0] < 0.02


def test_compare_identical_and_solver_exact_cases(small_ens):
    ref = reference_catalog("deterministic_barrier", small_ens.grid, level=0.5)
    rep = compare_solutions(ref, ref)
    assert rep.sup_abs_error == 0 and rep.y0_abs_error == 0 and rep.k_sup_abs_error == 0
    sol = solve_reflected_bdsde(problem("deterministic-barrier", level=0.5), small_ens, SolverConfig())
    rep = compare_solutions(sol, ref)
    assert rep.sup_abs_error <= 1e-8 and rep.k_sup_abs_error <= 1e-8 and rep.z_error_p <= 1e-8
    mart = reference_catalog("martingale", small_ens.grid, small_ens, xi_a=0.1, xi_b=1.0)
    sol = solve_reflected_bdsde(problem("martingale", xi_a=0.1, xi_b=1.0), small_ens, SolverConfig())
    # dW_i is outside the regression span, so only Y_0 is exact up to sampling noise
    rep = compare_solutions(sol, mart)
    assert rep.y0_abs_error <= 3 / np.sqrt(small_ens.n_paths)
    assert rep.k_sup_abs_error == 0


def test_compare_shapes(small_ens):
    ref = reference_catalog("constant", small_ens.grid)
    other = reference_catalog("constant", make_grid(1.0, 10))
    with pytest.raises(ShapeError):
        compare_solutions(ref, other)
    a = reference_catalog("martingale", small_ens.grid, small_ens)
    b = DiscreteSolution(a.Y[:10], a.Z[:10], a.K[:10], a.grid, {}, None)
    with pytest.raises(ShapeError):
        compare_solutions(a, b)
    lat = snell_lattice(problem("constant", c=1.0), 20)
    assert compare_solutions(ref, lat).y0_abs_error == pytest.approx(0.0, abs=1e-14)
