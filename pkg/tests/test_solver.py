import numpy as np
import pytest

from rbdsde.condexp import RegressionBasis
from rbdsde.errors import BarrierTerminalConflict, NumericalBlowup, ShapeError
from rbdsde.model import CoefficientSpec, NoBarrier, ProblemSpec, TerminalSpec, zero_coefficient
from rbdsde.oracle import linear_g_continuum, reference_catalog
from rbdsde.paths import make_grid, simulate_ensemble
from rbdsde.solver import (SolverConfig, equation_residual, load_solution, picard_solve, reflect_step,
                           solve_bdsde, solve_reflected_bdsde)

from conftest import assert_invariants, problem


def test_reflect_step_examples():
    y, dK = reflect_step(np.array([1.0, -1.0]), np.array([0.0, 0.0]))
    np.testing.assert_array_equal(y, [1.0, 0.0])
    np.testing.assert_array_equal(dK, [0.0, 1.0])
    yh = np.array([0.3, -2.0])
    for sentinel in (NoBarrier, np.full(2, -np.inf)):
        y, dK = reflect_step(yh, sentinel)
        np.testing.assert_array_equal(y, yh)
        np.testing.assert_array_equal(dK, 0.0)
    y, dK = reflect_step(yh, yh.copy())
    np.testing.assert_array_equal(y, yh)
    np.testing.assert_array_equal(dK, 0.0)


def test_constant_solution_exact(small_ens, cfg):
    sol = solve_reflected_bdsde(problem("constant", c=1.0), small_ens, cfg)
    assert np.all(sol.Y == 1.0) and np.all(sol.Z == 0.0) and np.all(sol.K == 0.0)


def test_deterministic_barrier(small_ens, cfg):
    spec = problem("deterministic-barrier", level=0.5)
    sol = solve_reflected_bdsde(spec, small_ens, cfg)
    t = small_ens.grid.points
    assert np.max(np.abs(sol.Y - 0.5 * (1 - t))) <= 1e-8
    assert np.max(np.abs(sol.K - 0.5 * t)) <= 1e-8
    assert np.max(np.abs(sol.Z)) <= 1e-8
    assert_invariants(sol, spec)
    assert np.max(np.abs(equation_residual(sol, spec))) <= 1e-12


def test_martingale(mid_ens):
    spec = problem("martingale")
    sol = solve_reflected_bdsde(spec, mid_ens, SolverConfig(RegressionBasis(1)))
    W = mid_ens.W[:, :, 0]
    assert np.sqrt(np.mean((sol.Y - W) ** 2)) <= 0.05
    assert abs(sol.Z[:, :, 0].mean() - 1.0) <= 0.05
    assert np.all(sol.K == 0.0)
    # the pathwise defect is the accumulated regression error
    assert np.sqrt(np.mean(equation_residual(sol, spec) ** 2)) <= 0.05


@pytest.mark.parametrize("block", [
    {"family": "linear", "params": {"f_y": 0.3, "g_y": 0.2, "g_z": 0.3}},
    {"family": "sinusoidal", "params": {"f_a": 0.5, "g_a": 0.3, "f_0": 0.2}},
    {"family": "affine", "params": {"f_0": 0.2, "g_0": 0.1}, "barrier": {"kind": "constant", "level": -0.5}},
])
def test_no_barrier_reduction_bit_exact(small_ens, cfg, block):
    from rbdsde.families import build_problem
    block = dict(block)
    block.pop("barrier", None)
    spec = build_problem(block, 1.0)
    a = solve_reflected_bdsde(spec, small_ens, cfg)
    b = solve_bdsde(spec, small_ens, cfg)
    assert np.array_equal(a.Y, b.Y) and np.array_equal(a.Z, b.Z) and np.array_equal(a.K, b.K)


@pytest.mark.parametrize("lam", [2.0, 0.5])
@pytest.mark.parametrize("mode", ["implicit", "explicit"])
def test_positive_homogeneity_bit_exact(small_ens, lam, mode):
    # power-of-two factors keep every floating-point product exact
    cfg = SolverConfig(RegressionBasis(2), mode)
    base = {"xi_a": 0.2, "xi_b": 1.0, "f_y": 0.3, "f_z": 0.2, "g_y": 0.2, "g_z": 0.1}
    scaled = dict(base, xi_a=lam * 0.2, xi_b=lam * 1.0)
    s1 = problem("linear", barrier={"kind": "terminal-shift", "shift": 0.25}, **base)
    s2 = problem("linear", barrier={"kind": "terminal-shift", "shift": lam * 0.25}, **scaled)
    a = solve_reflected_bdsde(s1, small_ens, cfg).scaled(lam)
    b = solve_reflected_bdsde(s2, small_ens, cfg)
    assert np.array_equal(a.Y, b.Y) and np.array_equal(a.Z, b.Z) and np.array_equal(a.K, b.K)


def test_linear_f_ode_implicit():
    ens = simulate_ensemble(make_grid(1.0, 200), 500, 1, seed=1)
    spec = problem("linear", xi_a=1.0, xi_b=0.0, f_y=-0.1)
    sol = solve_reflected_bdsde(spec, ens, SolverConfig(RegressionBasis(2), "implicit", 20))
    assert np.all(np.abs(sol.Y[:, 0] - np.exp(-0.1)) <= 1e-3)
    ref = reference_catalog("linear_f_ode", ens.grid, ens, r=0.1, c=1.0)
    assert np.max(np.abs(sol.Y - ref.Y)) <= 1e-12


def test_linear_g_against_continuum_reference():
    # reference validated by substitution in tests/test_oracle.py
    ens = simulate_ensemble(make_grid(1.0, 50), 10_000, 1, seed=4)
    spec = problem("linear", xi_a=1.0, xi_b=1.0, g_y=0.3)
    sol = solve_bdsde(spec, ens, SolverConfig(RegressionBasis(2, backward_features="increment_and_tail")))
    Y_ref, _ = linear_g_continuum(ens, 0.3, 1.0)
    rel = np.sqrt(np.mean((sol.Y[:, 0] - Y_ref[:, 0]) ** 2) / np.mean(Y_ref[:, 0] ** 2))
    assert rel <= 0.02


@pytest.mark.parametrize("block", [
    {"family": "linear", "params": {"f_y": 0.3, "g_y": 0.2}, "barrier": {"kind": "terminal-shift", "shift": 0.2}},
    {"family": "american-put", "barrier": {"kind": "payoff"}},
    {"family": "sinusoidal", "params": {"f_a": 0.5, "f_z": 0.3, "g_a": 0.3},
     "barrier": {"kind": "terminal-shift", "shift": 0.0}},
    {"family": "deterministic-barrier"},
])
@pytest.mark.parametrize("mode", ["implicit", "explicit"])
def test_invariants_exact(small_ens, block, mode):
    from rbdsde.families import build_problem
    spec = build_problem(block, 1.0)
    assert_invariants(solve_reflected_bdsde(spec, small_ens, SolverConfig(RegressionBasis(2), mode)), spec)


def test_picard_trivial_problem(small_ens, cfg):
    sol, hist = picard_solve(problem("martingale"), small_ens, cfg, outer_iters=10)
    assert hist.tolist() == [0.0]


def test_picard_contracts(small_ens, cfg):
    spec = problem("sinusoidal", xi_b=1.0, f_a=0.5, f_0=0.3)  # C T = 0.5 < 1
    _, hist = picard_solve(spec, small_ens, cfg, outer_iters=6)
    assert np.all(np.diff(hist) < 0)
    ratios = hist[1:] / hist[:-1]
    assert np.all(ratios <= 0.5)


def test_picard_matches_implicit(small_ens):
    spec = problem("linear", xi_a=0.5, f_y=0.5, f_z=0.3, barrier={"kind": "terminal-shift", "shift": 0.1})
    # enough inner sweeps to reach the implicit fixed point (3 sweeps leave an O((C dt)^3) gap)
    cfg = SolverConfig(RegressionBasis(2), "implicit", 10)
    pic, hist = picard_solve(spec, small_ens, cfg, outer_iters=40)
    direct = solve_reflected_bdsde(spec, small_ens, cfg)
    assert hist[-1] < 1e-20
    assert np.max(np.abs(pic.Y - direct.Y)) <= 1e-6
    assert_invariants(pic, spec)


def test_blowup_reports_step(small_ens, cfg):
    c = CoefficientSpec(lambda t, y, z: 1e308 * (y + 2.0), zero_coefficient, 1.0, 0.5)
    spec = ProblemSpec(c, TerminalSpec(lambda w: np.ones(w.shape[0])), NoBarrier, 1.0)
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NumericalBlowup) as exc:
        solve_reflected_bdsde(spec, small_ens, cfg)
    assert exc.value.step == small_ens.grid.n_steps_M - 1


def test_terminal_below_barrier(small_ens, cfg):
    from rbdsde.model import BarrierSpec
    c = CoefficientSpec(zero_coefficient, zero_coefficient, 1.0, 0.5)
    spec = ProblemSpec(c, TerminalSpec(lambda w: w[:, 0]), BarrierSpec(lambda t, w: w[:, 0] + 0.1), 1.0)
    with pytest.raises(BarrierTerminalConflict):
        solve_reflected_bdsde(spec, small_ens, cfg)


def test_dimension_mismatch(small_ens, cfg):
    with pytest.raises(ShapeError):
        solve_reflected_bdsde(problem("martingale", d=2), small_ens, cfg)


def test_two_dimensional(cfg):
    ens = simulate_ensemble(make_grid(1.0, 10), 3000, 2, seed=2)
    spec = problem("linear", d=2, f_y=0.2, f_z=0.3, barrier={"kind": "terminal-shift", "shift": 0.1})
    sol = solve_reflected_bdsde(spec, ens, cfg)
    assert sol.Z.shape == (3000, 10, 2)
    assert_invariants(sol, spec)


def test_solution_io(tmp_path, small_ens, cfg):
    sol = solve_reflected_bdsde(problem("linear", f_y=0.2), small_ens, cfg)
    sol.save_binary(tmp_path / "sol.bin")
    back = load_solution(tmp_path / "sol.bin")
    assert np.array_equal(back.Y, sol.Y) and np.array_equal(back.Z, sol.Z) and np.array_equal(back.K, sol.K)
    assert np.array_equal(back.ensemble.W, small_ens.W)
    sol.to_csv(tmp_path / "sol.csv")
    table = np.loadtxt(tmp_path / "sol.csv", delimiter=",", skiprows=1)
    header = (tmp_path / "sol.csv").read_text().splitlines()[0]
    assert header == "path,step,t,Y,Z_1,K"
    assert table.shape == (small_ens.n_paths * 21, 6)
    assert table[5, 3] == sol.Y[0, 5]


def test_meta_records_provenance(small_ens, cfg):
    sol = solve_reflected_bdsde(problem("constant"), small_ens, cfg)
    assert sol.meta["seed"] == 42 and sol.meta["config"]["f_step_mode"] == "implicit"
    assert len(sol.meta["problem_hash"]) == 16
