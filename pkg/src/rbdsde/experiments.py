"""Study drivers behind the command line.

Each study takes a resolved :class:`ExperimentConfig` and returns a
:class:`StudyResult`: a JSON-ready ``results`` dict, named boolean ``checks``
and plot rows for ``plotdata.csv``. Nothing time- or machine-dependent enters
``results``, so equal configs give equal reports.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .approx import TruncationLevels, cauchy_study
from .condexp import RegressionBasis
from .errors import ConfigError
from .estimates import (check_ito_p, check_lemma31, check_lemma32, check_lemma33, lp_norms,
                        skorokhod_residual)
from .families import build_problem
from .model import CoefficientSpec, ProblemSpec, TerminalSpec, validate_problem
from .oracle import compare_solutions, reference_catalog, snell_lattice
from .paths import make_grid, simulate_ensemble
from .solver import SolverConfig, barrier_matrix, solve_reflected_bdsde

STUDIES = ("solve", "verify-estimates", "truncation-study", "convergence-study", "oracle-compare")
DEFAULT_D_CONST = {"lemma31": 50.0, "lemma32": 50.0, "lemma33": 50.0}


@dataclass
class ExperimentConfig:
    study: str
    problem: dict
    T: float
    M: int
    N: int
    seed: int
    solver: SolverConfig
    d_const: dict = field(default_factory=lambda: dict(DEFAULT_D_CONST))
    params: dict = field(default_factory=dict)
    battery: list = field(default_factory=list)
    solution_csv: bool = False
    out_dir: str | None = None
    threads: int = 1

    @property
    def d(self) -> int:
        return int((self.problem or (self.battery or [{}])[0]).get("d", 1))

    def to_dict(self):
        return {"study": self.study, "problem": self.problem, "grid": {"T": self.T, "M": self.M},
                "ensemble": {"N": self.N, "d": self.d, "seed": self.seed},
                "solver": self.solver.to_dict(), "d_const": self.d_const, "params": self.params,
                "battery": self.battery}


def _need(block, key, where):
    if not isinstance(block, dict) or key not in block:
        raise ConfigError(f"missing '{key}' in {where}")
    return block[key]


def parse_config(raw: dict, study: str | None = None, seed=None, paths=None, steps=None,
                 threads: int = 1) -> ExperimentConfig:
    """Resolve a config document (plus command-line overrides) or raise :class:`ConfigError`."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    study = study or raw.get("study")
    if study not in STUDIES:
        raise ConfigError(f"unknown study {study!r}; known: {list(STUDIES)}")
    grid = _need(raw, "grid", "config")
    ens = _need(raw, "ensemble", "config")
    try:
        T = float(_need(grid, "T", "grid"))
        M = int(steps if steps is not None else _need(grid, "M", "grid"))
        N = int(paths if paths is not None else _need(ens, "N", "ensemble"))
        seed_v = int(seed if seed is not None else _need(ens, "seed", "ensemble (seed is mandatory)"))
        s = raw.get("solver", {})
        solver = SolverConfig(RegressionBasis(int(s.get("degree", 2)), bool(s.get("ridge", True)),
                                              s.get("backward_features", "increment")),
                              s.get("f_step_mode", "implicit"), int(s.get("inner_picard_iters", 3)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    problem = dict(raw.get("problem", {}))
    battery = [dict(b) for b in raw.get("battery", [])]
    if not problem and not battery:
        raise ConfigError("config needs a 'problem' (or a 'battery' for verify-estimates)")
    if "d" in ens:
        if problem:
            problem.setdefault("d", int(ens["d"]))
        for b in battery:
            b.setdefault("d", int(ens["d"]))
    # resolve every named problem now so misspellings fail as parse errors
    for block in ([problem] if problem else []) + battery:
        build_problem(block, T)
    d_const = dict(DEFAULT_D_CONST, **raw.get("d_const", {}))
    out = raw.get("output", {})
    cfg = ExperimentConfig(study, problem, T, M, N, seed_v, solver, d_const, dict(raw.get("params", {})),
                           battery, bool(out.get("solution_csv", False)), out.get("dir"), int(threads))
    return cfg


@dataclass
class StudyResult:
    results: dict
    checks: dict
    plot_header: list
    plot_rows: list
    solution: object = None

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _ensemble(cfg: ExperimentConfig, M=None, d=None):
    return simulate_ensemble(make_grid(cfg.T, M or cfg.M), cfg.N, d or cfg.d, cfg.seed, workers=cfg.threads)


def solution_invariants(sol, spec: ProblemSpec) -> dict:
    """Exact checks every solver output must satisfy."""
    L = barrier_matrix(spec, sol.ensemble)
    xi = spec.xi(sol.ensemble.W[:, -1])
    return {
        "K0_zero": bool(np.all(sol.K[:, 0] == 0)),
        "K_nondecreasing": bool(np.all(np.diff(sol.K, axis=1) >= 0)),
        "Y_above_barrier": True if L is None else bool(np.all(sol.Y >= L)),
        "skorokhod_zero": skorokhod_residual(sol, spec) == 0.0,
        "terminal_matches": bool(np.array_equal(sol.Y[:, -1], xi)),
        "finite": bool(np.all(np.isfinite(sol.Y)) and np.all(np.isfinite(sol.Z))),
    }


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0


def run_solve(cfg: ExperimentConfig) -> StudyResult:
    spec = build_problem(cfg.problem, cfg.T)
    report = validate_problem(spec, pilot_paths=int(cfg.params.get("pilot_paths", 20000)), seed=cfg.seed)
    ens = _ensemble(cfg)
    sol = solve_reflected_bdsde(spec, ens, cfg.solver)
    p = spec.exponent_p
    y0, y0_se = _mean_se(sol.Y[:, 0])
    checks = solution_invariants(sol, spec)
    results = {"problem_digest": spec.digest(), "validation": report.to_dict(),
               "Y0": {"mean": y0, "se": y0_se}, "norms": lp_norms(sol, p).to_dict(),
               "skorokhod_residual": skorokhod_residual(sol, spec), "invariants": checks}
    rows = [[float(t), float(sol.Y[:, i].mean()), float(sol.K[:, i].mean())]
            for i, t in enumerate(ens.grid.points)]
    return StudyResult(results, checks, ["t", "mean_Y", "mean_K"], rows, sol)


def perturb_problem(spec: ProblemSpec, xi_shift: float = 0.0, f_shift: float = 0.0) -> ProblemSpec:
    """Same problem with ``xi + xi_shift`` and ``f + f_shift`` (barrier unchanged)."""
    phi, f, c = spec.terminal.phi, spec.coeffs.f, spec.coeffs
    d = spec.dim_d
    coeffs = CoefficientSpec(lambda t, y, z: f(t, y, z) + f_shift, c.g, c.lipschitz_C, c.contraction_alpha,
                             f_zero=lambda t: c.f0(t, d) + f_shift, g_zero=c.g_zero)
    terminal = TerminalSpec(lambda w: phi(w) + xi_shift, spec.terminal.p_moment_finite,
                            spec.terminal.sq_moment_finite)
    label = dict(spec.label, perturbation={"xi_shift": xi_shift, "f_shift": f_shift})
    return replace(spec, coeffs=coeffs, terminal=terminal, label=label)


def verify_instance(spec: ProblemSpec, ens, solver: SolverConfig, d_const: dict, xi_shift=0.1, f_shift=0.1,
                    ito_pairs=None) -> dict:
    """Solve one instance (and its perturbation) and evaluate every estimate."""
    sol = solve_reflected_bdsde(spec, ens, solver)
    pert = perturb_problem(spec, xi_shift, f_shift)
    sol2 = solve_reflected_bdsde(pert, ens, solver)
    M = ens.grid.n_steps_M
    margins = {
        "lemma31": check_lemma31(sol, spec, d_const["lemma31"]),
        "lemma32": check_lemma32(sol, spec, d_const["lemma32"]),
        "lemma33": check_lemma33(sol2, sol, pert, spec, d_const["lemma33"]),
    }
    for i, j in ito_pairs or [(0, M), (M // 2, M)]:
        margins[f"ito_p_{i}_{j}"] = check_ito_p(sol, spec, i, j)
    mart_ok = all(m.diagnostics[k]["within_3se"] for name, m in margins.items() if name.startswith("ito")
                  for k in ("dB_martingale", "dW_martingale"))
    return {"norms": lp_norms(sol, spec.exponent_p).to_dict(),
            "margins": {k: m.to_dict() for k, m in margins.items()},
            "margins_pass": all(m.passed for m in margins.values()),
            "martingale_terms_within_3se": bool(mart_ok),
            "skorokhod_residual": skorokhod_residual(sol, spec)}


def run_verify_estimates(cfg: ExperimentConfig) -> StudyResult:
    blocks = cfg.battery or [cfg.problem]
    xi_shift = float(cfg.params.get("xi_shift", 0.1))
    f_shift = float(cfg.params.get("f_shift", 0.1))
    pairs = [tuple(p) for p in cfg.params["ito_pairs"]] if "ito_pairs" in cfg.params else None
    ens = _ensemble(cfg)
    out, checks, rows = [], {}, []
    for k, block in enumerate(blocks):
        spec = build_problem(block, cfg.T)
        res = verify_instance(spec, ens, cfg.solver, cfg.d_const, xi_shift, f_shift, pairs)
        res["problem"] = spec.label
        out.append(res)
        checks[f"instance_{k}_margins"] = res["margins_pass"]
        checks[f"instance_{k}_martingale_terms"] = res["martingale_terms_within_3se"]
        checks[f"instance_{k}_skorokhod"] = res["skorokhod_residual"] == 0.0
        m = res["margins"]
        rows.append([k] + [m[n]["lhs"] / m[n]["rhs"] if m[n]["rhs"] > 0 else 0.0
                           for n in ("lemma31", "lemma32", "lemma33")])
    return StudyResult({"instances": out}, checks, ["instance", "lemma31_ratio", "lemma32_ratio", "lemma33_ratio"],
                       rows)


def run_truncation_study(cfg: ExperimentConfig) -> StudyResult:
    spec = build_problem(cfg.problem, cfg.T)
    try:
        levels = TruncationLevels(tuple(cfg.params.get("levels", (2, 4, 8, 16, 32))),
                                  tuple(cfg.params.get("m_levels", ())))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    rep = cauchy_study(spec, _ensemble(cfg), cfg.solver, levels)
    res = rep.to_dict()
    res["final_over_first_D"] = rep.D[-1] / rep.D[0] if rep.D[0] > 0 else None
    res["problem_digest"] = spec.digest()
    checks = {"D_strictly_decreasing": rep.strictly_decreasing}
    if "max_final_over_first" in cfg.params:
        checks["final_over_first_D"] = res["final_over_first_D"] <= float(cfg.params["max_final_over_first"])
    rows = [[a, b, D, se, R] for a, b, D, se, R in zip(rep.levels, rep.levels[1:], rep.D, rep.D_se, rep.R)]
    return StudyResult(res, checks, ["n", "n_next", "D", "D_se", "R"], rows)


# continuous-time Y_0 of the convergence cases (problem built by the catalog)
_CONVERGENCE_CASES = {
    "martingale": (lambda T, xi_a=0.0, xi_b=1.0: xi_a,
                   lambda xi_a=0.0, xi_b=1.0: {"family": "martingale", "params": {"xi_a": xi_a, "xi_b": xi_b}}),
    "linear_f_ode": (lambda T, r=0.1, c=1.0: c * np.exp(-r * T),
                     lambda r=0.1, c=1.0: {"family": "linear", "params": {"xi_a": c, "xi_b": 0.0, "f_y": -r}}),
}


def log_log_rate(Ms, errors) -> float:
    """Negative least-squares slope of ``log error`` against ``log M``."""
    slope = np.polyfit(np.log(np.asarray(Ms, float)), np.log(np.asarray(errors, float)), 1)[0]
    return float(-slope)


def convergence_case(case: str, T: float, Ms, N: int, seed: int, solver: SolverConfig, threads: int = 1,
                     **params) -> dict:
    if case not in _CONVERGENCE_CASES:
        raise ConfigError(f"unknown convergence case {case!r}; known: {sorted(_CONVERGENCE_CASES)}")
    exact_fn, block_fn = _CONVERGENCE_CASES[case]
    exact = float(exact_fn(T, **params))
    spec = build_problem(block_fn(**params), T)
    errs, ses = [], []
    for M in Ms:
        ens = simulate_ensemble(make_grid(T, M), N, 1, seed, workers=threads)
        sol = solve_reflected_bdsde(spec, ens, solver)
        y0, se = _mean_se(sol.Y[:, 0])
        errs.append(abs(y0 - exact))
        ses.append(se)
    rate = log_log_rate(Ms, errs) if all(e > 0 for e in errs) else float("inf")
    return {"case": case, "exact_Y0": exact, "M": list(Ms), "error": errs, "se": ses, "rate": rate,
            "decreasing": all(b < a for a, b in zip(errs, errs[1:]))}


def run_convergence_study(cfg: ExperimentConfig) -> StudyResult:
    Ms = [int(m) for m in cfg.params.get("M_list", (25, 50, 100, 200))]
    min_rate = float(cfg.params.get("min_rate", 0.4))
    cases = cfg.params.get("cases", [{"case": "martingale"}, {"case": "linear_f_ode"}])
    out, checks, rows = [], {}, []
    for c in cases:
        c = dict(c)
        name = c.pop("case")
        r = convergence_case(name, cfg.T, Ms, cfg.N, cfg.seed, cfg.solver, cfg.threads, **c)
        out.append(r)
        checks[f"{name}_decreasing"] = r["decreasing"]
        checks[f"{name}_rate"] = r["rate"] >= min_rate
        rows += [[name, M, e, s] for M, e, s in zip(Ms, r["error"], r["se"])]
    return StudyResult({"cases": out, "min_rate": min_rate}, checks, ["case", "M", "error", "se"], rows)


def run_oracle_compare(cfg: ExperimentConfig) -> StudyResult:
    spec = build_problem(cfg.problem, cfg.T)
    ens = _ensemble(cfg)
    sol = solve_reflected_bdsde(spec, ens, cfg.solver)
    p = spec.exponent_p
    oracle = cfg.params.get("oracle", {"kind": "lattice"})
    kind = oracle.get("kind", "lattice")
    checks = solution_invariants(sol, spec)
    if kind == "lattice":
        steps = int(oracle.get("steps", 1000))
        tol = float(oracle.get("tol", 0.02))
        lat = snell_lattice(spec, steps)
        half = snell_lattice(spec, steps // 2)
        err = compare_solutions(sol, lat, p)
        y0, se = _mean_se(sol.Y[:, 0])
        res = {"oracle": "lattice", "steps": steps, "lattice_Y0": lat.Y0, "lattice_Y0_half_steps": half.Y0,
               "richardson_gap": abs(lat.Y0 - half.Y0), "solver_Y0": {"mean": y0, "se": se},
               "abs_error": err.y0_abs_error, "tol": tol}
        checks["Y0_within_tol"] = err.y0_abs_error <= tol
        rows = [[steps // 2, half.Y0], [steps, lat.Y0]]
        return StudyResult(res, checks, ["lattice_steps", "lattice_Y0"], rows, sol)
    if kind == "catalog":
        case = oracle["case"]
        tol = float(oracle.get("tol", 1e-8))
        ref = reference_catalog(case, ens.grid, ens, **oracle.get("params", {}))
        err = compare_solutions(sol, ref, p)
        res = {"oracle": "catalog", "case": case, "derivation": ref.meta["derivation"],
               "self_check": ref.meta["self_check"], "errors": err.to_dict(), "tol": tol}
        checks["sup_error_within_tol"] = err.sup_abs_error <= tol
        rows = [[float(t), float(np.max(np.abs(sol.Y[:, i] - ref.Y[:, i])))] for i, t in enumerate(ens.grid.points)]
        return StudyResult(res, checks, ["t", "max_abs_Y_error"], rows, sol)
    raise ConfigError(f"unknown oracle kind {kind!r}")


RUNNERS = {
    "solve": run_solve,
    "verify-estimates": run_verify_estimates,
    "truncation-study": run_truncation_study,
    "convergence-study": run_convergence_study,
    "oracle-compare": run_oracle_compare,
}
