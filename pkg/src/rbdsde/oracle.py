"""Reference solutions independent of the regression solver.

* :func:`snell_lattice` - dynamic programming on a symmetric binomial walk for
  problems without the backward noise (``g = 0``) in dimension one.
* :func:`reference_catalog` - closed-form triples that satisfy the discrete
  equation exactly on a given grid (and ensemble, for path-dependent cases).
* :func:`compare_solutions` - error summary between two solutions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OracleUnsupported, ShapeError, UnknownCase
from .families import build_problem
from .model import ProblemSpec
from .paths import PathEnsemble, TimeGrid, make_grid
from .solver import DiscreteSolution

SELF_CHECK_TOL = 1e-8


@dataclass
class LatticeSolution:
    """Node values per level: ``values[i]`` holds ``i + 1`` nodes ``w = (2j - i) sqrt(dt)``."""

    values: list
    exercise: list
    grid: TimeGrid

    @property
    def Y0(self) -> float:
        return float(self.values[0][0])

    def nodes(self, i: int) -> np.ndarray:
        return (2 * np.arange(i + 1) - i) * np.sqrt(self.grid.dt)


def _probe_unsupported(spec: ProblemSpec):
    rng = np.random.default_rng(0)
    y = rng.normal(0.0, 3.0, 256)
    z = rng.normal(0.0, 3.0, (256, spec.dim_d))
    for t in np.linspace(0.0, spec.horizon_T, 5):
        if np.any(spec.coeffs.g(t, y, z) != 0):
            raise OracleUnsupported("lattice oracle needs g == 0")
        if not np.array_equal(spec.coeffs.f(t, y, z), spec.coeffs.f(t, y, np.zeros_like(z))):
            raise OracleUnsupported("lattice oracle needs f independent of z")


def snell_lattice(spec: ProblemSpec, steps: int) -> LatticeSolution:
    """``Y = max(L, E[Y_next] + dt f(t, E[Y_next]))`` backwards from ``Y_T = xi``."""
    if spec.dim_d != 1:
        raise OracleUnsupported("lattice oracle is one-dimensional")
    _probe_unsupported(spec)
    grid = make_grid(spec.horizon_T, steps)
    dt = grid.dt
    sq = np.sqrt(dt)
    values = [None] * (steps + 1)
    exercise = [None] * (steps + 1)
    w = ((2 * np.arange(steps + 1) - steps) * sq)[:, None]
    Y = spec.xi(w)
    values[steps] = Y
    exercise[steps] = np.zeros(steps + 1, dtype=bool)
    for i in range(steps - 1, -1, -1):
        t = grid.t(i)
        cont = 0.5 * (Y[:-1] + Y[1:])
        cont = cont + dt * spec.coeffs.f(t, cont, np.zeros((i + 1, 1)))
        w = ((2 * np.arange(i + 1) - i) * sq)[:, None]
        L = spec.barrier_at(t, w)
        if L is None:
            Y, ex = cont, np.zeros(i + 1, dtype=bool)
        else:
            Y, ex = np.maximum(cont, L), L > cont
        values[i], exercise[i] = Y, ex
    return LatticeSolution(values, exercise, grid)


# -- closed-form catalog -------------------------------------------------------

CATALOG_NOTES = {
    "constant": "xi = c, f = g = 0: Y = c, Z = 0, K = 0 at every step.",
    "martingale": "xi = a + b W_T, f = g = 0: Y_i = a + b W_i satisfies Y_i = Y_{i+1} - b dW_i, so Z = b, K = 0.",
    "deterministic_barrier": (
        "xi = 0, f = g = 0, L_t = level (1 - t/T) decreasing: the envelope equals the barrier, "
        "Y_i = L_i, and each step pushes dK_i = L_i - L_{i+1}, so K_i = level t_i / T."),
    "linear_f_ode": (
        "xi = c, f = -r y, g = 0: the implicit step Y_i = Y_{i+1} - r dt Y_i gives "
        "Y_i = c (1 + r dt)^-(M - i), which tends to c exp(-r (T - t)) as dt -> 0."),
    "linear_g": (
        "xi = a + W_T, f = 0, g = beta y with g at the right endpoint: with P_i = prod_{j >= i} (1 + beta dB_j), "
        "Y_i = (a + W_i) P_i and Z_i = P_i satisfy Y_i = Y_{i+1} + beta Y_{i+1} dB_i - Z_i dW_i exactly; "
        "P_i tends to exp(beta (B_T - B_t) - beta^2 (T - t) / 2)."),
}

_CATALOG_PROBLEMS = {
    "constant": lambda c=1.0: {"family": "constant", "params": {"c": c}},
    "martingale": lambda xi_a=0.0, xi_b=1.0: {"family": "martingale", "params": {"xi_a": xi_a, "xi_b": xi_b}},
    "deterministic_barrier": lambda level=0.5: {"family": "deterministic-barrier", "params": {"level": level}},
    "linear_f_ode": lambda r=0.1, c=1.0: {"family": "linear", "params": {"xi_a": c, "xi_b": 0.0, "f_y": -r}},
    "linear_g": lambda beta=0.3, xi_a=0.0: {"family": "linear", "params": {"xi_a": xi_a, "xi_b": 1.0, "g_y": beta}},
}

PATH_CASES = ("martingale", "linear_g")


def catalog_problem(case_id: str, T: float, **params) -> ProblemSpec:
    """The problem whose exact discrete solution ``reference_catalog`` returns."""
    if case_id not in _CATALOG_PROBLEMS:
        raise UnknownCase(case_id)
    return build_problem(_CATALOG_PROBLEMS[case_id](**params), T)


def step_residuals(sol: DiscreteSolution, spec: ProblemSpec) -> np.ndarray:
    """Per-step defect ``Y_i - Y_{i+1} - dt f_i - g_{i+1} dB_i - dK_i + Z_i dW_i``, shape ``(N, M)``."""
    grid = sol.grid
    N, M1 = sol.Y.shape
    M = M1 - 1
    d = sol.Z.shape[2]
    ens = sol.ensemble
    out = np.empty((N, M))
    zero_z = np.zeros((N, d))
    for i in range(M):
        y, y1, z = sol.Y[:, i], sol.Y[:, i + 1], sol.Z[:, i]
        z1 = sol.Z[:, i + 1] if i + 1 < M else zero_z
        dW = ens.dW(i) if ens is not None else np.zeros((N, d))
        dB = ens.dB(i) if ens is not None else np.zeros(N)
        out[:, i] = (y - y1 - grid.dt * spec.coeffs.f(grid.t(i), y, z)
                     - spec.coeffs.g(grid.t(i + 1), y1, z1) * dB
                     - (sol.K[:, i + 1] - sol.K[:, i]) + np.sum(z * dW, axis=1))
    return out


def reference_catalog(case_id: str, grid: TimeGrid, ensemble: PathEnsemble | None = None,
                      **params) -> DiscreteSolution:
    """Closed-form triple for ``case_id`` on ``grid``.

    Deterministic cases return a single path unless an ensemble is given (then
    they are broadcast to it); ``martingale`` and ``linear_g`` need the
    ensemble. ``meta`` carries the derivation note and the self-check value
    (max per-step defect of the discrete equation).
    """
    if case_id not in _CATALOG_PROBLEMS:
        raise UnknownCase(case_id)
    if case_id in PATH_CASES and ensemble is None:
        raise ValueError(f"case {case_id!r} needs an ensemble")
    if ensemble is not None and ensemble.grid != grid:
        raise ShapeError("ensemble grid differs from the requested grid")
    M = grid.n_steps_M
    t = grid.points
    N = 1 if ensemble is None else ensemble.n_paths
    d = 1 if ensemble is None else ensemble.dim
    Y = np.zeros((N, M + 1))
    Z = np.zeros((N, M, d))
    K = np.zeros((N, M + 1))

    if case_id == "constant":
        Y[:] = params.get("c", 1.0)
    elif case_id == "martingale":
        a, b = params.get("xi_a", 0.0), params.get("xi_b", 1.0)
        Y[:] = a + b * ensemble.W[:, :, 0]
        Z[:, :, 0] = b
    elif case_id == "deterministic_barrier":
        level = params.get("level", 0.5)
        Y[:] = level * (1.0 - t / grid.horizon_T)
        K[:] = level * t / grid.horizon_T
    elif case_id == "linear_f_ode":
        r, c = params.get("r", 0.1), params.get("c", 1.0)
        Y[:] = c * (1.0 + r * grid.dt) ** -(M - np.arange(M + 1.0))
    elif case_id == "linear_g":
        beta, a = params.get("beta", 0.3), params.get("xi_a", 0.0)
        factors = 1.0 + beta * np.diff(ensemble.B, axis=1)
        P = np.ones((N, M + 1))
        P[:, :-1] = np.cumprod(factors[:, ::-1], axis=1)[:, ::-1]
        Y[:] = (a + ensemble.W[:, :, 0]) * P
        Z[:, :, 0] = P[:, :-1]

    sol = DiscreteSolution(Y, Z, K, grid, {"case": case_id, "params": params,
                                           "derivation": CATALOG_NOTES[case_id]}, ensemble)
    spec = catalog_problem(case_id, grid.horizon_T, **params)
    sol.meta["self_check"] = float(np.max(np.abs(step_residuals(sol, spec))))
    return sol


def linear_g_continuum(ensemble: PathEnsemble, beta: float, xi_a: float = 0.0):
    """Continuous-time candidate ``Y_t = (a + W_t) E_t`` with ``E_t = exp(beta (B_T - B_t) - beta^2 (T - t) / 2)``, ``Z_t = E_t``."""
    t = ensemble.grid.points
    T = ensemble.grid.horizon_T
    E = np.exp(beta * (ensemble.B[:, -1:] - ensemble.B) - 0.5 * beta**2 * (T - t))
    Y = (xi_a + ensemble.W[:, :, 0]) * E
    Z = E[:, :-1, None]
    return Y, Z


# -- comparison ----------------------------------------------------------------

@dataclass
class ErrorReport:
    y0_abs_error: float
    sup_error_p: float | None = None
    sup_abs_error: float | None = None
    z_error_p: float | None = None
    k_sup_abs_error: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return dict(self.__dict__)


def compare_solutions(a: DiscreteSolution, b, p: float = 1.5) -> ErrorReport:
    """Discrepancies of ``a`` against ``b``.

    ``b`` may be a lattice solution (only ``Y_0`` is compared) or a discrete
    solution on the same grid with the same number of paths or a single
    deterministic path.
    """
    if isinstance(b, LatticeSolution):
        y0 = float(np.mean(a.Y[:, 0]))
        return ErrorReport(abs(y0 - b.Y0), extra={"a_Y0": y0, "b_Y0": b.Y0})
    if a.grid != b.grid:
        raise ShapeError("solutions live on different grids")
    if b.n_paths not in (1, a.n_paths):
        raise ShapeError("path counts differ and b is not path-free")
    dY = a.Y - b.Y
    dZ = a.Z - b.Z
    dK = a.K - b.K
    return ErrorReport(
        y0_abs_error=abs(float(np.mean(a.Y[:, 0]) - np.mean(b.Y[:, 0]))),
        sup_error_p=float(np.mean(np.max(np.abs(dY), axis=1) ** p)),
        sup_abs_error=float(np.max(np.abs(dY))),
        z_error_p=float(np.mean((np.sum(dZ**2, axis=(1, 2)) * a.grid.dt) ** (p / 2))),
        k_sup_abs_error=float(np.max(np.abs(dK))),
    )
