"""Backward regression scheme for the discretised reflected equation.

One step from ``t_{i+1}`` to ``t_i``::

    Z_i    = E_i[ (Y_{i+1} - E_i[Y_{i+1}]) dW_i ] / dt
    c_i    = E_i[ Y_{i+1} + g(t_{i+1}, Y_{i+1}, Z_{i+1}) dB_i ]
    Yhat_i = c_i + dt f(t_i, ., Z_i)          (explicit or fixed-point)
    Y_i    = max(Yhat_i, L_i),  dK_i = Y_i - Yhat_i

with ``E_i`` the regression estimate of :mod:`rbdsde.condexp`, ``Z_M = 0`` and
``K_{t_i} = sum_{j<i} dK_j``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .condexp import Projector, RegressionBasis
from .errors import BarrierTerminalConflict, NumericalBlowup, SingularRegression, ShapeError
from .model import NoBarrier, ProblemSpec
from .paths import (PathEnsemble, TimeGrid, make_grid, read_block, read_header,
                    write_block, write_header)

F_STEP_MODES = ("explicit", "implicit")


@dataclass(frozen=True)
class SolverConfig:
    basis: RegressionBasis = field(default_factory=RegressionBasis)
    f_step_mode: str = "implicit"
    inner_picard_iters: int = 3

    def __post_init__(self):
        if self.f_step_mode not in F_STEP_MODES:
            raise ValueError(f"f_step_mode must be one of {F_STEP_MODES}")
        if self.inner_picard_iters < 1:
            raise ValueError("inner_picard_iters must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class DiscreteSolution:
    """Per-path arrays ``Y (N, M+1)``, ``Z (N, M, d)``, ``K (N, M+1)``."""

    Y: np.ndarray
    Z: np.ndarray
    K: np.ndarray
    grid: TimeGrid
    meta: dict = field(default_factory=dict)
    ensemble: PathEnsemble | None = None

    @property
    def n_paths(self) -> int:
        return self.Y.shape[0]

    @property
    def dK(self) -> np.ndarray:
        return np.diff(self.K, axis=1)

    def scaled(self, lam: float) -> "DiscreteSolution":
        return DiscreteSolution(lam * self.Y, lam * self.Z, lam * self.K, self.grid,
                                dict(self.meta, scaled_by=lam), self.ensemble)

    def to_csv(self, path) -> None:
        """Long format: ``path, step, t, Y, Z_1..Z_d, K`` (Z at the last step is 0)."""
        N, M1 = self.Y.shape
        d = self.Z.shape[2]
        Zfull = np.concatenate([self.Z, np.zeros((N, 1, d))], axis=1)
        header = ",".join(["path", "step", "t", "Y"] + [f"Z_{k + 1}" for k in range(d)] + ["K"])
        t = self.grid.points
        cols = [np.repeat(np.arange(N), M1), np.tile(np.arange(M1), N), np.tile(t, N),
                self.Y.ravel()] + [Zfull[:, :, k].ravel() for k in range(d)] + [self.K.ravel()]
        table = np.column_stack(cols)
        fmt = ["%d", "%d"] + ["%.17g"] * (len(cols) - 2)
        np.savetxt(Path(path), table, delimiter=",", header=header, comments="", fmt=fmt)

    def save_binary(self, path) -> None:
        """Ensemble dump of :mod:`rbdsde.paths` followed by Y, Z and K blocks."""
        if self.ensemble is None:
            raise ValueError("solution carries no ensemble")
        ens = self.ensemble
        N, M1, d = ens.W.shape
        with open(Path(path), "wb") as fh:
            write_header(fh, N, M1 - 1, d, ens.seed, ens.grid.horizon_T)
            for block in (ens.W, ens.B, self.Y, self.Z, self.K):
                write_block(fh, block)


def load_solution(path) -> DiscreteSolution:
    with open(Path(path), "rb") as fh:
        N, M, d, seed, T = read_header(fh)
        W = read_block(fh, (N, M + 1, d))
        B = read_block(fh, (N, M + 1))
        Y = read_block(fh, (N, M + 1))
        Z = read_block(fh, (N, M, d))
        K = read_block(fh, (N, M + 1))
    grid = make_grid(T, M)
    return DiscreteSolution(Y, Z, K, grid, {"source": str(path)}, PathEnsemble(grid, W, B, seed))


def reflect_step(y_hat, barrier_values):
    """Push ``y_hat`` up to the barrier: returns ``(max(y_hat, L), push)``.

    The push is zero wherever ``y_hat >= L``, and ``y - L`` is exactly zero
    wherever the push is positive, so ``push * (y - L) == 0`` entrywise.
    """
    y_hat = np.asarray(y_hat, dtype=float)
    if barrier_values is NoBarrier or barrier_values is None:
        return y_hat, np.zeros_like(y_hat)
    barrier_values = np.asarray(barrier_values, dtype=float)
    if barrier_values.shape != y_hat.shape:
        raise ShapeError("y_hat and barrier differ in shape")
    y = np.maximum(y_hat, barrier_values)
    return y, y - y_hat


def _check(values, step):
    if not np.all(np.isfinite(values)):
        raise NumericalBlowup(step)
    return values


def _sweep(spec: ProblemSpec, ens: PathEnsemble, cfg: SolverConfig, reflect: bool, frozen=None):
    # overflow surfaces as NumericalBlowup through _check, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        return _sweep_inner(spec, ens, cfg, reflect, frozen)


def _sweep_inner(spec: ProblemSpec, ens: PathEnsemble, cfg: SolverConfig, reflect: bool, frozen=None):
    if ens.dim != spec.dim_d:
        raise ShapeError(f"ensemble dimension {ens.dim} != problem dimension {spec.dim_d}")
    if not np.isclose(ens.grid.horizon_T, spec.horizon_T, rtol=0, atol=1e-12):
        raise ShapeError("ensemble horizon differs from the problem horizon")
    grid = ens.grid
    N, M1, d = ens.W.shape
    M = M1 - 1
    dt = grid.dt
    f, g = spec.coeffs.f, spec.coeffs.g
    use_barrier = reflect and spec.has_barrier
    explicit = cfg.f_step_mode == "explicit"

    Y = np.empty((N, M1))
    Z = np.empty((N, M, d))
    dK = np.zeros((N, M))
    Y[:, M] = _check(spec.xi(ens.W[:, M]), M)
    if use_barrier:
        L_T = spec.barrier_at(grid.t(M), ens.W[:, M])
        if np.any(Y[:, M] < L_T):
            raise BarrierTerminalConflict("terminal value below the barrier on some paths")
    zero_z = np.zeros((N, d))
    Z_next = zero_z
    for i in range(M - 1, -1, -1):
        t_i, t_next = grid.t(i), grid.t(i + 1)
        try:
            proj = Projector(ens, i, cfg.basis)
        except SingularRegression as exc:
            raise SingularRegression(f"step {i}: {exc}") from exc
        y_next = Y[:, i + 1]
        dW, dB = ens.dW(i), ens.dB(i)
        if frozen is None:
            g_val = g(t_next, y_next, Z_next)
        else:
            Yk, Zk = frozen
            g_val = g(t_next, Yk[:, i + 1], Zk[:, i + 1] if i + 1 < M else zero_z)
        pred = proj.project(np.column_stack([y_next, y_next + g_val * dB]))
        y_mean, c = pred[:, 0], pred[:, 1]
        # centring leaves E_i[. dW] unchanged and gives Z = 0 for F_i-measurable Y_{i+1}
        Z_i = proj.project((y_next - y_mean)[:, None] * dW / dt)
        if frozen is not None:
            y_hat = c + dt * f(t_i, frozen[0][:, i], frozen[1][:, i])
        elif explicit:
            y_hat = c + dt * f(t_i, y_mean, Z_i)
        else:
            y_hat = c
            for _ in range(cfg.inner_picard_iters):
                y_hat = c + dt * f(t_i, y_hat, Z_i)
        if use_barrier:
            y_i, push = reflect_step(y_hat, spec.barrier_at(t_i, ens.W[:, i]))
            dK[:, i] = push
        else:
            y_i = y_hat
        Y[:, i] = _check(y_i, i)
        Z[:, i] = _check(Z_i, i)
        Z_next = Z_i
    K = np.zeros((N, M1))
    np.cumsum(dK, axis=1, out=K[:, 1:])
    return Y, Z, K


def _meta(kind, spec, ens, cfg, **extra):
    return dict({"solver": kind, "config": cfg.to_dict(), "seed": ens.seed,
                 "problem_hash": spec.digest(), "problem": spec.label}, **extra)


def solve_reflected_bdsde(spec: ProblemSpec, ensemble: PathEnsemble, cfg: SolverConfig | None = None) -> DiscreteSolution:
    """Backward regression solve of the reflected equation on ``ensemble``."""
    cfg = cfg or SolverConfig()
    Y, Z, K = _sweep(spec, ensemble, cfg, reflect=True)
    return DiscreteSolution(Y, Z, K, ensemble.grid, _meta("reflected", spec, ensemble, cfg), ensemble)


def solve_bdsde(spec: ProblemSpec, ensemble: PathEnsemble, cfg: SolverConfig | None = None) -> DiscreteSolution:
    """Same scheme without reflection (any barrier of ``spec`` is ignored)."""
    cfg = cfg or SolverConfig()
    Y, Z, K = _sweep(spec, ensemble, cfg, reflect=False)
    return DiscreteSolution(Y, Z, K, ensemble.grid, _meta("unreflected", spec, ensemble, cfg), ensemble)


def picard_solve(spec: ProblemSpec, ensemble: PathEnsemble, cfg: SolverConfig | None = None,
                 outer_iters: int = 20, tol: float = 0.0):
    """Global fixed-point iteration with the drivers frozen at the previous iterate.

    The first iterate freezes ``(Y, Z) = (0, 0)``. Entry ``k`` of the returned
    history is ``mean_n max_i |Y^{k+1} - Y^k|^p``; iteration stops early once
    an entry is ``<= tol``.
    """
    if outer_iters < 1:
        raise ValueError("outer_iters must be >= 1")
    cfg = cfg or SolverConfig()
    N, M1, d = ensemble.W.shape
    p = spec.exponent_p
    Y, Z, K = _sweep(spec, ensemble, cfg, True, (np.zeros((N, M1)), np.zeros((N, M1 - 1, d))))
    history = []
    for _ in range(outer_iters):
        Y_new, Z_new, K_new = _sweep(spec, ensemble, cfg, True, (Y, Z))
        dist = float(np.mean(np.max(np.abs(Y_new - Y), axis=1) ** p))
        history.append(dist)
        Y, Z, K = Y_new, Z_new, K_new
        if dist <= tol:
            break
    sol = DiscreteSolution(Y, Z, K, ensemble.grid,
                           _meta("picard", spec, ensemble, cfg, outer_iters=len(history)), ensemble)
    return sol, np.array(history)


def barrier_matrix(spec: ProblemSpec, ensemble: PathEnsemble):
    """Barrier values ``(N, M+1)`` along every path, or ``None``."""
    if not spec.has_barrier:
        return None
    grid = ensemble.grid
    return np.stack([spec.barrier_at(grid.t(i), ensemble.W[:, i])
                     for i in range(grid.n_steps_M + 1)], axis=1)


def driver_values(spec: ProblemSpec, sol: DiscreteSolution, Y=None, Z=None):
    """``f(t_i, Y_i, Z_i)`` for ``i < M`` and ``g(t_{i+1}, Y_{i+1}, Z_{i+1})`` for ``i < M``.

    ``Z_M`` is taken as zero.
    """
    Y = sol.Y if Y is None else Y
    Z = sol.Z if Z is None else Z
    N, M1 = Y.shape
    M = M1 - 1
    d = Z.shape[2]
    grid = sol.grid
    Zext = np.concatenate([Z, np.zeros((N, 1, d))], axis=1)
    fv = np.stack([spec.coeffs.f(grid.t(i), Y[:, i], Z[:, i]) for i in range(M)], axis=1)
    gv = np.stack([spec.coeffs.g(grid.t(i + 1), Y[:, i + 1], Zext[:, i + 1]) for i in range(M)], axis=1)
    return fv, gv


def equation_residual(sol: DiscreteSolution, spec: ProblemSpec) -> np.ndarray:
    """Per-path defect of the discrete equation between ``t_0`` and ``T``.

    ``Y_0 - [xi + dt sum f + sum g dB + K_T - K_0 - sum Z dW]`` with ``f`` at
    left endpoints and ``g`` at right endpoints.
    """
    ens = sol.ensemble
    if ens is None:
        raise ValueError("solution carries no ensemble")
    fv, gv = driver_values(spec, sol)
    dW = np.diff(ens.W, axis=1)
    dB = np.diff(ens.B, axis=1)
    rhs = (sol.Y[:, -1] + sol.grid.dt * fv.sum(axis=1) + np.sum(gv * dB, axis=1)
           + sol.K[:, -1] - sol.K[:, 0] - np.sum(sol.Z * dW, axis=(1, 2)))
    return sol.Y[:, 0] - rhs
