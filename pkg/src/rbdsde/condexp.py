"""Regression estimates of conditional expectations on the two-sided information.

At step ``i`` a path is summarised by ``W_{t_i}`` (d components) and the
backward increment ``dB_i = B_{t_{i+1}} - B_{t_i}``; optionally also by the
remaining backward tail ``B_T - B_{t_{i+1}}``. Targets are projected onto all
monomials of bounded total degree in these variables.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from math import comb

import numpy as np

from .errors import BudgetExceeded, SingularRegression
from .paths import PathEnsemble

RIDGE_SCALE = 1e-10
SINGULAR_RCOND = 1e-12

BACKWARD_FEATURES = ("increment", "increment_and_tail")


@dataclass(frozen=True)
class RegressionBasis:
    max_degree: int = 2
    ridge: bool = True
    backward_features: str = "increment"

    def __post_init__(self):
        if self.max_degree < 0:
            raise ValueError("max_degree must be >= 0")
        if self.backward_features not in BACKWARD_FEATURES:
            raise ValueError(f"backward_features must be one of {BACKWARD_FEATURES}")

    def n_variables(self, d: int) -> int:
        return d + (2 if self.backward_features == "increment_and_tail" else 1)

    def size(self, d: int) -> int:
        k = self.n_variables(d)
        return comb(k + self.max_degree, self.max_degree)

    def exponents(self, d: int) -> list[tuple[int, ...]]:
        """Multi-indices in graded order, constant first."""
        k = self.n_variables(d)
        out = []
        for deg in range(self.max_degree + 1):
            for combo in combinations_with_replacement(range(k), deg):
                e = [0] * k
                for v in combo:
                    e[v] += 1
                out.append(tuple(e))
        return out

    def features(self, ens: PathEnsemble, i: int) -> np.ndarray:
        cols = [ens.W[:, i, :], ens.dB(i)[:, None]]
        if self.backward_features == "increment_and_tail":
            cols.append((ens.B[:, -1] - ens.B[:, i + 1])[:, None])
        return np.concatenate(cols, axis=1)

    def design(self, ens: PathEnsemble, i: int) -> np.ndarray:
        x = self.features(ens, i)
        exps = self.exponents(ens.dim)
        X = np.empty((x.shape[0], len(exps)))
        for j, e in enumerate(exps):
            col = np.ones(x.shape[0])
            for v, power in enumerate(e):
                if power:
                    col = col * x[:, v] ** power
            X[:, j] = col
        return X


@dataclass
class CondExpEstimate:
    coefficients: np.ndarray
    predictions: np.ndarray
    residual_rms: float


class Projector:
    """Least-squares projection onto the basis at one time step.

    The normal equations are assembled once on column-scaled features and
    reused for every target. When the scaled Gram matrix is numerically
    singular a ridge term of ``1e-10 * trace / size`` is added (or
    :class:`SingularRegression` raised if ridge is disabled). The solve is
    linear in the targets, so scaling targets scales predictions.
    """

    def __init__(self, ens: PathEnsemble, i: int, basis: RegressionBasis):
        M = ens.grid.n_steps_M
        if not 0 <= i < M:
            raise ValueError(f"step must lie in [0, {M}), got {i}")
        X = basis.design(ens, i)
        N, P = X.shape
        if N <= P:
            raise ValueError(f"need more paths ({N}) than basis functions ({P})")
        scale = np.sqrt(np.mean(X**2, axis=0))
        scale[scale == 0] = 1.0
        Xs = X / scale
        G = Xs.T @ Xs / N
        eig = np.linalg.eigvalsh(G)
        self.ridged = bool(eig[0] <= SINGULAR_RCOND * eig[-1])
        if self.ridged:
            if not basis.ridge:
                raise SingularRegression(f"rank-deficient design at step {i} (eigenvalue ratio {eig[0] / eig[-1]:.3g})")
            G = G + RIDGE_SCALE * np.trace(G) / P * np.eye(P)
        self.X = X
        self._Xs = Xs
        self._scale = scale
        self._G = G
        self.n_paths = N

    def coefficients(self, targets: np.ndarray) -> np.ndarray:
        targets = np.asarray(targets, dtype=float)
        flat = targets.reshape(self.n_paths, -1)
        coef = np.empty((self.X.shape[1], flat.shape[1]))
        varying = np.ptp(flat, axis=0) != 0
        # constant targets are reproduced exactly
        coef[:, ~varying] = 0.0
        coef[0, ~varying] = flat[0, ~varying]
        if np.any(varying):
            rhs = self._Xs.T @ flat[:, varying] / self.n_paths
            coef[:, varying] = np.linalg.solve(self._G, rhs) / self._scale[:, None]
        return coef.reshape((self.X.shape[1],) + targets.shape[1:])

    def project(self, targets: np.ndarray) -> np.ndarray:
        coef = self.coefficients(targets)
        return np.tensordot(self.X, coef, axes=(1, 0))

    def estimate(self, targets: np.ndarray) -> CondExpEstimate:
        coef = self.coefficients(targets)
        pred = np.tensordot(self.X, coef, axes=(1, 0))
        rms = float(np.sqrt(np.mean((np.asarray(targets) - pred) ** 2)))
        return CondExpEstimate(coef, pred, rms)


def condexp_estimate(targets, ensemble: PathEnsemble, step_i: int, basis: RegressionBasis | None = None) -> CondExpEstimate:
    """Regression estimate of ``E[targets | information at step_i]``."""
    return Projector(ensemble, step_i, basis or RegressionBasis()).estimate(targets)


def nested_mc_condexp(
    target_fn,
    ensemble: PathEnsemble,
    step_i: int,
    inner_samples: int,
    seed: int,
    budget: float = 5e7,
    return_se: bool = False,
):
    """Brute-force conditional expectation by re-simulating W after ``t_i``.

    For each outer path the forward motion is frozen up to ``t_i`` and
    ``inner_samples`` continuations are drawn; the backward path is kept
    entirely. ``target_fn(W, B)`` receives ``W`` of shape ``(S, M+1, d)`` and
    the path's ``B`` of shape ``(M+1,)`` and returns ``S`` values.
    """
    if inner_samples < 100:
        raise ValueError("inner_samples must be >= 100")
    N, M1, d = ensemble.W.shape
    M = M1 - 1
    if not 0 <= step_i <= M:
        raise ValueError("step out of range")
    if N * inner_samples * max(M - step_i, 1) * d > budget:
        raise BudgetExceeded(f"{N} x {inner_samples} x {M - step_i} draws exceed the cap {budget:g}")
    sqdt = np.sqrt(ensemble.grid.dt)
    means = np.empty(N)
    ses = np.empty(N)
    for n in range(N):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(n,))))
        paths = np.empty((inner_samples, M1, d))
        paths[:, : step_i + 1] = ensemble.W[n, : step_i + 1]
        if step_i < M:
            inc = rng.standard_normal((inner_samples, M - step_i, d)) * sqdt
            paths[:, step_i + 1:] = ensemble.W[n, step_i] + np.cumsum(inc, axis=1)
        vals = np.asarray(target_fn(paths, ensemble.B[n]), dtype=float)
        means[n] = vals.mean()
        ses[n] = vals.std(ddof=1) / np.sqrt(inner_samples)
    return (means, ses) if return_se else means
