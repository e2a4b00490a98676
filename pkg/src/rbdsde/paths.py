"""Brownian ensembles on a uniform grid and the two discrete Ito conventions.

The forward motion ``W`` is d-dimensional, the backward motion ``B`` is scalar.
Both are generated from counter-based Philox streams keyed by
``(seed, block index)`` so that the output never depends on how many workers
produced it.
"""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidGrid, ShapeError

#: Paths per random stream. Part of the reproducibility contract: changing it
#: changes every generated ensemble.
BLOCK_PATHS = 2048

_HEADER = struct.Struct("<qqqqd")


@dataclass(frozen=True)
class TimeGrid:
    horizon_T: float
    n_steps_M: int

    @property
    def dt(self) -> float:
        return self.horizon_T / self.n_steps_M

    @property
    def points(self) -> np.ndarray:
        pts = np.arange(self.n_steps_M + 1, dtype=float) * self.dt
        pts[-1] = self.horizon_T
        return pts

    def t(self, i: int) -> float:
        return self.horizon_T if i == self.n_steps_M else i * self.dt


def make_grid(T: float, M: int) -> TimeGrid:
    """Uniform grid ``t_i = i*T/M``, ``i = 0..M``."""
    if not np.isfinite(T) or T <= 0:
        raise InvalidGrid(f"horizon must be positive, got {T}")
    if int(M) != M or M < 1:
        raise InvalidGrid(f"number of steps must be a positive integer, got {M}")
    return TimeGrid(float(T), int(M))


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """N paths of W (shape ``(N, M+1, d)``) and B (shape ``(N, M+1)``)."""

    grid: TimeGrid
    W: np.ndarray
    B: np.ndarray
    seed: int

    def __post_init__(self):
        self.W.flags.writeable = False
        self.B.flags.writeable = False

    @property
    def n_paths(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[2]

    def dW(self, i: int) -> np.ndarray:
        return self.W[:, i + 1] - self.W[:, i]

    def dB(self, i: int) -> np.ndarray:
        return self.B[:, i + 1] - self.B[:, i]

    def same_noise(self, other: "PathEnsemble") -> bool:
        """True when both ensembles carry identical driving paths."""
        if self is other:
            return True
        return (
            self.grid == other.grid
            and self.W.shape == other.W.shape
            and np.array_equal(self.W, other.W)
            and np.array_equal(self.B, other.B)
        )


def _block_increments(seed: int, block: int, n: int, M: int, d: int) -> np.ndarray:
    ss = np.random.SeedSequence(seed, spawn_key=(block,))
    rng = np.random.Generator(np.random.Philox(ss))
    return rng.standard_normal((n, M, d + 1))


def simulate_ensemble(grid: TimeGrid, N: int, d: int, seed: int, workers: int = 1) -> PathEnsemble:
    """Sample ``N`` independent pairs (W, B) on ``grid``.

    Paths are produced in blocks of :data:`BLOCK_PATHS` with one Philox stream
    per block, so results are bit-identical for any ``workers`` value and an
    ensemble of size N is a prefix of any larger ensemble with the same seed.
    """
    if N < 1 or d < 1:
        raise ValueError("N and d must be >= 1")
    if seed is None:
        raise ValueError("an explicit integer seed is required")
    M = grid.n_steps_M
    sqdt = np.sqrt(grid.dt)
    starts = list(range(0, N, BLOCK_PATHS))

    W = np.zeros((N, M + 1, d))
    B = np.zeros((N, M + 1))

    def fill(start):
        n = min(BLOCK_PATHS, N - start)
        inc = _block_increments(int(seed), start // BLOCK_PATHS, n, M, d) * sqdt
        np.cumsum(inc[:, :, :d], axis=1, out=W[start:start + n, 1:, :])
        np.cumsum(inc[:, :, d], axis=1, out=B[start:start + n, 1:])

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, starts))
    else:
        for s in starts:
            fill(s)
    return PathEnsemble(grid, W, B, int(seed))


def _check_integral_shapes(grid: TimeGrid, integrand, driver):
    M = grid.n_steps_M
    integrand = np.asarray(integrand, dtype=float)
    driver = np.asarray(driver, dtype=float)
    if driver.shape[-1] != M + 1:
        raise ShapeError(f"driver needs {M + 1} points, got {driver.shape[-1]}")
    if integrand.shape[-1] not in (M, M + 1):
        raise ShapeError(f"integrand needs {M} (or {M + 1}) points, got {integrand.shape[-1]}")
    return integrand, driver


def forward_ito_integral(grid: TimeGrid, integrand, driver):
    """Left-point sum ``sum_i integrand[i] * (driver[i+1] - driver[i])``.

    ``integrand`` holds the M left-endpoint values; a full path of M+1 values
    is also accepted and evaluated at ``t_0..t_{M-1}``. Leading axes broadcast
    (one integral per path).
    """
    integrand, driver = _check_integral_shapes(grid, integrand, driver)
    if integrand.shape[-1] == grid.n_steps_M + 1:
        integrand = integrand[..., :-1]
    return np.sum(integrand * np.diff(driver, axis=-1), axis=-1)


def backward_ito_integral(grid: TimeGrid, integrand, driver):
    """Right-point sum: ``integrand[i]`` is the value at ``t_{i+1}``.

    A full path of M+1 values is evaluated at ``t_1..t_M``.
    """
    integrand, driver = _check_integral_shapes(grid, integrand, driver)
    if integrand.shape[-1] == grid.n_steps_M + 1:
        integrand = integrand[..., 1:]
    return np.sum(integrand * np.diff(driver, axis=-1), axis=-1)


# -- binary dump -------------------------------------------------------------

def write_header(fh, N: int, M: int, d: int, seed: int, T: float) -> None:
    fh.write(_HEADER.pack(N, M, d, seed, T))


def read_header(fh):
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise ShapeError("truncated header")
    return _HEADER.unpack(raw)


def write_block(fh, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_block(fh, shape) -> np.ndarray:
    count = int(np.prod(shape))
    data = np.frombuffer(fh.read(8 * count), dtype="<f8")
    if data.size != count:
        raise ShapeError(f"expected {count} values, file ended early")
    return data.reshape(shape).astype(float)


def save_ensemble(ens: PathEnsemble, path) -> None:
    """Flat little-endian dump: header ``(N, M, d, seed, T)``, W block, B block."""
    N, M1, d = ens.W.shape
    with open(Path(path), "wb") as fh:
        write_header(fh, N, M1 - 1, d, ens.seed, ens.grid.horizon_T)
        write_block(fh, ens.W)
        write_block(fh, ens.B)


def load_ensemble(path) -> PathEnsemble:
    with open(Path(path), "rb") as fh:
        N, M, d, seed, T = read_header(fh)
        W = read_block(fh, (N, M + 1, d))
        B = read_block(fh, (N, M + 1))
    return PathEnsemble(make_grid(T, M), W, B, seed)
