"""Problem instances for the reflected doubly stochastic backward equation.

A problem is Markovian in the forward motion: the terminal value is
``phi(W_T)``, the barrier is ``psi(t, W_t)`` and the drivers ``f`` and ``g``
are deterministic functions of ``(t, y, z)``.

All callables are vectorised over paths::

    f(t, y, z) -> (n,)     t: float, y: (n,), z: (n, d)
    g(t, y, z) -> (n,)
    phi(w) -> (n,)         w: (n, d)
    psi(t, w) -> (n,)
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BarrierTerminalConflict, InvalidCoefficient
from .paths import make_grid, simulate_ensemble

Coefficient = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


def zero_coefficient(t, y, z):
    return np.zeros_like(y, dtype=float)


class _NoBarrierType:
    """Sentinel for the barrier ``L = -inf`` (no reflection)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NoBarrier"

    def __reduce__(self):
        return (_NoBarrierType, ())


NoBarrier = _NoBarrierType()


@dataclass(frozen=True)
class CoefficientSpec:
    f: Coefficient
    g: Coefficient
    lipschitz_C: float
    contraction_alpha: float
    f_zero: Callable[[float], float] | None = None
    g_zero: Callable[[float], float] | None = None

    def __post_init__(self):
        if not self.lipschitz_C > 0:
            raise ValueError("lipschitz_C must be positive")
        if not 0 < self.contraction_alpha < 1:
            raise ValueError("contraction_alpha must lie in (0, 1)")

    def f0(self, t: float, d: int = 1) -> float:
        if self.f_zero is not None:
            return float(self.f_zero(t))
        return _at_origin(self.f, t, d)

    def g0(self, t: float, d: int = 1) -> float:
        if self.g_zero is not None:
            return float(self.g_zero(t))
        return _at_origin(self.g, t, d)


def _at_origin(fn, t, d=1):
    return float(np.asarray(fn(t, np.zeros(1), np.zeros((1, d))))[0])


@dataclass(frozen=True)
class TerminalSpec:
    phi: Callable[[np.ndarray], np.ndarray]
    p_moment_finite: bool = True
    sq_moment_finite: bool = True


@dataclass(frozen=True)
class BarrierSpec:
    psi: Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ProblemSpec:
    coeffs: CoefficientSpec
    terminal: TerminalSpec
    barrier: BarrierSpec | _NoBarrierType
    horizon_T: float
    dim_d: int = 1
    exponent_p: float = 1.5
    #: free-form description (family name and parameters); feeds ``digest``
    label: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 1 < self.exponent_p <= 2:
            raise ValueError(f"exponent_p must lie in (1, 2], got {self.exponent_p}")
        if not self.horizon_T > 0:
            raise ValueError("horizon_T must be positive")
        if self.dim_d < 1:
            raise ValueError("dim_d must be >= 1")

    @property
    def has_barrier(self) -> bool:
        return self.barrier is not NoBarrier

    def digest(self) -> str:
        blob = json.dumps(self.label, sort_keys=True, default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def xi(self, W_T: np.ndarray) -> np.ndarray:
        return _finite(self.terminal.phi(W_T), "terminal function phi")

    def barrier_at(self, t: float, W_t: np.ndarray):
        """Barrier values at time ``t`` or ``None`` when there is no barrier."""
        if not self.has_barrier:
            return None
        return np.asarray(self.barrier.psi(t, W_t), dtype=float)

    def f0_array(self, times) -> np.ndarray:
        return np.array([self.coeffs.f0(t, self.dim_d) for t in times])

    def g0_array(self, times) -> np.ndarray:
        return np.array([self.coeffs.g0(t, self.dim_d) for t in times])


def _finite(values, what):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise InvalidCoefficient(f"{what} returned non-finite values")
    return values


# -- assumption checks ---------------------------------------------------------

def hill_tail_index(samples: np.ndarray, frac: float = 0.01, k_min: int = 20) -> float:
    """Hill estimate of the tail index of ``|samples|``.

    Returns ``inf`` for bounded-looking samples (no spread among the top order
    statistics). A moment of order q is judged finite when the index exceeds q.
    """
    x = np.sort(np.abs(np.asarray(samples, dtype=float)))[::-1]
    x = x[x > 0]
    if x.size < k_min + 1:
        return np.inf
    k = min(max(k_min, int(frac * x.size)), x.size - 1)
    logs = np.log(x[:k]) - np.log(x[k])
    gamma = logs.mean()
    return np.inf if gamma <= 0 else 1.0 / gamma


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    quantities: dict

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "quantities": self.quantities}


@dataclass
class ValidationReport:
    checks: list[AssumptionCheck]
    p_moment_finite: bool
    sq_moment_finite: bool

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {
            "passed": self.passed,
            "p_moment_finite": self.p_moment_finite,
            "sq_moment_finite": self.sq_moment_finite,
            "checks": [c.to_dict() for c in self.checks],
        }


def probe_lipschitz(spec: ProblemSpec, n_pairs: int = 2000, seed: int = 0) -> tuple[float, float]:
    """Largest observed Lipschitz ratios of the drivers over random point pairs.

    ``C_hat`` is the max of ``|df| / (|dy| + |dz|)`` and of ``|dg|^2 / |dy|^2``
    (pairs with ``dz = 0``); ``alpha_hat`` is the max of ``|dg|^2 / |dz|^2``
    (pairs with ``dy = 0``). Half of the pairs are far apart, half are local
    perturbations so that slopes near a point are seen too.
    """
    C_hat, alpha_hat, _ = _probe(spec, n_pairs, seed)
    return C_hat, alpha_hat


def _probe(spec, n_pairs, seed):
    if n_pairs < 1000:
        raise ValueError("n_pairs must be >= 1000")
    rng = np.random.default_rng(seed)
    d = spec.dim_d
    f, g = spec.coeffs.f, spec.coeffs.g
    times = np.linspace(0.0, spec.horizon_T, 9)
    per_t = -(-n_pairs // len(times))
    C_hat = alpha_hat = joint = 0.0
    Cd, ad = spec.coeffs.lipschitz_C, spec.coeffs.contraction_alpha
    for t in times:
        y1 = rng.normal(0.0, 3.0, per_t)
        z1 = rng.normal(0.0, 3.0, (per_t, d))
        near = np.arange(per_t) % 2 == 1
        scale = np.where(near, 1e-3, 3.0)
        dy = rng.normal(0.0, 1.0, per_t) * scale
        dz = rng.normal(0.0, 1.0, (per_t, d)) * scale[:, None]
        y2, z2 = y1 + dy, z1 + dz
        dy, dz = y2 - y1, z2 - z1
        ndz = np.linalg.norm(dz, axis=1)

        df = _finite(f(t, y1, z1), "f") - _finite(f(t, y2, z2), "f")
        C_hat = max(C_hat, np.max(np.abs(df) / (np.abs(dy) + ndz)))

        dg = _finite(g(t, y1, z1), "g") - _finite(g(t, y2, z2), "g")
        joint = max(joint, np.max(dg**2 / (Cd * dy**2 + ad * ndz**2)))

        dgy = _finite(g(t, y1, z1), "g") - _finite(g(t, y2, z1), "g")
        C_hat = max(C_hat, np.max(dgy**2 / dy**2))

        dgz = _finite(g(t, y1, z1), "g") - _finite(g(t, y1, z2), "g")
        alpha_hat = max(alpha_hat, np.max(dgz**2 / ndz**2))
    return float(C_hat), float(alpha_hat), float(joint)


def validate_problem(
    spec: ProblemSpec,
    pilot_paths: int = 20_000,
    seed: int = 0,
    require_h4: bool = False,
    pilot_steps: int = 50,
    rel_tol: float = 1e-9,
) -> ValidationReport:
    """Statistical check of the standing assumptions on a pilot ensemble.

    Moment finiteness is judged from the Hill tail index of the pilot sample.
    Raises :class:`BarrierTerminalConflict` if the barrier exceeds the terminal
    value on any pilot path and :class:`InvalidCoefficient` on non-finite
    evaluations.
    """
    if pilot_paths < 100:
        raise ValueError("pilot_paths must be >= 100")
    p = spec.exponent_p
    grid = make_grid(spec.horizon_T, pilot_steps)
    ens = simulate_ensemble(grid, pilot_paths, spec.dim_d, seed)
    xi = spec.xi(ens.W[:, -1])
    checks = []

    xi_index = hill_tail_index(xi)
    p_finite = bool(xi_index > p)
    sq_finite = bool(xi_index > 2)
    checks.append(AssumptionCheck("H1", p_finite, {
        "empirical_p_moment": float(np.mean(np.abs(xi) ** p)),
        "tail_index": _num(xi_index),
        "declared_p_moment_finite": spec.terminal.p_moment_finite,
        "declared_sq_moment_finite": spec.terminal.sq_moment_finite,
        "sq_moment_finite": sq_finite,
    }))

    times = grid.points
    f0 = _finite(spec.f0_array(times), "f(t, 0, 0)")
    g0 = _finite(spec.g0_array(times), "g(t, 0, 0)")
    zeros_y, zeros_z = np.zeros(1), np.zeros((1, spec.dim_d))
    exact = all(
        float(spec.coeffs.f(t, zeros_y, zeros_z)[0]) == f0[k]
        and float(spec.coeffs.g(t, zeros_y, zeros_z)[0]) == g0[k]
        for k, t in enumerate(times)
    )
    f0_norm = float((np.sum(f0[:-1] ** 2) * grid.dt) ** (p / 2))
    g0_norm = float((np.sum(g0[:-1] ** 2) * grid.dt) ** (p / 2))
    checks.append(AssumptionCheck("H2(i)", exact and np.isfinite(f0_norm + g0_norm), {
        "f0_norm": f0_norm, "g0_norm": g0_norm, "origin_values_consistent": exact,
    }))

    C_hat, alpha_hat, joint = _probe(spec, 2000, seed)
    Cd, ad = spec.coeffs.lipschitz_C, spec.coeffs.contraction_alpha
    lip_ok = C_hat <= Cd * (1 + rel_tol) and alpha_hat <= ad * (1 + rel_tol) and joint <= 1 + rel_tol
    checks.append(AssumptionCheck("H2(ii)", bool(lip_ok), {
        "C_hat": C_hat, "alpha_hat": alpha_hat, "g_joint_ratio": joint,
        "declared_C": Cd, "declared_alpha": ad,
    }))

    if spec.has_barrier:
        L = np.stack([_finite(spec.barrier_at(t, ens.W[:, i]), "barrier psi")
                      for i, t in enumerate(times)], axis=1)
        gap = L[:, -1] - xi
        worst = float(np.max(gap))
        if worst > 0:
            raise BarrierTerminalConflict(
                f"barrier exceeds terminal value on {int(np.sum(gap > 0))} pilot paths (max {worst:.4g})")
        sup_plus = np.max(np.maximum(L, 0.0), axis=1)
        L_index = hill_tail_index(sup_plus)
        checks.append(AssumptionCheck("H3", bool(L_index > p), {
            "empirical_sup_barrier_p_moment": float(np.mean(sup_plus**p)),
            "tail_index": _num(L_index),
            "max_terminal_violation": worst,
        }))
    else:
        checks.append(AssumptionCheck("H3", True, {"barrier": "none"}))

    if require_h4:
        g0_max = float(np.max(np.abs(g0)))
        checks.append(AssumptionCheck("H4", g0_max == 0.0, {"max_abs_g0": g0_max}))

    return ValidationReport(checks, p_finite, sq_finite)


def _num(x):
    return None if not np.isfinite(x) else float(x)
