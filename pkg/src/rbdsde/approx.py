"""Truncation approximation of L^p data by bounded data.

``q_k(x) = x k / max(|x|, k)`` saturates at level k. Truncating the terminal
value and the driver's value at the origin at level ``n`` (and the barrier at
level ``m``) yields square-integrable problems whose solutions form a Cauchy
sequence as ``n`` grows; :func:`cauchy_study` measures that on one ensemble.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidLevel, MissingH4
from .estimates import lp_norms, skorokhod_residual
from .model import BarrierSpec, CoefficientSpec, ProblemSpec, TerminalSpec
from .paths import PathEnsemble
from .solver import SolverConfig, barrier_matrix, solve_reflected_bdsde

H4_PROBE_POINTS = 101


def truncate(x, k):
    """``x k / max(|x|, k)``: identity on ``[-k, k]``, ``k sign(x)`` outside."""
    if not np.all(np.asarray(k) > 0):
        raise InvalidLevel(f"truncation level must be positive, got {k}")
    x = np.asarray(x, dtype=float)
    out = np.where(np.abs(x) <= k, x, k * np.sign(x))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class TruncationLevels:
    n_levels: tuple
    m_levels: tuple = ()

    def __post_init__(self):
        for name in ("n_levels", "m_levels"):
            lv = tuple(getattr(self, name))
            object.__setattr__(self, name, lv)
            if any(v < 1 for v in lv) or any(b <= a for a, b in zip(lv, lv[1:])):
                raise InvalidLevel(f"{name} must be strictly increasing and >= 1: {lv}")
        if not self.n_levels:
            raise InvalidLevel("need at least one n level")


def _check_h4(spec: ProblemSpec):
    for t in np.linspace(0.0, spec.horizon_T, H4_PROBE_POINTS):
        if spec.coeffs.g0(t, spec.dim_d) != 0.0:
            raise MissingH4(f"g(t, 0, 0) = {spec.coeffs.g0(t, spec.dim_d)} at t = {t}")


def build_truncated_problem(spec: ProblemSpec, n: float, m: float) -> ProblemSpec:
    """Problem with ``xi_n = q_n(xi)``, ``f_n = f - f0 + q_n(f0)`` and ``L^m = q_m(L)``.

    At ``T`` the barrier is additionally capped by ``xi_n`` so that the
    truncated data stay compatible for every pair of levels.

    ``g`` is kept. Where ``|f0(t)| <= n`` the driver is returned unchanged, so a
    level above the data's range reproduces the original problem exactly.
    """
    if n <= 0 or m <= 0:
        raise InvalidLevel("levels must be positive")
    _check_h4(spec)
    coeffs = spec.coeffs
    d = spec.dim_d
    phi = spec.terminal.phi
    f = coeffs.f

    def phi_n(w):
        return truncate(phi(w), n)

    def f0(t):
        return coeffs.f0(t, d)

    def f_n(t, y, z):
        a = f0(t)
        if abs(a) <= n:
            return f(t, y, z)
        return f(t, y, z) - a + truncate(a, n)

    new_coeffs = CoefficientSpec(f_n, coeffs.g, coeffs.lipschitz_C, coeffs.contraction_alpha,
                                 f_zero=lambda t: truncate(f0(t), n), g_zero=coeffs.g_zero)
    if spec.has_barrier:
        psi = spec.barrier.psi
        T = spec.horizon_T

        def psi_m(t, w):
            L = truncate(psi(t, w), m)
            if np.isclose(t, T, rtol=0.0, atol=1e-12 * T):
                # q_m(L_T) <= q_n(xi) fails when m > n or L_T < -m; the terminal
                # barrier value never enters the scheme, so cap it by xi_n
                L = np.minimum(L, phi_n(w))
            return L

        barrier = BarrierSpec(psi_m)
    else:
        barrier = spec.barrier
    label = dict(spec.label, truncation={"n": n, "m": m})
    return replace(spec, coeffs=new_coeffs, terminal=TerminalSpec(phi_n, True, True),
                   barrier=barrier, label=label)


@dataclass
class CauchyReport:
    levels: list
    m_fixed: float
    norms: list
    D: list
    D_se: list
    R: list
    ratios: list
    K_T_distance: list
    m_sweep: list = field(default_factory=list)
    p: float = 1.5

    @property
    def strictly_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.D, self.D[1:]))

    def to_dict(self):
        return {
            "p": self.p, "levels": self.levels, "m_fixed": self.m_fixed,
            "norms": self.norms,
            "pairs": [
                {"n": a, "n_next": b, "D": D, "D_se": se, "R": R, "ratio": r, "K_T_distance": k}
                for a, b, D, se, R, r, k in zip(self.levels, self.levels[1:], self.D, self.D_se,
                                                  self.R, self.ratios, self.K_T_distance)
            ],
            "D_strictly_decreasing": self.strictly_decreasing,
            "m_sweep": self.m_sweep,
        }


def _pair_distance(a, b, p, dt):
    sup = np.max(np.abs(b.Y - a.Y), axis=1) ** p
    quad = (np.sum((b.Z - a.Z) ** 2, axis=(1, 2)) * dt) ** (p / 2)
    per_path = sup + quad
    se = float(per_path.std(ddof=1) / np.sqrt(per_path.size)) if per_path.size > 1 else 0.0
    return float(per_path.mean()), se


def cauchy_study(spec: ProblemSpec, ensemble: PathEnsemble, cfg: SolverConfig | None,
                 levels: TruncationLevels) -> CauchyReport:
    """Solve the truncated problems on one ensemble and compare consecutive levels.

    ``D(n, n')`` is the empirical ``E sup|Y^n' - Y^n|^p + E(sum|Z^n' - Z^n|^2 dt)^(p/2)``
    and ``R(n, n')`` the matching data distance
    ``E|xi_n' - xi_n|^p + (sum |q_n'(f0) - q_n(f0)|^2 dt)^(p/2)``. The barrier
    is truncated at the largest ``m`` level during the ``n`` sweep; the ``m``
    sweep (largest ``n``) reports the complementarity residual against the
    untruncated barrier.
    """
    if len(levels.n_levels) < 3:
        raise InvalidLevel("need at least three n levels")
    cfg = cfg or SolverConfig()
    p = spec.exponent_p
    grid = ensemble.grid
    dt = grid.dt
    m_fixed = max(levels.m_levels) if levels.m_levels else float(max(levels.n_levels))
    xi = spec.xi(ensemble.W[:, -1])
    f0 = spec.f0_array(grid.points[:-1])

    sols, norms = [], []
    for n in levels.n_levels:
        sol = solve_reflected_bdsde(build_truncated_problem(spec, n, m_fixed), ensemble, cfg)
        sols.append(sol)
        norms.append(dict(n=n, **lp_norms(sol, p).to_dict()))

    D, D_se, R, ratios, kdist = [], [], [], [], []
    for (n_a, a), (n_b, b) in zip(zip(levels.n_levels, sols), zip(levels.n_levels[1:], sols[1:])):
        dist, se = _pair_distance(a, b, p, dt)
        r_xi = float(np.mean(np.abs(truncate(xi, n_b) - truncate(xi, n_a)) ** p))
        r_f = float((np.sum((truncate(f0, n_b) - truncate(f0, n_a)) ** 2) * dt) ** (p / 2))
        drive = r_xi + r_f
        D.append(dist)
        D_se.append(se)
        R.append(drive)
        ratios.append(dist / drive if drive > 0 else (0.0 if dist == 0 else float("inf")))
        kdist.append(float(np.mean(np.abs(b.K[:, -1] - a.K[:, -1]) ** p)))

    sweep = []
    if spec.has_barrier and levels.m_levels:
        n_max = max(levels.n_levels)
        for m in levels.m_levels:
            sol = solve_reflected_bdsde(build_truncated_problem(spec, n_max, m), ensemble, cfg)
            L = barrier_matrix(spec, ensemble)
            sweep.append({"m": m, "skorokhod_vs_barrier": skorokhod_residual(sol, spec),
                          "max_barrier_violation": float(np.max(np.maximum(L - sol.Y, 0.0))),
                          "K_T_mean": float(sol.K[:, -1].mean())})

    return CauchyReport(list(levels.n_levels), m_fixed, norms, D, D_se, R, ratios, kdist, sweep, p)
