"""Empirical norms and a priori inequalities evaluated on discrete solutions.

Every checker returns a :class:`Margin` whose terms are itemised with Monte
Carlo standard errors. ``ds`` integrals are left-endpoint sums, ``dW`` sums are
left-point and ``dB`` sums right-point, as in :mod:`rbdsde.paths`. The
convention ``|y|^(p-2) 1{y != 0}`` makes the integrand vanish where ``y == 0``.

The second-order terms of the ``|y|^p`` expansion have the singular weight
``|y|^(p-2)``. Evaluated at a left endpoint where ``Y`` is close to zero (a
process started at the origin, say) a single step can contribute O(1). By
default :func:`check_ito_p` therefore uses the exact one-step Gaussian
increment ``E|y + sigma xi|^p - |y|^p`` with ``sigma^2 = |z|^2 dt``, which
equals ``c(p) |y|^(p-2) sigma^2`` to leading order and stays finite at 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma, hyp1f1

from .errors import EnsembleMismatch
from .model import ProblemSpec
from .solver import DiscreteSolution, barrier_matrix

MARTINGALE_SE = 3.0
SECOND_ORDER_MODES = ("gaussian", "taylor")
# beyond this |y| / sigma the Gaussian increment is taken from its asymptotic series
_SERIES_RATIO = 30.0


def c_p(p: float) -> float:
    """Second-order constant ``p (p - 1) / 2`` of the ``|y|^p`` expansion."""
    return p * (p - 1) / 2


def _mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.size == 1:
        return float(np.mean(x)), 0.0
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def _term(x):
    m, s = _mean_se(x)
    return {"mean": m, "se": s}


def _pow_sing(y, power):
    """``|y|^power`` with the value 0 where ``y == 0`` (power may be negative)."""
    a = np.abs(y)
    out = np.zeros_like(a)
    nz = a > 0
    out[nz] = a[nz] ** power
    return out


def _signed_pow(y, power):
    """``|y|^power * sign(y)``, i.e. ``|y|^power yhat`` with ``yhat = y/|y| 1{y != 0}``."""
    return np.sign(y) * np.abs(y) ** power


def gaussian_increment(y, sigma, p):
    """``E|y + sigma xi|^p - |y|^p`` for standard normal ``xi`` (0 where ``sigma == 0``)."""
    y = np.abs(np.asarray(y, dtype=float))
    sigma = np.abs(np.asarray(sigma, dtype=float))
    y, sigma = np.broadcast_arrays(y, sigma)
    out = np.zeros(y.shape)
    live = sigma > 0
    mu = np.zeros(y.shape)
    mu[live] = y[live] / sigma[live]
    far = live & (mu > _SERIES_RATIO)
    near = live & ~far
    # E|mu + xi|^p = 2^(p/2) Gamma((p+1)/2) / sqrt(pi) 1F1(-p/2; 1/2; -mu^2/2)
    m = mu[near]
    scale = 2 ** (p / 2) * gamma((p + 1) / 2) / np.sqrt(np.pi)
    out[near] = sigma[near] ** p * (scale * hyp1f1(-p / 2, 0.5, -m**2 / 2) - m**p)
    # even moments of xi: 1, 3, 15
    m = mu[far]
    c2 = p * (p - 1) / 2
    c4 = p * (p - 1) * (p - 2) * (p - 3) / 8
    c6 = p * (p - 1) * (p - 2) * (p - 3) * (p - 4) * (p - 5) / 48
    out[far] = sigma[far] ** p * m ** (p - 2) * (c2 + c4 / m**2 + c6 / m**4)
    return out


@dataclass
class NormTriple:
    sp_norm: float
    mp_norm: float
    k_norm: float
    sp_se: float = 0.0
    mp_se: float = 0.0
    k_se: float = 0.0

    def as_tuple(self):
        return self.sp_norm, self.mp_norm, self.k_norm

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class Margin:
    lhs: float
    rhs: float
    constant_d: float
    tolerance: float = 0.0
    terms: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def slack(self) -> float:
        return self.constant_d * self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return bool(self.slack >= -self.tolerance)

    def to_dict(self):
        return {"lhs": self.lhs, "rhs": self.rhs, "constant_d": self.constant_d,
                "slack": self.slack, "tolerance": self.tolerance, "pass": self.passed,
                "terms": self.terms, "diagnostics": self.diagnostics}


def _sup_p(Y, p):
    return np.max(np.abs(Y), axis=1) ** p


def _quad_p(Z, dt, p):
    return (np.sum(Z**2, axis=(1, 2)) * dt) ** (p / 2)


def lp_norms(sol: DiscreteSolution, p: float) -> NormTriple:
    """Empirical ``E sup|Y|^p``, ``E (sum |Z|^2 dt)^(p/2)`` and ``E |K_T|^p``."""
    if not 1 < p <= 2:
        raise ValueError("p must lie in (1, 2]")
    sp, sp_se = _mean_se(_sup_p(sol.Y, p))
    mp, mp_se = _mean_se(_quad_p(sol.Z, sol.grid.dt, p))
    kn, k_se = _mean_se(np.abs(sol.K[:, -1]) ** p)
    return NormTriple(sp, mp, kn, sp_se, mp_se, k_se)


def _data_norms(spec: ProblemSpec, sol: DiscreteSolution, p: float):
    grid = sol.grid
    left = grid.points[:-1]
    f0 = spec.f0_array(left)
    g0 = spec.g0_array(left)
    F0 = float((np.sum(f0**2) * grid.dt) ** (p / 2))
    G0 = float((np.sum(g0**2) * grid.dt) ** (p / 2))
    return f0, g0, F0, G0


def check_lemma31(sol: DiscreteSolution, spec: ProblemSpec, d_const: float, tolerance: float = 0.0) -> Margin:
    """``E(int |Z|^2)^(p/2) <= d E[sup|Y|^p + (int|f0|^2)^(p/2) + (int|g0|^2)^(p/2)]``."""
    p = spec.exponent_p
    _, _, F0, G0 = _data_norms(spec, sol, p)
    lhs_path = _quad_p(sol.Z, sol.grid.dt, p)
    sup_y = _sup_p(sol.Y, p)
    rhs_path = sup_y + F0 + G0
    return Margin(float(lhs_path.mean()), float(rhs_path.mean()), d_const, tolerance, terms={
        "Z_quadratic": _term(lhs_path), "sup_Y": _term(sup_y),
        "f0_norm": {"mean": F0, "se": 0.0}, "g0_norm": {"mean": G0, "se": 0.0},
    })


def check_lemma32(sol: DiscreteSolution, spec: ProblemSpec, d_const: float, tolerance: float = 0.0) -> Margin:
    """Norms of ``(Y, Z, K)`` against the data and the ``|Y|^(p-2) |g0|^2`` term."""
    p = spec.exponent_p
    dt = sol.grid.dt
    f0, g0, F0, G0 = _data_norms(spec, sol, p)
    sup_y = _sup_p(sol.Y, p)
    quad_z = _quad_p(sol.Z, dt, p)
    k_T = np.abs(sol.K[:, -1]) ** p
    lhs_path = sup_y + quad_z + k_T
    xi = np.abs(sol.Y[:, -1]) ** p
    L = barrier_matrix(spec, sol.ensemble) if sol.ensemble is not None else None
    sup_L = np.zeros(sol.n_paths) if L is None else np.max(np.maximum(L, 0.0), axis=1) ** p
    y_g0 = np.sum(_pow_sing(sol.Y[:, :-1], p - 2) * g0**2, axis=1) * dt
    rhs_path = xi + F0 + G0 + sup_L + y_g0
    return Margin(float(lhs_path.mean()), float(rhs_path.mean()), d_const, tolerance, terms={
        "sup_Y": _term(sup_y), "Z_quadratic": _term(quad_z), "K_T": _term(k_T),
        "xi": _term(xi), "f0_norm": {"mean": F0, "se": 0.0}, "g0_norm": {"mean": G0, "se": 0.0},
        "sup_barrier_plus": _term(sup_L), "Y_weighted_g0": _term(y_g0),
    })


def check_lemma33(sol1: DiscreteSolution, sol2: DiscreteSolution, spec1: ProblemSpec, spec2: ProblemSpec,
                  d_const: float, tolerance: float = 0.0) -> Margin:
    """Stability of the solution map; driver differences are taken along ``sol2``.

    Both solutions must be computed on the same ensemble (common random
    numbers) with the same barrier.
    """
    e1, e2 = sol1.ensemble, sol2.ensemble
    if e1 is None or e2 is None or not e1.same_noise(e2):
        raise EnsembleMismatch("both solutions must share one path ensemble")
    L1, L2 = barrier_matrix(spec1, e1), barrier_matrix(spec2, e2)
    if (L1 is None) != (L2 is None) or (L1 is not None and not np.array_equal(L1, L2)):
        raise ValueError("the two problems must share the barrier")
    p = spec2.exponent_p
    grid = sol2.grid
    dt = grid.dt
    M = grid.n_steps_M
    sup_dy = _sup_p(sol1.Y - sol2.Y, p)
    quad_dz = _quad_p(sol1.Z - sol2.Z, dt, p)
    lhs_path = sup_dy + quad_dz
    dxi = np.abs(sol1.Y[:, -1] - sol2.Y[:, -1]) ** p
    df2 = np.zeros(sol2.n_paths)
    dg2 = np.zeros(sol2.n_paths)
    for i in range(M):
        t, y, z = grid.t(i), sol2.Y[:, i], sol2.Z[:, i]
        df2 += (spec1.coeffs.f(t, y, z) - spec2.coeffs.f(t, y, z)) ** 2
        dg2 += (spec1.coeffs.g(t, y, z) - spec2.coeffs.g(t, y, z)) ** 2
    df = (df2 * dt) ** (p / 2)
    dg = (dg2 * dt) ** (p / 2)
    rhs_path = dxi + df + dg
    return Margin(float(lhs_path.mean()), float(rhs_path.mean()), d_const, tolerance, terms={
        "sup_dY": _term(sup_dy), "dZ_quadratic": _term(quad_dz),
        "d_xi": _term(dxi), "d_f": _term(df), "d_g": _term(dg),
    })


def check_ito_p(sol: DiscreteSolution, spec: ProblemSpec, i: int, j: int,
                d_margin_tolerance: float = 3.0, second_order: str = "gaussian") -> Margin:
    """Expected form of the ``|Y|^p`` inequality between grid times ``t_i <= t_j``.

    The two stochastic-integral terms are dropped from the inequality and
    reported as diagnostics. The tolerance is ``d_margin_tolerance`` standard
    errors of the per-path gap plus ``sqrt(dt)`` times the mean size of the
    two sides. ``second_order="taylor"`` evaluates the ``|Z|^2`` and ``|g|^2``
    terms literally as ``c(p) |Y|^(p-2) 1{Y != 0} (.)^2 dt``; the default uses
    the Gaussian one-step increment (see the module notes).
    """
    if not 0 <= i <= j <= sol.grid.n_steps_M:
        raise ValueError("need 0 <= i <= j <= M")
    if second_order not in SECOND_ORDER_MODES:
        raise ValueError(f"second_order must be one of {SECOND_ORDER_MODES}")
    ens = sol.ensemble
    p = spec.exponent_p
    cp = c_p(p)
    grid = sol.grid
    dt = grid.dt
    Y, Z = sol.Y, sol.Z
    N = sol.n_paths
    zquad = np.zeros(N)
    push = np.zeros(N)
    drift = np.zeros(N)
    gquad = np.zeros(N)
    mart_b = np.zeros(N)
    mart_w = np.zeros(N)
    dK = sol.dK
    d = Z.shape[2]
    zero_z = np.zeros((N, d))
    for k in range(i, j):
        t = grid.t(k)
        yk, zk = Y[:, k], Z[:, k]
        w1 = _signed_pow(yk, p - 1)
        z2 = np.sum(zk**2, axis=1) * dt
        g2 = spec.coeffs.g(t, yk, zk) ** 2 * dt
        if second_order == "taylor":
            w2 = _pow_sing(yk, p - 2)
            zquad += w2 * z2
            gquad += w2 * g2
        else:
            zquad += gaussian_increment(yk, np.sqrt(z2), p) / cp
            gquad += gaussian_increment(yk, np.sqrt(g2), p) / cp
        push += w1 * dK[:, k]
        drift += w1 * spec.coeffs.f(t, yk, zk) * dt
        if ens is not None:
            z_next = Z[:, k + 1] if k + 1 < grid.n_steps_M else zero_z
            y_next = Y[:, k + 1]
            g_next = spec.coeffs.g(grid.t(k + 1), y_next, z_next)
            mart_b += p * _signed_pow(y_next, p - 1) * g_next * ens.dB(k)
            mart_w -= p * w1 * np.sum(zk * ens.dW(k), axis=1)
    yi = np.abs(Y[:, i]) ** p
    yj = np.abs(Y[:, j]) ** p
    lhs_path = yi + cp * zquad
    rhs_path = yj + p * push + p * drift + cp * gquad
    lhs, rhs = float(lhs_path.mean()), float(rhs_path.mean())
    _, gap_se = _mean_se(lhs_path - rhs_path)
    tol = d_margin_tolerance * gap_se + np.sqrt(dt) * 0.5 * (abs(lhs) + abs(rhs))
    mb, mb_se = _mean_se(mart_b)
    mw, mw_se = _mean_se(mart_w)
    diagnostics = {
        "dB_martingale": {"mean": mb, "se": mb_se, "within_3se": bool(abs(mb) <= MARTINGALE_SE * mb_se)},
        "dW_martingale": {"mean": mw, "se": mw_se, "within_3se": bool(abs(mw) <= MARTINGALE_SE * mw_se)},
        "c_p": cp, "i": i, "j": j, "second_order": second_order,
    }
    return Margin(lhs, rhs, 1.0, float(tol), terms={
        "Y_i": _term(yi), "Z_weighted": _term(cp * zquad), "Y_j": _term(yj),
        "push": _term(p * push), "drift": _term(p * drift), "g_weighted": _term(cp * gquad),
    }, diagnostics=diagnostics)


def skorokhod_residual(sol: DiscreteSolution, spec: ProblemSpec) -> float:
    """``max_n |sum_i (Y_i - L_i) (K_{i+1} - K_i)|``; 0 without a barrier."""
    if not spec.has_barrier:
        return 0.0
    if sol.ensemble is None:
        raise ValueError("solution carries no ensemble to evaluate the barrier on")
    L = barrier_matrix(spec, sol.ensemble)
    return float(np.max(np.abs(np.sum((sol.Y[:, :-1] - L[:, :-1]) * sol.dK, axis=1))))


@dataclass
class EstimateReport:
    norms: NormTriple
    margins: dict
    skorokhod: float

    @property
    def passed(self) -> bool:
        return all(m.passed for m in self.margins.values()) and self.skorokhod == 0.0

    def to_dict(self):
        return {"norms": self.norms.to_dict(),
                "margins": {k: m.to_dict() for k, m in self.margins.items()},
                "skorokhod_residual": self.skorokhod, "pass": self.passed}
