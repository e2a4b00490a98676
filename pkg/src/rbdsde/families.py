"""Named closed-form problem families used by JSON experiment configs.

A problem block looks like::

    {"family": "linear",
     "params": {"xi_a": 0.0, "xi_b": 1.0, "f_y": -0.1, "g_y": 0.2},
     "barrier": {"kind": "terminal-shift", "shift": 0.3},
     "d": 1, "p": 1.5}

Families
--------
constant                ``xi = c``; ``f = g = 0``
martingale              ``xi = xi_a + xi_b W^1_T``; ``f = g = 0``
linear                  ``xi = xi_a + xi_b W^1_T``;
                        ``f = f_y y + f_z z_1``; ``g = g_y y + g_z z_1``
affine                  as ``linear`` plus constants ``f_0`` and ``g_0``
sinusoidal              ``xi = xi_a + xi_b sin(W^1_T)``;
                        ``f = f_a sin(y) + f_z sin(z_1) + f_0 cos(2 pi t / T)``;
                        ``g = g_a sin(y)``
heavy-tail-exponential  ``xi = exp(c |W_T|^2)``; ``f = f_y y + f_0``; ``g = g_y y``
american-put            ``S_t = s0 exp((r - sigma^2/2) t + sigma W^1_t)``;
                        ``xi = (strike - S_T)^+``; ``f = -r y``; ``g = 0``
deterministic-barrier   ``xi = 0``; ``f = g = 0``; barrier ``level (1 - t/T)``

Barrier kinds: ``none``, ``constant`` (``level``), ``linear-decay``
(``level (1 - t/T)``), ``terminal-shift`` (``phi(W_t) - shift``, ``shift >= 0``)
and ``payoff`` (american-put only: ``(strike - S_t)^+``).

Lipschitz metadata defaults to constants that dominate the closed forms
(``C``/``alpha`` params override them).
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .model import (BarrierSpec, CoefficientSpec, NoBarrier, ProblemSpec, TerminalSpec,
                    zero_coefficient)

DEFAULT_ALPHA = 0.5
MIN_C = 0.01


def _linear_terminal(a, b):
    return lambda w: a + b * w[:, 0]


def _declared(params, C, alpha):
    C = float(params.get("C", max(C, MIN_C)))
    alpha = float(params.get("alpha", alpha))
    return C, alpha


def _constant(p, T, d):
    c = float(p.get("c", 1.0))
    C, alpha = _declared(p, 0.0, DEFAULT_ALPHA)
    coeffs = CoefficientSpec(zero_coefficient, zero_coefficient, C, alpha)
    return coeffs, TerminalSpec(lambda w: np.full(w.shape[0], c)), {}


def _martingale(p, T, d):
    a, b = float(p.get("xi_a", 0.0)), float(p.get("xi_b", 1.0))
    C, alpha = _declared(p, 0.0, DEFAULT_ALPHA)
    coeffs = CoefficientSpec(zero_coefficient, zero_coefficient, C, alpha)
    return coeffs, TerminalSpec(_linear_terminal(a, b)), {"phi_path": _linear_terminal(a, b)}


def _affine_coeffs(p, with_constants):
    fy, fz = float(p.get("f_y", 0.0)), float(p.get("f_z", 0.0))
    gy, gz = float(p.get("g_y", 0.0)), float(p.get("g_z", 0.0))
    f0 = float(p.get("f_0", 0.0)) if with_constants else 0.0
    g0 = float(p.get("g_0", 0.0)) if with_constants else 0.0
    if 2 * gz**2 >= 1:
        raise ConfigError("need 2 g_z^2 < 1 for the contraction condition on g")

    def f(t, y, z):
        return fy * y + fz * z[:, 0] + f0

    def g(t, y, z):
        return gy * y + gz * z[:, 0] + g0

    alpha = 2 * gz**2 if gz else DEFAULT_ALPHA
    C, alpha = _declared(p, max(abs(fy), abs(fz), 2 * gy**2), alpha)
    return CoefficientSpec(f, g, C, alpha, f_zero=lambda t: f0, g_zero=lambda t: g0)


def _linear(p, T, d):
    a, b = float(p.get("xi_a", 0.0)), float(p.get("xi_b", 1.0))
    return _affine_coeffs(p, False), TerminalSpec(_linear_terminal(a, b)), {"phi_path": _linear_terminal(a, b)}


def _affine(p, T, d):
    a, b = float(p.get("xi_a", 0.0)), float(p.get("xi_b", 1.0))
    return _affine_coeffs(p, True), TerminalSpec(_linear_terminal(a, b)), {"phi_path": _linear_terminal(a, b)}


def _sinusoidal(p, T, d):
    a, b = float(p.get("xi_a", 0.0)), float(p.get("xi_b", 1.0))
    fa, fz, f0 = float(p.get("f_a", 0.5)), float(p.get("f_z", 0.0)), float(p.get("f_0", 0.0))
    ga = float(p.get("g_a", 0.0))
    omega = 2 * np.pi / T

    def f(t, y, z):
        return fa * np.sin(y) + fz * np.sin(z[:, 0]) + f0 * np.cos(omega * t)

    def g(t, y, z):
        return ga * np.sin(y)

    C, alpha = _declared(p, max(abs(fa), abs(fz), ga**2), DEFAULT_ALPHA)
    coeffs = CoefficientSpec(f, g, C, alpha, f_zero=lambda t: f0 * np.cos(omega * t), g_zero=lambda t: 0.0)

    def phi(w):
        return a + b * np.sin(w[:, 0])

    return coeffs, TerminalSpec(phi), {"phi_path": phi}


def _heavy_tail(p, T, d):
    c = float(p.get("c", 0.3))
    fy, f0, gy = float(p.get("f_y", 0.0)), float(p.get("f_0", 0.0)), float(p.get("g_y", 0.0))
    expo = float(p.get("p", 1.5))

    def phi(w):
        return np.exp(c * np.sum(w**2, axis=1))

    def f(t, y, z):
        return fy * y + f0

    def g(t, y, z):
        return gy * y

    # E exp(q c |W_T|^2) < inf  iff  2 q c T < 1
    terminal = TerminalSpec(phi, p_moment_finite=2 * expo * c * T < 1, sq_moment_finite=4 * c * T < 1)
    C, alpha = _declared(p, max(abs(fy), 2 * gy**2), DEFAULT_ALPHA)
    coeffs = CoefficientSpec(f, g, C, alpha, f_zero=lambda t: f0, g_zero=lambda t: 0.0)
    return coeffs, terminal, {"phi_path": phi}


def _american_put(p, T, d):
    s0, strike = float(p.get("s0", 1.0)), float(p.get("strike", 1.1))
    r, sigma = float(p.get("r", 0.06)), float(p.get("sigma", 0.2))

    def payoff(t, w):
        s = s0 * np.exp((r - 0.5 * sigma**2) * t + sigma * w[:, 0])
        return np.maximum(strike - s, 0.0)

    def f(t, y, z):
        return -r * y

    C, alpha = _declared(p, r, DEFAULT_ALPHA)
    coeffs = CoefficientSpec(f, zero_coefficient, C, alpha, f_zero=lambda t: 0.0, g_zero=lambda t: 0.0)
    return coeffs, TerminalSpec(lambda w: payoff(T, w)), {"payoff": payoff}


def _deterministic_barrier(p, T, d):
    C, alpha = _declared(p, 0.0, DEFAULT_ALPHA)
    coeffs = CoefficientSpec(zero_coefficient, zero_coefficient, C, alpha)
    extras = {"default_barrier": {"kind": "linear-decay", "level": float(p.get("level", 0.5))}}
    return coeffs, TerminalSpec(lambda w: np.zeros(w.shape[0])), extras


FAMILIES = {
    "constant": _constant,
    "martingale": _martingale,
    "linear": _linear,
    "affine": _affine,
    "sinusoidal": _sinusoidal,
    "heavy-tail-exponential": _heavy_tail,
    "american-put": _american_put,
    "deterministic-barrier": _deterministic_barrier,
}


def _barrier(block, T, extras):
    kind = block.get("kind", "none")
    if kind == "none":
        return NoBarrier
    if kind == "constant":
        level = float(block["level"])
        return BarrierSpec(lambda t, w: np.full(w.shape[0], level))
    if kind == "linear-decay":
        level = float(block.get("level", 0.5))
        return BarrierSpec(lambda t, w: np.full(w.shape[0], level * (1.0 - t / T)))
    if kind == "terminal-shift":
        if "phi_path" not in extras:
            raise ConfigError("terminal-shift barrier needs a family with a path terminal function")
        shift = float(block.get("shift", 0.0))
        if shift < 0:
            raise ConfigError("terminal-shift needs shift >= 0")
        phi = extras["phi_path"]
        return BarrierSpec(lambda t, w: phi(w) - shift)
    if kind == "payoff":
        if "payoff" not in extras:
            raise ConfigError("payoff barrier is only defined for the american-put family")
        return BarrierSpec(extras["payoff"])
    raise ConfigError(f"unknown barrier kind {kind!r}")


def build_problem(block: dict, T: float) -> ProblemSpec:
    """Resolve a JSON problem block into a :class:`ProblemSpec` on ``[0, T]``."""
    try:
        name = block["family"]
    except (KeyError, TypeError):
        raise ConfigError("problem block needs a 'family'") from None
    if name not in FAMILIES:
        raise ConfigError(f"unknown problem family {name!r}; known: {sorted(FAMILIES)}")
    params = dict(block.get("params", {}))
    d = int(block.get("d", 1))
    p = float(block.get("p", 1.5))
    params.setdefault("p", p)
    try:
        coeffs, terminal, extras = FAMILIES[name](params, float(T), d)
        barrier_block = block.get("barrier", extras.get("default_barrier", {"kind": "none"}))
        barrier = _barrier(barrier_block, float(T), extras)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad parameters for family {name!r}: {exc}") from exc
    label = {"family": name, "params": params, "barrier": barrier_block, "T": float(T), "d": d, "p": p}
    return ProblemSpec(coeffs, terminal, barrier, float(T), d, p, label)
