"""Gamma-function map governing the fundamental exponents.

For the operator ``(-Delta)^(alpha/2) - gamma/|x|^alpha`` on R^n, the power
``|x|^-t`` is mapped to ``Psi_{n,alpha}(t) |x|^-(t+alpha)``, with

    Psi_{n,alpha}(t) = 2^alpha G((n-t)/2) G((alpha+t)/2) / (G((n-t-alpha)/2) G(t/2))

where G is the Gamma function. Everything here is evaluated in log space so
large dimensions do not overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

__all__ = [
    "PsiParams",
    "log_gamma",
    "psi",
    "psi_derivative",
    "psi_derivative_analytic",
    "hardy_midpoint",
]


@dataclass(frozen=True)
class PsiParams:
    """Dimension ``n`` and operator order ``alpha`` of the Gamma map."""

    n: float
    alpha: float

    def __post_init__(self):
        if not (0.0 < self.alpha <= 2.0):
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        if not self.n > self.alpha:
            raise ValueError(f"need n > alpha, got n={self.n}, alpha={self.alpha}")

    @property
    def width(self) -> float:
        """Length ``n - alpha`` of the domain of ``psi``."""
        return float(self.n - self.alpha)


def log_gamma(x):
    """Natural log of the Gamma function for positive arguments.

    Accepts scalars or arrays. Raises ``ValueError`` on any ``x <= 0``.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("log_gamma is only defined here for x > 0")
    out = gammaln(arr)
    return float(out) if out.ndim == 0 else out


def _log_ratio(n, alpha, t):
    return (
        gammaln((n - t) / 2.0)
        + gammaln((alpha + t) / 2.0)
        - gammaln((n - t - alpha) / 2.0)
        - gammaln(t / 2.0)
    )


def psi(params: PsiParams, t):
    """Evaluate ``Psi_{n,alpha}(t)`` on the closed interval ``[0, n - alpha]``.

    The open-interval formula is extended by continuity: both endpoints map
    to exactly 0, where one Gamma factor in the denominator has a pole.
    Scalars in, scalar out; arrays in, array out.
    """
    n, alpha = params.n, params.alpha
    tt = np.asarray(t, dtype=float)
    w = params.width
    if np.any((tt < 0.0) | (tt > w)) or np.any(np.isnan(tt)):
        raise ValueError(f"psi needs t in [0, {w}], got {t}")
    out = np.zeros_like(tt)
    inner = (tt > 0.0) & (tt < w)
    if np.any(inner):
        ti = tt[inner]
        out[inner] = 2.0**alpha * np.exp(_log_ratio(n, alpha, ti))
    return float(out) if out.ndim == 0 else out


def hardy_midpoint(params: PsiParams) -> float:
    """``2^alpha G^2((n+alpha)/4) / G^2((n-alpha)/4)``: the value of psi at the midpoint."""
    n, a = params.n, params.alpha
    return 2.0**a * math.exp(2.0 * (gammaln((n + a) / 4.0) - gammaln((n - a) / 4.0)))


def psi_derivative(params: PsiParams, t: float) -> float:
    """Central-difference derivative of ``psi`` with step ``max(1e-6, 1e-6 t)``.

    Near the endpoints the stencil is clipped to ``[0, n - alpha]``, where psi
    is extended by continuity.
    """
    w = params.width
    if not (0.0 < t < w):
        raise ValueError(f"psi_derivative needs t in (0, {w}), got {t}")
    h = max(1e-6, 1e-6 * t)
    lo, hi = max(t - h, 0.0), min(t + h, w)
    return (psi(params, hi) - psi(params, lo)) / (hi - lo)


def psi_derivative_analytic(params: PsiParams, t: float) -> float:
    """Exact derivative via digamma: ``psi(t) * d/dt log psi(t)``."""
    n, a = params.n, params.alpha
    w = params.width
    if not (0.0 < t < w):
        raise ValueError(f"psi_derivative_analytic needs t in (0, {w}), got {t}")
    dlog = 0.5 * (
        -digamma((n - t) / 2.0)
        + digamma((a + t) / 2.0)
        + digamma((n - t - a) / 2.0)
        - digamma(t / 2.0)
    )
    return psi(params, t) * dlog
