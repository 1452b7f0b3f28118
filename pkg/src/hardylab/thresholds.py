"""Explicit existence thresholds and the regime table.

Computes the Hardy constant, the fundamental exponents ``beta_-/beta_+``,
the criticality threshold ``gamma_crit``, the Hardy-Sobolev exponent and the
perturbation threshold ``q_crit``, then classifies a problem instance into one
of the four existence rows (non-critical; critical with q above, at or below
q_crit).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

from scipy.optimize import brentq

from .specfun import PsiParams, hardy_midpoint, psi

__all__ = [
    "ProblemInstance",
    "ThresholdReport",
    "Regime",
    "Governing",
    "Verdict",
    "UnsupportedError",
    "gamma_H",
    "beta_pm",
    "gamma_crit",
    "two_star",
    "q_crit",
    "classify",
    "is_critical",
]

# equality tolerance for q == q_crit and gamma == gamma_crit
EQ_RTOL = 1e-9
# gamma within this relative distance of gamma_H collapses to the midpoint pair
HARDY_RTOL = 1e-12


class UnsupportedError(ValueError):
    """Parameters the threshold formulas do not cover (e.g. gamma < 0 with alpha < 2)."""


class Regime(str, enum.Enum):
    NON_CRITICAL = "NonCritical"
    CRITICAL = "Critical"


class Governing(str, enum.Enum):
    H0_POSITIVE = "H0Positive"
    MASS_POSITIVE = "MassPositive"
    COMBINED_POSITIVE = "CombinedPositive"


class Verdict(str, enum.Enum):
    GUARANTEED = "existence-guaranteed"
    NOT_MET = "condition-not-met"
    MASS_UNKNOWN = "mass-unknown"
    # c1 h(0) + c2 m with h(0) > 0 > m (or the reverse) and no coefficients supplied
    UNDETERMINED = "undetermined"


def _close(a: float, b: float, rtol: float = EQ_RTOL) -> bool:
    return abs(a - b) <= rtol * max(1.0, abs(a), abs(b))


@dataclass(frozen=True)
class ProblemInstance:
    """One instance of the perturbed Hardy-Schroedinger problem.

    ``h0`` is the perturbation weight at the origin; ``h_profile`` optionally
    gives h on the radial grid as a callable of r (defaults to the constant
    ``h0``). ``R`` is the ball radius (radial, alpha = 2) or the interval
    half-length (n = 1).
    """

    n: float
    alpha: float
    s: float = 0.0
    gamma: float = 0.0
    lam: float = 0.0
    q: float = 3.0
    h0: float = 1.0
    mass: Optional[float] = None
    R: float = 1.0
    h_profile: Optional[object] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        n, a, s = self.n, self.alpha, self.s
        if not (0.0 < a <= 2.0):
            raise ValueError(f"alpha must satisfy 0 < alpha <= 2, got {a}")
        if not n > a:
            raise ValueError(f"need n > alpha, got n={n}, alpha={a}")
        if not (0.0 <= s < a):
            raise ValueError(f"s violates 0 <= s < alpha (s={s}, alpha={a})")
        top = 2.0 * n / (n - a)
        if not (2.0 < self.q < top):
            raise ValueError(f"q violates 2 < q < 2*_alpha = {top} (q={self.q})")
        gh = gamma_H(n, a)
        if not self.gamma < gh:
            raise ValueError(f"gamma violates gamma < gamma_H = {gh} (gamma={self.gamma})")
        if not self.h0 >= 0.0:
            raise ValueError(f"h0 violates h0 >= 0 (h0={self.h0})")
        if not self.R > 0.0:
            raise ValueError(f"R must be positive, got {self.R}")

    @property
    def psi_params(self) -> PsiParams:
        return PsiParams(self.n, self.alpha)

    @property
    def two_star_s(self) -> float:
        return two_star(self.n, self.alpha, self.s)

    def h(self, r):
        """Perturbation weight evaluated at radii (or 1-D coordinates) ``r``."""
        import numpy as np

        r = np.asarray(r, dtype=float)
        if self.h_profile is None:
            return np.full_like(r, self.h0)
        return np.asarray(self.h_profile(r), dtype=float) * np.ones_like(r)

    def replace(self, **changes) -> "ProblemInstance":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass
class ThresholdReport:
    gamma_H: float
    gamma_crit: Optional[float]
    beta_minus: float
    beta_plus: float
    two_star_s: float
    two_star: float
    q_crit: float
    regime: Regime
    governing: Governing
    verdict: Verdict
    exponent_perturbation: float
    exponent_mass: float
    coefficients: Optional[tuple] = None

    def to_dict(self) -> dict:
        return {
            "gamma_H": self.gamma_H,
            "gamma_crit": self.gamma_crit,
            "beta_minus": self.beta_minus,
            "beta_plus": self.beta_plus,
            "two_star_s": self.two_star_s,
            "two_star": self.two_star,
            "q_crit": self.q_crit,
            "regime": self.regime.value,
            "governing": self.governing.value,
            "verdict": self.verdict.value,
            "exponent_perturbation": self.exponent_perturbation,
            "exponent_mass": self.exponent_mass,
            "coefficients": list(self.coefficients) if self.coefficients else None,
        }


def gamma_H(n: float, alpha: float) -> float:
    """Best constant in the Hardy inequality on R^n for ``(-Delta)^(alpha/2)``."""
    return hardy_midpoint(PsiParams(n, alpha))


def two_star(n: float, alpha: float, s: float = 0.0) -> float:
    """Hardy-Sobolev exponent ``2(n-s)/(n-alpha)``."""
    return 2.0 * (n - s) / (n - alpha)


def beta_pm(n: float, alpha: float, gamma: float) -> tuple[float, float]:
    """Roots of ``psi(t) = gamma`` on each half of ``(0, n - alpha)``.

    The lower root is bracketed on ``[0, (n-alpha)/2]``; the upper one is its
    reflection ``n - alpha - beta_-``, which is exact because psi is symmetric
    under ``t -> n - alpha - t``. For ``alpha = 2`` and ``gamma < 0`` the
    closed form ``(n-2)/2 -+ sqrt((n-2)^2/4 - gamma)`` is used.
    """
    p = PsiParams(n, alpha)
    w = p.width
    mid = 0.5 * w
    gh = hardy_midpoint(p)
    if gamma < 0.0:
        if alpha == 2.0:
            root = math.sqrt(mid * mid - gamma)
            return mid - root, mid + root
        raise UnsupportedError("gamma < 0 is only supported for alpha = 2")
    if gamma > gh * (1.0 + HARDY_RTOL):
        raise ValueError(f"gamma = {gamma} exceeds gamma_H = {gh}")
    if gamma >= gh * (1.0 - HARDY_RTOL):
        return mid, mid
    if gamma == 0.0:
        return 0.0, w
    bm = brentq(lambda t: psi(p, t) - gamma, 0.0, mid, xtol=1e-15, rtol=1e-15, maxiter=200)
    return bm, w - bm


def gamma_crit(n: float, alpha: float) -> Optional[float]:
    """``psi((n - 2 alpha)/2)`` when ``n >= 2 alpha``, otherwise ``None``.

    ``None`` means every admissible gamma gives a critical operator. For
    alpha = 2 the closed form ``(n-2)^2/4 - 1`` is returned for every n > 2;
    at n = 3 it is -3/4, but the operator stays critical for all gamma.
    """
    p = PsiParams(n, alpha)
    if alpha == 2.0:
        return 0.25 * (n - 2.0) ** 2 - 1.0
    if n < 2.0 * alpha:
        return None
    return psi(p, 0.5 * (n - 2.0 * alpha))


def is_critical(n: float, alpha: float, gamma: float) -> bool:
    """Criticality of ``L_{gamma,alpha}``; the boundary gamma = gamma_crit is non-critical."""
    if n < 2.0 * alpha:
        return True
    gc = gamma_crit(n, alpha)
    return gamma > gc and not _close(gamma, gc)


def _q_crit_formula(n, alpha, bm, bp):
    return two_star(n, alpha) - 2.0 * (bp - bm) / (n - alpha)


def q_crit(n: float, alpha: float, gamma: float) -> float:
    """Perturbation threshold ``2*_alpha - 2(beta_+ - beta_-)/(n - alpha)``.

    Only meaningful for critical operators; raises ``ValueError`` otherwise.
    """
    if not is_critical(n, alpha, gamma):
        raise ValueError(
            f"q_crit is undefined for the non-critical operator (n={n}, alpha={alpha}, gamma={gamma})"
        )
    bm, bp = beta_pm(n, alpha, gamma)
    return _q_crit_formula(n, alpha, bm, bp)


def classify(
    inst: ProblemInstance,
    coefficients: Optional[tuple[float, float]] = None,
    lambda1: Optional[float] = None,
) -> ThresholdReport:
    """Place an instance in the existence table.

    ``coefficients`` are the positive constants ``(c1, c2)`` of the combined
    condition ``c1 h(0) + c2 m > 0``, if an estimate is available.
    ``lambda1``, when given, is checked against ``lam``.
    """
    n, a = inst.n, inst.alpha
    if lambda1 is not None and not inst.lam < lambda1:
        raise ValueError(f"lambda violates lambda < lambda_1 = {lambda1} (lambda={inst.lam})")
    gh = gamma_H(n, a)
    gc = gamma_crit(n, a)
    bm, bp = beta_pm(n, a, inst.gamma)
    qc = _q_crit_formula(n, a, bm, bp)
    critical = is_critical(n, a, inst.gamma)
    regime = Regime.CRITICAL if critical else Regime.NON_CRITICAL

    if not critical or (inst.q > qc and not _close(inst.q, qc)):
        governing = Governing.H0_POSITIVE
    elif _close(inst.q, qc):
        governing = Governing.COMBINED_POSITIVE
    else:
        governing = Governing.MASS_POSITIVE

    m = inst.mass
    if governing is Governing.H0_POSITIVE:
        verdict = Verdict.GUARANTEED if inst.h0 > 0 else Verdict.NOT_MET
    elif governing is Governing.MASS_POSITIVE:
        if m is None:
            verdict = Verdict.MASS_UNKNOWN
        else:
            verdict = Verdict.GUARANTEED if m > 0 else Verdict.NOT_MET
    else:
        if m is None:
            verdict = Verdict.MASS_UNKNOWN
        elif coefficients is not None:
            c1, c2 = coefficients
            verdict = Verdict.GUARANTEED if c1 * inst.h0 + c2 * m > 0 else Verdict.NOT_MET
        elif (inst.h0 > 0 and m >= 0) or (inst.h0 >= 0 and m > 0):
            verdict = Verdict.GUARANTEED
        elif inst.h0 <= 0 and m <= 0:
            verdict = Verdict.NOT_MET
        else:
            verdict = Verdict.UNDETERMINED

    return ThresholdReport(
        gamma_H=gh,
        gamma_crit=gc,
        beta_minus=bm,
        beta_plus=bp,
        two_star_s=two_star(n, a, inst.s),
        two_star=two_star(n, a),
        q_crit=qc,
        regime=regime,
        governing=governing,
        verdict=verdict,
        exponent_perturbation=n - inst.q * (n - a) / 2.0,
        exponent_mass=bp - bm,
        coefficients=tuple(coefficients) if coefficients is not None else None,
    )
