"""Numerical mountain pass for the local radial problem (alpha = 2).

The min-max level ``inf_sigma sup_t Phi(sigma(t))`` over paths from 0 to a
point of negative energy is approximated by deforming the ray path
``sigma(t) = t t0 w``:

1. the path is sampled at ``path_points`` values of t, and the maximum is
   refined on the fiber map ``t -> Phi(t w)``, which is an explicit power law;
2. the maximum point takes an Armijo step along the Sobolev gradient
   ``-A^-1 Phi'``, and the ray direction ``w`` is reset through the new point
   (endpoints stay at 0 and at a point of negative energy);
3. once the residual has dropped by ``string_reduction`` the maximum point is
   polished by damped Newton iterations on the tridiagonal Hessian.

Residuals are always measured in the dual norm ``sqrt(g^T A^-1 g)`` of the
``|||.|||`` inner product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse.linalg import spsolve

from .quadform import (
    GridFunction,
    GridMode,
    NonConvergenceError,
    RadialGrid,
    _discretization,
    build_grid,
    first_eigenvalue,
    rayleigh_min_mu,
)
from .thresholds import ProblemInstance

__all__ = [
    "MPConfig",
    "MPResult",
    "PSReport",
    "GeometryError",
    "StagnationError",
    "phi2_and_gradient",
    "mountain_pass_solve",
    "ps_monitor",
    "default_seed",
]


class GeometryError(ValueError):
    """Mountain-pass geometry could not be verified (e.g. lambda >= lambda_1)."""


class StagnationError(NonConvergenceError):
    """The residual stopped decreasing above the tolerance; ``trace`` holds the iterates."""

    def __init__(self, message, trace=None, upsilon=None):
        super().__init__(message)
        self.trace = trace or []
        self.upsilon = upsilon


@dataclass
class MPConfig:
    max_iters: int = 2000
    grad_tol: float = 1e-6
    path_points: int = 24
    deform_step: float = 1.0
    seed_direction: Optional[GridFunction] = None
    m: int = 400
    grading: float = 2.0
    newton_iters: int = 100
    # the string phase hands over to Newton once the climbing image's
    # residual has dropped by this factor
    string_reduction: float = 1e-2

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError(f"grad_tol must be positive, got {self.grad_tol}")
        if self.path_points < 16:
            raise ValueError(f"path_points must be >= 16, got {self.path_points}")
        if not self.deform_step > 0:
            raise ValueError(f"deform_step must be positive, got {self.deform_step}")


@dataclass
class MPResult:
    level: float
    solution: GridFunction
    residual: float
    below_threshold: bool
    positive: bool
    iterations: int
    rho: float
    t0: float
    upsilon: float
    mu_discrete: float
    energy_identity_error: float
    deform_iterations: int = 0  # leading trace entries produced by the path deformation
    trace: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "residual": self.residual,
            "below_threshold": self.below_threshold,
            "positive": self.positive,
            "iterations": self.iterations,
            "rho": self.rho,
            "t0": self.t0,
            "upsilon": self.upsilon,
            "mu_discrete": self.mu_discrete,
            "energy_identity_error": self.energy_identity_error,
            "deform_iterations": self.deform_iterations,
            "min_value": float(self.solution.values.min()),
        }


def _check_local(grid: RadialGrid, inst: ProblemInstance):
    if inst.alpha != 2.0 or grid.mode is not GridMode.RADIAL:
        raise ValueError("the mountain-pass solver works on radial grids with alpha = 2")
    if grid.tail_exponent is not None:
        raise ValueError("the mountain-pass solver needs a Dirichlet grid")


def phi2_and_gradient(u: GridFunction, inst: ProblemInstance) -> tuple[float, GridFunction]:
    """Energy ``Phi_2(u)`` and its gradient vector.

    The gradient holds ``<Phi_2'(u), phi_i>`` for the nodal basis functions
    (zero at the Dirichlet node), so ``<grad, w>`` is the directional
    derivative in direction ``w``. Its Riesz representative in the
    ``|||.|||`` inner product is ``A^-1 grad``.
    """
    _check_local(u.grid, inst)
    d = _discretization(u.grid, inst)
    v = u.free_values
    return d.phi_free(v), GridFunction.from_free(u.grid, d.phi_grad_free(v))


def default_seed(inst: ProblemInstance, grid: RadialGrid) -> GridFunction:
    """Truncated bubble ``eta u_eps`` with ``delta = R/5`` and ``eps = delta/10``."""
    from .testfun import CutoffSpec, make_bubble

    bubble = make_bubble(inst)
    cut = CutoffSpec(grid.R / 5.0)
    eps = cut.delta / 10.0
    r = grid.nodes
    return GridFunction(grid, cut.eta(r) * eps ** (-(inst.n - 2.0) / 2.0) * bubble(r / eps))


class _Problem:
    def __init__(self, grid, inst):
        self.d = d = _discretization(grid, inst)
        self.solve = d.factorize(0.0)  # |||.||| inner product, SPD for gamma < gamma_H
        self.A = d.triple_matrix

    def phi(self, v):
        return self.d.phi_free(v)

    def grad(self, v):
        return self.d.phi_grad_free(v)

    def norm(self, v):
        return math.sqrt(max(float(v @ (self.A @ v)), 0.0))

    def residual(self, g):
        return math.sqrt(max(float(g @ self.solve(g)), 0.0))


def _geometry(prob: _Problem, seed: np.ndarray, rng) -> tuple[float, float, float]:
    """Return ``(radius, rho, t0)``: Phi >= rho > 0 on the sampled sphere, Phi(t0 seed) < 0."""
    n = seed.size
    dirs = [seed]
    for _ in range(15):
        w = np.abs(rng.standard_normal(n)) * seed + 0.1 * rng.standard_normal(n) * np.abs(seed).max()
        dirs.append(w)
    dirs = [w / prob.norm(w) for w in dirs]
    radius = 1.0
    for _ in range(80):
        vals = [prob.phi(radius * w) for w in dirs]
        if min(vals) > 0:
            break
        radius *= 0.5
    else:
        raise GeometryError("no sphere with Phi > 0 found around 0 (lambda >= lambda_1?)")
    rho = min(vals)
    t0 = 1.0
    for _ in range(200):
        if prob.phi(t0 * seed) < 0:
            break
        t0 *= 2.0
    else:
        raise GeometryError("Phi(t v0) did not become negative along the seed ray")
    return radius, rho, t0


def _endpoint(prob: _Problem, w, t0):
    """Smallest power-of-two multiple of ``t0`` past which ``Phi(t w) < 0``."""
    while prob.phi(t0 * w) >= 0:
        t0 *= 2.0
    while t0 > 1.0 and prob.phi(0.5 * t0 * w) < 0:
        t0 *= 0.5
    return t0


def _ray_max(prob: _Problem, w, t0, grid_t):
    """Maximum of Phi along the path ``sigma(t) = t t0 w``.

    The sampled path points locate the bracket; the fiber map is then
    maximized exactly since ``Phi(t w)`` is an explicit three-term power law in t.
    """
    from .testfun import fiber_max

    d = prob.d
    vals = [prob.phi(t * t0 * w) for t in grid_t]
    k = int(np.argmax(vals))
    I = float(w @ (d.operator() @ w))
    J = d.hs_free(w)
    K = d.pert_free(w)
    if K >= 0 and J > 0 and I > 0:
        # Phi(t w) = t^2 I/2 - t^p J/p - t^q K/q
        t, value = fiber_max(I, J, K, d.p, d.q)
        return t * w, value
    lo = grid_t[max(k - 1, 0)] * t0
    hi = grid_t[min(k + 1, len(grid_t) - 1)] * t0
    from scipy.optimize import minimize_scalar

    opt = minimize_scalar(lambda t: -prob.phi(t * w), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12 * t0})
    return opt.x * w, -opt.fun


def _newton(prob: _Problem, v, tol, max_iter, trace):
    g = prob.grad(v)
    res = prob.residual(g)
    it = 0
    for it in range(max_iter):
        if res <= tol:
            return v, res, it
        H = prob.d.phi_hessian_free(v)
        step = -spsolve(H, g)
        if not np.all(np.isfinite(step)):
            break
        tau = 1.0
        while tau > 1e-8:
            trial = v + tau * step
            g_t = prob.grad(trial)
            r_t = prob.residual(g_t)
            if r_t < res:
                break
            tau *= 0.5
        else:
            break
        v, g, res = trial, g_t, r_t
        trace.append((prob.phi(v), res))
    return v, res, it


def mountain_pass_solve(
    inst: ProblemInstance,
    cfg: Optional[MPConfig] = None,
    grid: Optional[RadialGrid] = None,
    mu_discrete: Optional[float] = None,
) -> MPResult:
    """Approximate the mountain-pass critical point of ``Phi_2`` on the ball ``B_R``.

    Raises :class:`GeometryError` when ``lambda`` is not below the discrete
    ``lambda_1`` or the geometry cannot be verified, and
    :class:`StagnationError` (carrying the trace) when the residual does not
    reach ``grad_tol``.
    """
    from .testfun import ps_threshold

    cfg = MPConfig() if cfg is None else cfg
    grid = build_grid(GridMode.RADIAL, inst.R, cfg.m, cfg.grading, n=inst.n) if grid is None else grid
    _check_local(grid, inst)
    lam1 = first_eigenvalue(inst, grid)
    if not inst.lam < lam1:
        raise GeometryError(f"lambda = {inst.lam} is not below the discrete lambda_1 = {lam1}")
    seed = cfg.seed_direction if cfg.seed_direction is not None else default_seed(inst, grid)
    if seed.grid is not grid:
        raise ValueError("seed_direction lives on a different grid")
    v0 = seed.free_values
    if np.any(v0 < 0) or not np.any(v0 > 0):
        raise ValueError("seed_direction must be nonnegative and nonzero")

    prob = _Problem(grid, inst)
    v0 = v0 / prob.norm(v0)
    if mu_discrete is None:
        mu_discrete = rayleigh_min_mu(inst.replace(lam=0.0), grid).mu
    upsilon = ps_threshold(inst.n, 2.0, inst.s, mu_discrete)

    rng = np.random.default_rng(0)
    _, rho, t0 = _geometry(prob, v0, rng)
    N = cfg.path_points
    grid_t = np.linspace(0.0, 1.0, N)
    trace = []

    w = v0
    v_top, level = _ray_max(prob, w, t0, grid_t)
    res = prob.residual(prob.grad(v_top))
    res0 = res
    trace.append((level, res))
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        if res <= max(cfg.grad_tol, cfg.string_reduction * res0):
            break
        g = prob.grad(v_top)
        direction = -prob.solve(g)
        slope = float(g @ direction)
        tau = cfg.deform_step
        while tau > 1e-12 and prob.phi(v_top + tau * direction) > level + 1e-4 * tau * slope:
            tau *= 0.5
        if tau <= 1e-12:
            break
        moved = v_top + tau * direction
        if not np.any(moved > 0):
            break
        w = moved / prob.norm(moved)
        t0 = _endpoint(prob, w, t0)
        v_top, level = _ray_max(prob, w, t0, grid_t)
        res = prob.residual(prob.grad(v_top))
        trace.append((level, res))

    n_deform = len(trace)
    v, res, n_newton = _newton(prob, v_top, cfg.grad_tol, cfg.newton_iters, trace)
    if res <= cfg.grad_tol and prob.phi(v) < rho:
        raise StagnationError(
            f"Newton polish fell to the level {prob.phi(v):.3e} below the ring value rho = {rho:.3e}",
            trace=trace,
            upsilon=upsilon,
        )
    if res > cfg.grad_tol:
        raise StagnationError(
            f"residual stalled at {res:.3e} > grad_tol = {cfg.grad_tol:.1e}", trace=trace, upsilon=upsilon
        )
    d = prob.d
    level = prob.phi(v)
    I = float(v @ (d.operator() @ v))
    rhs = d.hs_free(v) + d.pert_free(v)
    sol = GridFunction.from_free(grid, v)
    return MPResult(
        level=level,
        solution=sol,
        residual=res,
        below_threshold=bool(level < upsilon),
        positive=bool(sol.values.min() >= -1e-10),
        iterations=iters + n_newton,
        rho=rho,
        t0=t0,
        upsilon=upsilon,
        mu_discrete=mu_discrete,
        energy_identity_error=abs(I - rhs) / max(abs(I), abs(rhs), 1e-300),
        deform_iterations=n_deform,
        trace=trace,
    )


@dataclass
class PSReport:
    iterations: int
    levels: list
    residuals: list
    cauchy: bool
    final_level: Optional[float]
    upsilon: Optional[float]
    below_threshold: Optional[bool]
    compactness_risk: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def ps_monitor(trace, upsilon: Optional[float] = None, window: int = 5, rtol: float = 1e-6) -> PSReport:
    """Summarize a solve trace of ``(level, residual)`` pairs.

    Levels count as Cauchy when the last ``window`` increments are all below
    ``rtol`` relative to the final level. ``compactness_risk`` is raised when
    the final level lies within 1% of the threshold ``upsilon`` (or above it).
    """
    trace = list(trace)
    if not trace:
        return PSReport(0, [], [], False, None, upsilon, None, False)
    levels = [float(c) for c, _ in trace]
    residuals = [float(r) for _, r in trace]
    final = levels[-1]
    tail = np.abs(np.diff(levels[-(window + 1):]))
    cauchy = len(levels) > window and bool(np.all(tail <= rtol * max(abs(final), 1e-300)))
    below = None if upsilon is None else bool(final < upsilon)
    risk = upsilon is not None and final >= 0.99 * upsilon
    return PSReport(len(trace), levels, residuals, cauchy, final, upsilon, below, bool(risk))
