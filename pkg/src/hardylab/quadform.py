"""Discrete quadratic and nonlinear forms on radial / 1-D grids.

Two discretizations are supported:

* ``RadialAlpha2`` -- radial profiles u(r) on the ball B_R in R^n for the local
  operator (alpha = 2). Piecewise-linear in r between nodes, flat on the
  innermost cell [0, r_1]; the Dirichlet energy is integrated exactly.
* ``Interval1D`` -- functions on (-R, R) for the fractional operator with
  0 < alpha < 2 in dimension one, extended by zero outside. The Gagliardo
  double integral is assembled once into a dense matrix.

On radial grids, weighted integrals of u^2 and of the nonlinear terms use
8-point Gauss rules on every element (one point on the flat inner cell)
through an interpolation matrix ``P`` from nodes to quadrature points, so the
discrete Rayleigh quotient is a true Ritz value. On the interval grid they are
lumped at the nodes, each node carrying the exact ``int |x|^{-p}`` over its
dual cell.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.linalg import splu
from scipy.special import gammaln

from .thresholds import ProblemInstance, beta_pm, gamma_H, is_critical

__all__ = [
    "GridMode",
    "RadialGrid",
    "GridFunction",
    "FormValues",
    "Discretization",
    "MuResult",
    "SingularSolution",
    "NonConvergenceError",
    "build_grid",
    "sphere_area",
    "fractional_constant",
    "gagliardo_seminorm_sq",
    "forms",
    "rayleigh_min_mu",
    "first_eigenvalue",
    "singular_solution",
    "mass_estimate",
]


class NonConvergenceError(RuntimeError):
    """An iterative solver stopped without meeting its tolerance."""


class GridMode(str, enum.Enum):
    RADIAL = "RadialAlpha2"
    INTERVAL = "Interval1D"


def sphere_area(n: float) -> float:
    """Surface area of the unit sphere S^{n-1} in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def fractional_constant(n: float, alpha: float) -> float:
    """``C_{n,alpha} = 2^alpha G((n+alpha)/2) / (pi^{n/2} |G(-alpha/2)|)``."""
    log_abs_g = gammaln(-alpha / 2.0)  # gammaln returns log|Gamma|
    return 2.0**alpha * math.exp(gammaln((n + alpha) / 2.0) - log_abs_g) / math.pi ** (n / 2.0)


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Nodes and dual-cell weights of a radial or 1-D grid.

    ``tail_exponent`` (radial only) replaces the Dirichlet condition at R by
    the exterior extension ``u(R) (r/R)^-tail_exponent``; the outer node then
    becomes a free unknown. Used for whole-space reference profiles.
    """

    mode: GridMode
    R: float
    m: int
    grading: float
    n: float
    nodes: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)  # dual-cell boundaries, len(nodes) + 1
    tail_exponent: Optional[float] = None

    def cell_integral(self, p: float) -> np.ndarray:
        """``int_{cell_i} |x|^{-p} dx`` for every node (radial: over the shell)."""
        e = self.edges
        if self.mode is GridMode.RADIAL:
            k = self.n - p
            if k <= 0:
                raise ValueError(f"weight r^-{p} is not integrable at the origin in R^{self.n}")
            return sphere_area(self.n) * (e[1:] ** k - e[:-1] ** k) / k
        k = 1.0 - p
        if k <= 0:
            raise ValueError(f"weight |x|^-{p} is not integrable at the origin in 1-D")
        a, b = np.abs(e[:-1]), np.abs(e[1:])
        # 1-D cells never straddle 0: the origin is a cell edge
        return np.abs(b**k - a**k) / k

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights for ``int_Omega f dx`` (unit weight function)."""
        return self.cell_integral(0.0)

    @cached_property
    def free(self) -> np.ndarray:
        """Boolean mask of unknowns; Dirichlet nodes are fixed at 0."""
        mask = np.ones(self.nodes.size, dtype=bool)
        if self.mode is GridMode.RADIAL:
            if self.tail_exponent is None:
                mask[-1] = False
        else:
            mask[0] = mask[-1] = False
        return mask

    def volume(self) -> float:
        if self.mode is GridMode.RADIAL:
            return sphere_area(self.n) * self.R**self.n / self.n
        return 2.0 * self.R


def build_grid(
    mode,
    R: float,
    m: int,
    grading: float = 2.0,
    n: float = 3,
    tail_exponent: Optional[float] = None,
) -> RadialGrid:
    """Graded grid with nodes clustered toward the origin.

    Radial: ``r_i = R (i/m)^grading`` for i = 1..m, so ``r_1 = R / m^grading``
    and the last node sits on the boundary. Interval: ``m`` (even) nodes
    symmetric about 0, ``x = +-R ((i - 1/2)/(m/2 - 1/2))^grading``; the origin
    is never a node.
    """
    mode = GridMode(mode)
    if not R > 0:
        raise ValueError(f"R must be positive, got {R}")
    if int(m) != m or m < 16:
        raise ValueError(f"m must be an integer >= 16, got {m}")
    if not grading >= 1.0:
        raise ValueError(f"grading must be >= 1, got {grading}")
    m = int(m)
    if mode is GridMode.RADIAL:
        if not n > 2:
            raise ValueError(f"radial grids need n > 2, got {n}")
        r = R * (np.arange(1, m + 1) / m) ** grading
        r[-1] = R
        edges = np.concatenate([[0.0], 0.5 * (r[:-1] + r[1:]), [R]])
        return RadialGrid(mode, float(R), m, float(grading), float(n), r, edges, tail_exponent)
    if tail_exponent is not None:
        raise ValueError("tail_exponent is only available on radial grids")
    if m % 2:
        raise ValueError(f"Interval1D grids need an even node count, got {m}")
    half = m // 2
    pos = R * ((np.arange(1, half + 1) - 0.5) / (half - 0.5)) ** grading
    pos[-1] = R
    x = np.concatenate([-pos[::-1], pos])
    edges = np.concatenate([[-R], 0.5 * (x[:-1] + x[1:]), [R]])
    return RadialGrid(mode, float(R), m, float(grading), 1.0, x, edges, None)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Nodal values of a function on a grid; Dirichlet nodes hold exactly 0."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.nodes.shape:
            raise ValueError(f"expected {self.grid.nodes.size} values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        v[~self.grid.free] = 0.0
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_free(cls, grid: RadialGrid, free_values) -> "GridFunction":
        v = np.zeros(grid.nodes.size)
        v[grid.free] = free_values
        return cls(grid, v)

    @classmethod
    def sample(cls, grid: RadialGrid, f: Callable) -> "GridFunction":
        return cls(grid, f(grid.nodes))

    @property
    def free_values(self) -> np.ndarray:
        return self.values[self.grid.free]

    def __mul__(self, c: float) -> "GridFunction":
        return GridFunction(self.grid, self.values * c)

    __rmul__ = __mul__


@dataclass
class FormValues:
    seminorm_sq: float
    hardy: float
    l2: float
    hs_integral: float
    pert_integral: float
    triple_norm_sq: float


# ---------------------------------------------------------------------------
# 1-D Gagliardo form


def _gauss(k: int, a=0.0, b=1.0):
    x, w = np.polynomial.legendre.leggauss(k)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def _gagliardo_matrix(x: np.ndarray, alpha: float, R: float, order: int = 8) -> np.ndarray:
    """Matrix of ``int int_{R^2} (u(x)-u(y))^2 / |x-y|^{1+alpha}`` over P1 nodal values.

    Element pairs are split three ways: the diagonal block is integrated in
    closed form from the constant slope; pairs sharing a vertex use a
    vertex-centred Duffy map, under which the integrand factors into
    ``t^{2-alpha}`` times a smooth function; separated pairs use tensor
    Gauss-Legendre. The exterior of (-R, R) contributes the closed-form kernel
    ``((R-x)^-a + (R+x)^-a)/a``.
    """
    M = x.size
    h = np.diff(x)
    ne = h.size
    A = np.zeros((M, M))
    idx = np.arange(ne)

    # same element: (u_b - u_a)^2 * 2 h^{1-a} / ((2-a)(3-a))
    c_same = 2.0 * h ** (1.0 - alpha) / ((2.0 - alpha) * (3.0 - alpha))
    np.add.at(A, (idx, idx), c_same)
    np.add.at(A, (idx + 1, idx + 1), c_same)
    np.add.at(A, (idx, idx + 1), -c_same)
    np.add.at(A, (idx + 1, idx), -c_same)

    # adjacent elements [x_a, v] and [v, x_d]; ordered pairs counted twice
    wq, ww = _gauss(2 * order)
    h1, h2 = h[:-1, None], h[1:, None]
    w = wq[None, :]
    d1 = (h1 + h2 * w) ** (-1.0 - alpha)  # triangle with eta/h2 <= xi/h1
    d2 = (h1 * w + h2) ** (-1.0 - alpha)
    vec1 = (np.ones_like(w), w - 1.0, -w)
    vec2 = (w, 1.0 - w, -np.ones_like(w))
    pref = 2.0 * (h1 * h2)[:, 0] / (3.0 - alpha)
    nodes3 = (idx[:-1], idx[:-1] + 1, idx[:-1] + 2)
    for i in range(3):
        for j in range(3):
            val = pref * (
                (vec1[i] * vec1[j] * d1 * ww).sum(axis=1) + (vec2[i] * vec2[j] * d2 * ww).sum(axis=1)
            )
            np.add.at(A, (nodes3[i], nodes3[j]), val)

    # separated elements: tensor Gauss on [0,1]^2 in local coordinates
    g, gw = _gauss(order)
    phi_l, phi_r = 1.0 - g, g
    for k in range(2, ne):
        e = idx[: ne - k]
        f = e + k
        X = x[e, None] + h[e, None] * g[None, :]  # (P, G)
        Y = x[f, None] + h[f, None] * g[None, :]
        K = np.abs(X[:, :, None] - Y[:, None, :]) ** (-1.0 - alpha)  # (P, G, G)
        K *= (gw[:, None] * gw[None, :])[None] * (h[e] * h[f])[:, None, None]
        # c = [phi_l(x), phi_r(x), -phi_l(y), -phi_r(y)]
        cx = (phi_l, phi_r)
        s_xx = [[np.einsum("pij,i,i->p", K, cx[a], cx[b]) for b in range(2)] for a in range(2)]
        s_xy = [[np.einsum("pij,i,j->p", K, cx[a], cx[b]) for b in range(2)] for a in range(2)]
        s_yy = [[np.einsum("pij,j,j->p", K, cx[a], cx[b]) for b in range(2)] for a in range(2)]
        ex, fy = (e, e + 1), (f, f + 1)
        for a in range(2):
            for b in range(2):
                np.add.at(A, (ex[a], ex[b]), 2.0 * s_xx[a][b])
                np.add.at(A, (fy[a], fy[b]), 2.0 * s_yy[a][b])
                np.add.at(A, (ex[a], fy[b]), -2.0 * s_xy[a][b])
                np.add.at(A, (fy[b], ex[a]), -2.0 * s_xy[a][b])

    # exterior: 2 int u^2 kappa, kappa = ((R-x)^-a + (R+x)^-a) / a
    def kappa(t):
        return ((R - t) ** (-alpha) + (R + t) ** (-alpha)) / alpha

    for el in range(ne):
        if el in (0, ne - 1):
            continue
        t = x[el] + h[el] * g
        kw = kappa(t) * gw * h[el]
        pl, pr = phi_l, phi_r
        A[el, el] += 2.0 * np.sum(kw * pl * pl)
        A[el + 1, el + 1] += 2.0 * np.sum(kw * pr * pr)
        off = 2.0 * np.sum(kw * pl * pr)
        A[el, el + 1] += off
        A[el + 1, el] += off
    # boundary elements: only the interior node's hat survives; the singular
    # part integrates to h^{1-a}/(3-a), the far part is smooth
    for el, inner, far_sign in ((0, 1, -1.0), (ne - 1, ne - 1, 1.0)):
        he = h[el]
        t = x[el] + he * g
        hat = phi_r if el == 0 else phi_l
        smooth = (R + far_sign * t) ** (-alpha) / alpha
        A[inner, inner] += 2.0 * (he ** (1.0 - alpha) / (alpha * (3.0 - alpha)) + np.sum(smooth * hat * hat * gw * he))
    return A


def gagliardo_seminorm_sq(grid: RadialGrid, values, alpha: float) -> float:
    """``(C_{1,a}/2) int int (u(x)-u(y))^2/|x-y|^{1+a}`` for a P1 function on an Interval1D grid."""
    if grid.mode is not GridMode.INTERVAL:
        raise ValueError("the Gagliardo seminorm is only assembled on Interval1D grids")
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    u = np.asarray(values, dtype=float)
    A = _gagliardo_matrix(grid.nodes, alpha, grid.R)
    return 0.5 * fractional_constant(1.0, alpha) * float(u @ A @ u)


# ---------------------------------------------------------------------------
# discretized functional


class Discretization:
    """Matrices and quadrature rules of all forms for one (grid, instance) pair.

    Every integral of a nonlinear quantity is a weighted sum over quadrature
    points, ``int f(u) w dx ~ sum_k W_k f((P u)_k)``, where ``P`` interpolates
    the free nodal values to the points. Radial grids use Gauss points inside
    each element plus one point for the flat innermost cell, so P1 functions
    are integrated (essentially) exactly and the discrete quotients are upper
    bounds of their continuum counterparts. Interval grids lump at the nodes
    (``P = I``) with exact dual-cell integrals of the singular weights.

    Vectors passed to the ``*_free`` methods hold only the free unknowns.
    """

    GAUSS_ORDER = 8

    def __init__(self, grid: RadialGrid, inst: ProblemInstance):
        if grid.mode is GridMode.RADIAL:
            if inst.alpha != 2.0:
                raise ValueError("RadialAlpha2 grids require alpha = 2")
            if grid.n != inst.n:
                raise ValueError(f"grid built for n={grid.n}, instance has n={inst.n}")
        else:
            if inst.n != 1:
                raise ValueError("Interval1D grids require n = 1")
            if not 0.0 < inst.alpha < 2.0:
                raise ValueError("Interval1D grids require 0 < alpha < 2")
        self.grid = grid
        self.inst = inst
        self.p = inst.two_star_s
        self.q = inst.q
        if grid.mode is GridMode.RADIAL:
            self._radial_setup()
        else:
            free = grid.free
            nf = int(free.sum())
            self.P = sp.identity(nf, format="csr")
            self.w_s = grid.cell_integral(inst.s)[free]
            self.w_h = (grid.cell_integral(0.0) * inst.h(np.abs(grid.nodes)))[free]
            self.hardy_matrix = sp.diags(grid.cell_integral(inst.alpha)[free]).tocsc()
            self.mass_matrix = sp.diags(grid.cell_integral(0.0)[free]).tocsc()
            A = _gagliardo_matrix(grid.nodes, inst.alpha, grid.R)
            self.stiff = 0.5 * fractional_constant(1.0, inst.alpha) * A[np.ix_(free, free)]
        self.Pt = self.P.T.tocsr()

    def _radial_setup(self):
        g, inst = self.grid, self.inst
        r, n, m = g.nodes, g.n, g.nodes.size
        om = sphere_area(n)
        h = np.diff(r)
        # exact P1 Dirichlet energy, element by element
        c = om * (r[1:] ** n - r[:-1] ** n) / n / h**2
        main = np.zeros(m)
        main[:-1] += c
        main[1:] += c
        K = sp.diags([main, -c, -c], [0, 1, -1], shape=(m, m), format="csc")

        # quadrature points: one for the flat cell [0, r_1], then Gauss points per element
        xg, wg = _gauss(self.GAUSS_ORDER)
        pts = (r[:-1, None] + h[:, None] * xg[None, :]).ravel()
        wts = (h[:, None] * wg[None, :]).ravel()
        ne = h.size
        G = self.GAUSS_ORDER
        rows = np.concatenate([[0], np.repeat(np.arange(1, ne * G + 1), 2)])
        elem = np.repeat(np.arange(ne), G)
        cols = np.concatenate([[0], np.column_stack([elem, elem + 1]).ravel()])
        lam_ = np.tile(xg, ne)
        vals = np.concatenate([[1.0], np.column_stack([1.0 - lam_, lam_]).ravel()])
        P = sp.csr_matrix((vals, (rows, cols)), shape=(ne * G + 1, m))
        radii = np.concatenate([[0.0], pts])

        def weight(pw):
            k = n - pw
            if k <= 0:
                raise ValueError(f"weight r^-{pw} is not integrable at the origin in R^{n}")
            return om * np.concatenate([[r[0] ** k / k], wts * pts ** (k - 1.0)])

        w_alpha, w0, w_s = weight(2.0), weight(0.0), weight(inst.s)
        w_h = w0 * inst.h(radii)
        Mh = (P.T @ sp.diags(w_alpha) @ P).tocsc()
        M0 = (P.T @ sp.diags(w0) @ P).tocsc()

        if g.tail_exponent is not None:
            b = g.tail_exponent
            denom = 2.0 * b - n + 2.0
            if denom <= 0:
                raise ValueError("tail exponent must exceed (n-2)/2")
            last = sp.csc_matrix(([1.0], ([m - 1], [m - 1])), shape=(m, m))
            K = K + om * b * b * g.R ** (n - 2) / denom * last
            Mh = Mh + om * g.R ** (n - 2) / denom * last
            denom_s = self.p * b - n + inst.s
            if denom_s <= 0:
                raise ValueError("tail exponent too small for a finite Hardy-Sobolev integral")
            # extra point carrying u(R) for the exterior part of the HS integral
            P = sp.vstack([P, sp.csr_matrix(([1.0], ([0], [m - 1])), shape=(1, m))]).tocsr()
            w_s = np.concatenate([w_s, [om * g.R ** (n - inst.s) / denom_s]])
            w_h = np.concatenate([w_h, [0.0]])

        free = g.free
        self.P = P[:, free].tocsr()
        self.w_s, self.w_h = w_s, w_h
        self.stiff = K[free][:, free].tocsc()
        self.hardy_matrix = Mh[free][:, free].tocsc()
        self.mass_matrix = M0[free][:, free].tocsc()

    # -- quadratic part -----------------------------------------------------

    @cached_property
    def triple_matrix(self):
        """Matrix of ``|||u|||^2 = seminorm - gamma * hardy``."""
        if sp.issparse(self.stiff):
            return (self.stiff - self.inst.gamma * self.hardy_matrix).tocsc()
        return self.stiff - self.inst.gamma * self.hardy_matrix.toarray()

    def operator(self, lam: Optional[float] = None):
        """Matrix of ``|||u|||^2 - lam * int u^2``."""
        lam = self.inst.lam if lam is None else lam
        if lam == self.inst.lam and "_op" in self.__dict__:
            return self.__dict__["_op"]
        if sp.issparse(self.stiff):
            A = (self.triple_matrix - lam * self.mass_matrix).tocsc()
        else:
            A = self.triple_matrix - lam * self.mass_matrix.toarray()
        if lam == self.inst.lam:
            self.__dict__["_op"] = A
        return A

    def factorize(self, lam: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
        """Solver for ``(|||.|||^2 - lam L2) x = b``; raises if not positive definite."""
        A = self.operator(lam)
        if sp.issparse(A):
            lu = splu(A, permc_spec="NATURAL", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
            if np.any(lu.U.diagonal() <= 0):
                raise ValueError("discrete operator is not positive definite (lambda >= lambda_1?)")
            return lu.solve
        try:
            cf = cho_factor(A)
        except np.linalg.LinAlgError as exc:
            raise ValueError("discrete operator is not positive definite (lambda >= lambda_1?)") from exc
        return lambda b: cho_solve(cf, b)

    def seminorm_free(self, u):
        return float(u @ (self.stiff @ u))

    # -- nonlinear parts ----------------------------------------------------

    def hs_free(self, u):
        up = np.maximum(self.P @ u, 0.0)
        return float(np.sum(self.w_s * up**self.p))

    def hs_grad_free(self, u):
        up = np.maximum(self.P @ u, 0.0)
        return self.Pt @ (self.p * self.w_s * up ** (self.p - 1.0))

    def pert_free(self, u):
        up = np.maximum(self.P @ u, 0.0)
        return float(np.sum(self.w_h * up**self.q))

    def pert_grad_free(self, u):
        up = np.maximum(self.P @ u, 0.0)
        return self.Pt @ (self.q * self.w_h * up ** (self.q - 1.0))

    def forms_free(self, u) -> FormValues:
        semi = self.seminorm_free(u)
        hardy = float(u @ (self.hardy_matrix @ u))
        return FormValues(
            seminorm_sq=semi,
            hardy=hardy,
            l2=float(u @ (self.mass_matrix @ u)),
            hs_integral=self.hs_free(u),
            pert_integral=self.pert_free(u),
            triple_norm_sq=semi - self.inst.gamma * hardy,
        )

    def l2_free(self, u):
        return float(u @ (self.mass_matrix @ u))

    def triple_free(self, u):
        return float(u @ (self.triple_matrix @ u))

    def triple_grad_free(self, u):
        return 2.0 * (self.triple_matrix @ u)

    # -- energy functional ----------------------------------------------------

    def phi_free(self, u) -> float:
        """``1/2 |||u|||^2 - lam/2 int u^2 - 1/p int u+^p |x|^-s - 1/q int h u+^q``."""
        quad = float(u @ (self.operator() @ u))
        return 0.5 * quad - self.hs_free(u) / self.p - self.pert_free(u) / self.q

    def phi_grad_free(self, u) -> np.ndarray:
        """Euclidean gradient of :meth:`phi_free`, i.e. ``<Phi'(u), e_i>``."""
        return self.operator() @ u - self.hs_grad_free(u) / self.p - self.pert_grad_free(u) / self.q

    def phi_hessian_free(self, u):
        """Hessian of :meth:`phi_free`."""
        up = np.maximum(self.P @ u, 0.0)
        d = (self.p - 1.0) * self.w_s * up ** (self.p - 2.0) + (self.q - 1.0) * self.w_h * up ** (self.q - 2.0)
        d = np.where(up > 0, d, 0.0)
        curv = (self.Pt @ sp.diags(d) @ self.P)
        A = self.operator()
        if sp.issparse(A):
            return (A - curv).tocsc()
        return A - curv.toarray()


def _discretization(grid: RadialGrid, inst: ProblemInstance) -> Discretization:
    cache = grid.__dict__.setdefault("_disc_cache", {})
    key = (inst.n, inst.alpha, inst.s, inst.gamma, inst.lam, inst.q, inst.h0, id(inst.h_profile))
    d = cache.get(key)
    if d is None:
        d = cache[key] = Discretization(grid, inst)
    return d


def forms(u: GridFunction, inst: ProblemInstance) -> FormValues:
    """All form values of ``u`` for the instance's parameters."""
    return _discretization(u.grid, inst).forms_free(u.free_values)


# ---------------------------------------------------------------------------
# Rayleigh quotients


@dataclass
class MuResult:
    mu: float
    minimizer: GridFunction
    iterations: int
    grad_ratio: float  # dual norm of grad Q at the result over that at the start

    def __iter__(self):
        yield self.mu
        yield self.minimizer


def _default_profile(grid: RadialGrid, inst: ProblemInstance) -> np.ndarray:
    r = np.abs(grid.nodes)
    return (1.0 + r * r) ** (-(inst.n - inst.alpha) / 2.0)


def rayleigh_min_mu(
    inst: ProblemInstance,
    grid: RadialGrid,
    init: Optional[np.ndarray] = None,
    tol: float = 1e-10,
    gtol: Optional[float] = 1e-7,
    max_iter: int = 100_000,
    window: int = 20,
) -> MuResult:
    """Minimize ``|||u|||^2 / (int u+^p |x|^-s)^{2/p}`` over nonnegative grid functions.

    Projected descent along the gradient taken in the ``|||.|||`` inner
    product; the unit step is the normalized inverse iteration
    ``u <- A^-1 (w_s u^{p-1})``, shortened by backtracking whenever it fails
    to decrease the quotient. Stops when the relative decrease is below
    ``tol`` and the gradient, measured in the dual norm ``sqrt(g^T A^-1 g)``,
    has shrunk by ``gtol`` relative to the starting profile. (Euclidean norms
    of the gradient are dominated by roundoff on strongly graded grids.)
    The decrease is averaged over the last ``window`` iterations so roundoff
    noise in single steps does not block the test. ``gtol=None`` stops on
    the energy plateau alone, which suits dilation-invariant problems whose
    minimizers drift along an almost flat direction.
    """
    if not 0.0 <= inst.gamma < gamma_H(inst.n, inst.alpha):
        raise ValueError("rayleigh_min_mu needs 0 <= gamma < gamma_H")
    d = _discretization(grid, inst)
    solve = d.factorize(0.0)
    p = d.p
    u = np.asarray(_default_profile(grid, inst) if init is None else init, dtype=float)
    if u.size == grid.nodes.size:
        u = u[grid.free]
    u = np.maximum(u, 0.0)

    def quotient(v):
        J = d.hs_free(v)
        return d.triple_free(v) / J ** (2.0 / p), J

    def gradient(v, Q, J):
        # grad Q = J^{-2/p} (2 A v - (2 T / J) w_s v+^{p-1})
        T = Q * J ** (2.0 / p)
        return (d.triple_grad_free(v) - (2.0 * T / J) * d.hs_grad_free(v) / p) / J ** (2.0 / p)

    Q, J = quotient(u)
    u /= J ** (1.0 / p)
    Q, J = quotient(u)

    def dual_norm(v):
        return math.sqrt(max(float(v @ solve(v)), 0.0))

    g0 = dual_norm(gradient(u, Q, J))
    ratio = 1.0
    stalled = 0
    history = [Q]
    for it in range(1, max_iter + 1):
        T = Q * J ** (2.0 / p)
        target = (T / J) * solve(d.hs_grad_free(u) / p)
        direction = target - u
        step = 1.0
        while True:
            trial = np.maximum(u + step * direction, 0.0)
            Jt = d.hs_free(trial)
            if Jt > 0:
                Qt = d.triple_free(trial) / Jt ** (2.0 / p)
                if Qt <= Q:
                    break
            step *= 0.5
            if step < 1e-12:
                trial, Qt, Jt = u, Q, J
                break
        stalled = stalled + 1 if trial is u else 0
        u = trial / Jt ** (1.0 / p)
        Q, J = quotient(u)
        history.append(Q)
        back = min(window, len(history) - 1)
        decrease = (history[-1 - back] - Q) / (back * abs(Q))
        gnorm = dual_norm(gradient(u, Q, J))
        ratio = gnorm / g0 if g0 > 0 else 0.0
        # with J = 1, gnorm / sqrt(Q) is the scale-free size of the gradient;
        # it covers starts that are already minimizers up to roundoff
        small_grad = gtol is None or min(ratio, gnorm / math.sqrt(Q)) <= gtol
        if decrease < tol and small_grad and (gtol is not None or back == window):
            return MuResult(Q, GridFunction.from_free(grid, u), it, ratio)
        if stalled >= 10:
            break
    raise NonConvergenceError(
        f"rayleigh_min_mu stopped after {it} iterations without meeting the tolerance "
        f"(gradient ratio {ratio:.3e})"
    )


def first_eigenvalue(
    inst: ProblemInstance, grid: RadialGrid, tol: float = 1e-13, max_iter: int = 20_000
) -> float:
    """Smallest Dirichlet eigenvalue of ``|||u|||^2 / int u^2`` by inverse power iteration."""
    if grid.tail_exponent is not None:
        raise ValueError("first_eigenvalue needs a Dirichlet grid")
    if not inst.gamma < gamma_H(inst.n, inst.alpha):
        raise ValueError("first_eigenvalue needs gamma < gamma_H")
    d = _discretization(grid, inst)
    solve = d.factorize(0.0)
    A = d.triple_matrix
    M = d.mass_matrix
    v = np.ones(M.shape[0])
    lam_old = np.inf
    for _ in range(max_iter):
        v = solve(M @ v)
        v /= np.sqrt(v @ (M @ v))
        lam = float(v @ (A @ v))
        if abs(lam - lam_old) <= tol * abs(lam):
            return lam
        lam_old = lam
    raise NonConvergenceError("inverse power iteration did not converge")


# ---------------------------------------------------------------------------
# singular solution and interior mass (alpha = 2)


@dataclass
class SingularSolution:
    """``H ~ r^-beta_+`` solving the radial linear equation with ``H(R) = 0``.

    ``mass`` is the least-squares coefficient of ``r^-beta_-`` in
    ``H - r^-beta_+`` on the innermost nodes; ``shooting_mass`` is the exact
    superposition coefficient it estimates.
    """

    grid: RadialGrid
    H: np.ndarray
    beta_minus: float
    beta_plus: float
    mass: float
    shooting_mass: float
    fit_residual: float


def _frobenius(n, gamma, lam, nu0, r, terms=400):
    """Series ``r^nu0 sum a_k r^{2k}`` and its derivative, ``a_0 = 1``."""
    r = np.asarray(r, dtype=float)
    total = np.zeros_like(r)
    dtotal = np.zeros_like(r)
    a = 1.0
    r2 = r * r
    power = np.ones_like(r)
    for k in range(terms):
        nu = nu0 + 2 * k
        if k > 0:
            P = nu * nu + (n - 2.0) * nu + gamma
            a = -lam * a / P
            power = power * r2
        term = a * power
        total += term
        dtotal += nu * term
        if k > 2 and np.all(np.abs(term) <= 1e-18 * np.abs(total)):
            break
    return r**nu0 * total, r ** (nu0 - 1.0) * dtotal


def singular_solution(
    inst: ProblemInstance,
    grid: RadialGrid,
    fit_fraction: float = 0.1,
    match_fraction: float = 0.1,
) -> SingularSolution:
    """Shoot the two Frobenius branches outward and combine them so ``H(R) = 0``.

    Both ``r^-beta_+ (1 + ...)`` and ``r^-beta_- (1 + ...)`` start from their
    series at ``r_s = match_fraction * R`` and are integrated to ``R``;
    ``H = Y_+ + c Y_-`` with ``c = -Y_+(R)/Y_-(R)``. The mass is then read off
    by least squares on the innermost ``fit_fraction`` of the nodes, fitting
    ``(H - r^-beta_+) r^beta_-`` to ``m + b r^{2 - (beta_+ - beta_-)}``.
    """
    if inst.alpha != 2.0 or grid.mode is not GridMode.RADIAL or grid.tail_exponent is not None:
        raise ValueError("singular_solution needs alpha = 2 on a Dirichlet radial grid")
    if not is_critical(inst.n, inst.alpha, inst.gamma):
        raise ValueError("the interior mass is only defined for critical operators")
    n, gam, lam, R = inst.n, inst.gamma, inst.lam, grid.R
    bm, bp = beta_pm(n, 2.0, gam)
    r = grid.nodes
    rs = match_fraction * R

    def rhs(t, y):
        return [y[1], -(n - 1.0) * y[1] / t - (gam / (t * t) + lam) * y[0]]

    branches = []
    for nu0 in (-bp, -bm):
        y0, dy0 = _frobenius(n, gam, lam, nu0, np.array([rs]))
        sol = solve_ivp(rhs, (rs, R), [y0[0], dy0[0]], method="DOP853", rtol=1e-13, atol=1e-300, dense_output=True)
        if not sol.success:
            raise NonConvergenceError(f"shooting failed: {sol.message}")
        vals = np.empty_like(r)
        inner = r <= rs
        vals[inner] = _frobenius(n, gam, lam, nu0, r[inner])[0]
        vals[~inner] = sol.sol(r[~inner])[0]
        vals[-1] = sol.y[0, -1]
        branches.append(vals)
    y_plus, y_minus = branches
    if y_minus[-1] <= 0:
        raise ValueError("regular branch changes sign inside the ball: lambda >= lambda_1")
    c = -y_plus[-1] / y_minus[-1]
    H = y_plus + c * y_minus
    H[-1] = 0.0

    k = max(4, int(math.ceil(fit_fraction * r.size)))
    ri = r[:k]
    target = (H[:k] - ri ** (-bp)) * ri**bm
    design = np.column_stack([np.ones(k), ri ** (2.0 - (bp - bm))])
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    resid = np.linalg.norm(design @ coef - target) / max(np.linalg.norm(target), 1e-300)
    if resid > 0.05:
        raise ValueError(f"r^-beta_- fit failed: relative residual {resid:.3g} > 5%")
    return SingularSolution(grid, H, bm, bp, float(coef[0]), float(c), float(resid))


def mass_estimate(inst: ProblemInstance, grid: RadialGrid) -> float:
    """Interior mass ``m`` of the ball for ``-Delta - gamma/|x|^2 - lambda`` (alpha = 2)."""
    return singular_solution(inst, grid).mass
