import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.special import gamma as G
from scipy.special import jv

from hardylab.quadform import (
    GridFunction,
    GridMode,
    NonConvergenceError,
    _discretization,
    build_grid,
    first_eigenvalue,
    forms,
    fractional_constant,
    gagliardo_seminorm_sq,
    mass_estimate,
    rayleigh_min_mu,
    singular_solution,
    sphere_area,
)
from hardylab.thresholds import ProblemInstance, gamma_H

RADIAL, INTERVAL = GridMode.RADIAL, GridMode.INTERVAL


def fourier_seminorm(x, u, a):
    """Gagliardo form of the piecewise-linear interpolant of ``(x, u)``, zero outside.

    Independent of any quadrature: with slope jumps d_k at the nodes, the
    Fourier representation sum_kl d_k d_l F(|x_k - x_l|) is exact, where F is
    the kernel of |xi|^{alpha-4} in 1-D.
    """
    s = np.diff(u) / np.diff(x)
    d = np.diff(np.concatenate([[0.0], s, [0.0]]))
    D = np.abs(x[:, None] - x[None, :])
    if abs(a - 1) < 1e-12:
        with np.errstate(all="ignore"):
            L = np.where(D > 0, D**2 * np.log(D), 0.0)
        return d @ L @ d / (2 * math.pi)
    return G(a - 3) * math.cos(math.pi * (a - 3) / 2) * (d @ (D ** (3 - a)) @ d) / math.pi


def bessel_mass(n, gamma, lam, R=1.0):
    """Mass of the ball from the Bessel form of the singular solution.

    H = r^{-(n-2)/2} (c1 J_{-nu}(k r) + c2 J_nu(k r)), nu = sqrt((n-2)^2/4 - gamma),
    normalized so the r^{-beta_+} coefficient is 1 and H(R) = 0.
    """
    nu = math.sqrt((n - 2) ** 2 / 4 - gamma)
    k = math.sqrt(lam)
    return -G(1 - nu) / G(1 + nu) * (k / 2) ** (2 * nu) * jv(-nu, k * R) / jv(nu, k * R)


class TestGrid:
    def test_uniform_volume(self):
        g = build_grid(RADIAL, 1.0, 100, 1, n=3)
        assert g.weights.sum() == pytest.approx(4 * math.pi / 3, rel=1e-3)
        assert np.allclose(np.diff(g.nodes), 0.01)

    def test_graded(self):
        g = build_grid(RADIAL, 1.0, 400, 2, n=5)
        assert g.nodes[0] == pytest.approx(1 / 400**2)
        assert g.nodes[-1] == 1.0
        assert np.all(np.diff(g.nodes) > 0) and g.nodes[0] > 0
        assert np.all(g.weights > 0)
        assert g.weights.sum() == pytest.approx(g.volume(), rel=1e-12)
        assert g.volume() == pytest.approx(8 * math.pi**2 / 15)

    def test_interval(self):
        g = build_grid(INTERVAL, 1.0, 200, 1)
        np.testing.assert_allclose(g.nodes, -g.nodes[::-1])
        assert g.nodes[0] == -1 and g.nodes[-1] == 1
        assert g.weights.sum() == pytest.approx(2.0, rel=1e-12)
        assert not g.free[0] and not g.free[-1] and g.free[1:-1].all()

    @pytest.mark.parametrize(
        "args",
        [(RADIAL, 0.0, 100, 2), (RADIAL, 1.0, 15, 2), (RADIAL, 1.0, 100, 0.5), (INTERVAL, 1.0, 101, 1)],
    )
    def test_validation(self, args):
        with pytest.raises(ValueError):
            build_grid(*args)

    def test_radial_needs_n_above_two(self):
        with pytest.raises(ValueError):
            build_grid(RADIAL, 1.0, 100, 2, n=2)

    def test_sphere_area(self):
        assert sphere_area(3) == pytest.approx(4 * math.pi)
        assert sphere_area(2) == pytest.approx(2 * math.pi)

    def test_fractional_constant_local_limit(self):
        # C_{1,alpha} (1 - alpha/2) -> 1/pi ... check the standard value at alpha = 1
        assert fractional_constant(1, 1.0) == pytest.approx(1 / math.pi)


class TestGridFunction:
    def test_boundary_is_zero(self):
        g = build_grid(RADIAL, 1.0, 32, 1, n=3)
        u = GridFunction(g, np.ones(32))
        assert u.values[-1] == 0.0 and u.values[0] == 1.0
        with pytest.raises(ValueError):
            u.values[0] = 2.0

    def test_non_finite(self):
        g = build_grid(RADIAL, 1.0, 32, 1, n=3)
        with pytest.raises(ValueError):
            GridFunction(g, np.full(32, np.nan))
        with pytest.raises(ValueError):
            GridFunction(g, np.ones(31))


class TestForms:
    def test_zero(self):
        inst = ProblemInstance(3, 2, gamma=0.1)
        g = build_grid(RADIAL, 1.0, 64, 2, n=3)
        f = forms(GridFunction(g, np.zeros(64)), inst)
        assert all(v == 0 for v in f.__dict__.values())

    def test_linear_profile_closed_forms(self):
        inst = ProblemInstance(3, 2)
        g = build_grid(RADIAL, 1.0, 400, 2, n=3)
        f = forms(GridFunction.sample(g, lambda r: 1 - r), inst)
        assert f.seminorm_sq == pytest.approx(4 * math.pi / 3, rel=1e-10)
        assert f.l2 == pytest.approx(4 * math.pi / 30, rel=1e-6)
        # int (1-r)^2 / r^2 dx = 4 pi / 3 and int (1-r)^6 dx = 4 pi * 2/ (9*8*7)
        assert f.hardy == pytest.approx(4 * math.pi / 3, rel=1e-6)
        assert f.hs_integral == pytest.approx(4 * math.pi * 2 / 504, rel=1e-6)
        assert f.triple_norm_sq == pytest.approx(f.seminorm_sq)

    def test_triple_norm(self):
        inst = ProblemInstance(5, 2, gamma=1.5, q=3, h0=2.0)
        g = build_grid(RADIAL, 1.0, 200, 2, n=5)
        f = forms(GridFunction.sample(g, lambda r: np.cos(np.pi * r / 2)), inst)
        assert f.triple_norm_sq == pytest.approx(f.seminorm_sq - 1.5 * f.hardy, rel=1e-12)
        assert f.triple_norm_sq >= (1 - 1.5 / gamma_H(5, 2)) * f.seminorm_sq * 0.95
        assert f.pert_integral > 0

    def test_positive_part(self):
        inst = ProblemInstance(3, 2, q=3)
        g = build_grid(RADIAL, 1.0, 100, 2, n=3)
        f = forms(GridFunction.sample(g, lambda r: r - 1), inst)
        assert f.hs_integral == 0 and f.pert_integral == 0 and f.l2 > 0

    def test_mode_mismatch(self):
        g = build_grid(RADIAL, 1.0, 64, 2, n=3)
        with pytest.raises(ValueError):
            forms(GridFunction(g, np.ones(64)), ProblemInstance(1, 0.5, q=2.5))
        with pytest.raises(ValueError):
            forms(GridFunction(g, np.ones(64)), ProblemInstance(5, 2))

    @pytest.mark.parametrize("a", [0.3, 0.7, 1.0, 1.5, 1.9])
    @pytest.mark.parametrize("grading", [1.0, 2.0])
    def test_gagliardo_against_fourier_oracle(self, a, grading):
        rng = np.random.default_rng(7)
        g = build_grid(INTERVAL, 1.0, 64, grading)
        for _ in range(20):
            u = rng.normal(size=64)
            u[0] = u[-1] = 0
            assert gagliardo_seminorm_sq(g, u, a) == pytest.approx(fourier_seminorm(g.nodes, u, a), rel=1e-3)

    def test_tent_function(self):
        g = build_grid(INTERVAL, 1.0, 64, 1)
        u = np.maximum(1 - np.abs(g.nodes) / 0.5, 0)
        assert gagliardo_seminorm_sq(g, u, 1.0) == pytest.approx(fourier_seminorm(g.nodes, u, 1.0), rel=1e-3)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(min_value=1e-3, max_value=1e3))
    def test_quotient_homogeneity(self, c):
        inst = ProblemInstance(3, 2, gamma=0.1)
        g = build_grid(RADIAL, 1.0, 64, 2, n=3)
        u = GridFunction.sample(g, lambda r: (1 - r) * (1 + r))
        p = inst.two_star_s
        f1, f2 = forms(u, inst), forms(u * c, inst)
        q1 = f1.triple_norm_sq / f1.hs_integral ** (2 / p)
        q2 = f2.triple_norm_sq / f2.hs_integral ** (2 / p)
        assert q2 == pytest.approx(q1, rel=1e-12)
        assert f2.triple_norm_sq / f2.l2 == pytest.approx(f1.triple_norm_sq / f1.l2, rel=1e-12)

    @pytest.mark.parametrize(
        "inst, mode",
        [
            (ProblemInstance(3, 2, gamma=0.2, q=4, h0=1.5), RADIAL),
            (ProblemInstance(5, 2, gamma=1.0, s=1.0, q=3), RADIAL),
            (ProblemInstance(1, 0.8, gamma=0.01, q=3), INTERVAL),
        ],
    )
    def test_gradients_against_central_differences(self, inst, mode):
        g = build_grid(mode, 1.0, 64, 2, n=max(inst.n, 3))
        d = _discretization(g, inst)
        rng = np.random.default_rng(1)
        k = int(g.free.sum())
        for _ in range(10):
            u = np.abs(rng.normal(size=k)) + 0.1
            w = rng.normal(size=k)
            h = 1e-5
            for f, grad in ((d.triple_free, d.triple_grad_free), (d.hs_free, d.hs_grad_free), (d.pert_free, d.pert_grad_free)):
                fd = (f(u + h * w) - f(u - h * w)) / (2 * h)
                assert grad(u) @ w == pytest.approx(fd, rel=1e-6, abs=1e-9 * abs(f(u)))

    @pytest.mark.parametrize("n", [3, 5])
    def test_hardy_positivity(self, n):
        gh = gamma_H(n, 2)
        inst = ProblemInstance(n, 2, gamma=gh * (1 - 1e-3))
        g = build_grid(RADIAL, 1.0, 800, 3, n=n)
        A = _discretization(g, inst).triple_matrix.toarray()
        assert np.linalg.eigvalsh(A).min() > 0

    def test_hardy_positivity_interval(self):
        inst = ProblemInstance(1, 0.8, gamma=gamma_H(1, 0.8) * (1 - 1e-3), q=3)
        g = build_grid(INTERVAL, 1.0, 200, 2)
        A = _discretization(g, inst).triple_matrix
        assert np.linalg.eigvalsh(A).min() > 0


class TestMu:
    def test_converges_with_small_residual(self):
        inst = ProblemInstance(3, 2, gamma=0.1)
        g = build_grid(RADIAL, 1.0, 300, 2, n=3)
        res = rayleigh_min_mu(inst, g)
        assert res.grad_ratio <= 1e-6
        assert res.minimizer.values.min() >= 0
        mu, u = res
        f = forms(u, inst)
        assert mu == pytest.approx(f.triple_norm_sq / f.hs_integral ** (2 / inst.two_star_s), rel=1e-12)

    def test_decreasing_in_gamma(self):
        g = build_grid(RADIAL, 1.0, 200, 2, n=3)
        mus = [rayleigh_min_mu(ProblemInstance(3, 2, gamma=x), g).mu for x in (0.0, 0.1, 0.2)]
        assert mus[0] > mus[1] > mus[2]

    def test_upper_bound_by_truncated_extremal(self):
        # the minimum lies below the quotient of any admissible profile, and
        # above the whole-space Sobolev constant (the grid quotient is a Ritz value)
        inst = ProblemInstance(3, 2)
        g = build_grid(RADIAL, 1.0, 400, 2, n=3)
        mu = rayleigh_min_mu(inst, g).mu
        c = 50.0
        f = forms(GridFunction.sample(g, lambda r: (1 + c * r**2) ** -0.5 - (1 + c) ** -0.5), inst)
        plug_in = f.triple_norm_sq / f.hs_integral ** (1 / 3)
        sobolev = 3 * (math.pi / 2) ** (4 / 3)
        assert sobolev < mu < plug_in

    def test_decreasing_in_radius(self):
        inst = ProblemInstance(3, 2, gamma=0.1)
        mus = [rayleigh_min_mu(inst.replace(R=R), build_grid(RADIAL, R, 200, 2, n=3)).mu for R in (1.0, 4.0, 16.0)]
        # dilation invariance: same grid shape, so equal up to iteration tolerance
        assert mus[1] <= mus[0] * (1 + 1e-6) and mus[2] <= mus[1] * (1 + 1e-6)

    def test_singular_weight(self):
        g = build_grid(RADIAL, 1.0, 200, 2, n=3)
        r0 = rayleigh_min_mu(ProblemInstance(3, 2, s=0.0), g)
        r1 = rayleigh_min_mu(ProblemInstance(3, 2, s=1.0), g)
        assert r0.grad_ratio <= 1e-6 and r1.grad_ratio <= 1e-6
        assert not np.allclose(r0.minimizer.values / r0.minimizer.values[0], r1.minimizer.values / r1.minimizer.values[0])

    def test_interval(self):
        inst = ProblemInstance(1, 0.5, gamma=0.1, q=3)
        g = build_grid(INTERVAL, 1.0, 128, 2)
        res = rayleigh_min_mu(inst, g)
        assert res.grad_ratio <= 1e-6 and res.mu > 0

    def test_negative_gamma_rejected(self):
        g = build_grid(RADIAL, 1.0, 64, 2, n=5)
        with pytest.raises(ValueError):
            rayleigh_min_mu(ProblemInstance(5, 2, gamma=-1), g)

    def test_iteration_cap(self):
        g = build_grid(RADIAL, 1.0, 200, 2, n=3)
        with pytest.raises(NonConvergenceError):
            rayleigh_min_mu(ProblemInstance(3, 2), g, max_iter=3)


class TestFirstEigenvalue:
    def test_unit_ball(self):
        g = build_grid(RADIAL, 1.0, 400, 2, n=3)
        assert first_eigenvalue(ProblemInstance(3, 2), g) == pytest.approx(math.pi**2, rel=1e-2)

    def test_bessel_zero_with_hardy_term(self):
        # eigenfunctions r^{-1/2} J_nu(k r) with nu = sqrt(1/4 - gamma)
        nu = math.sqrt(0.25 - 0.21)
        j = brentq(lambda x: jv(nu, x), 2.0, 3.5)
        g = build_grid(RADIAL, 1.0, 800, 3, n=3)
        lam1 = first_eigenvalue(ProblemInstance(3, 2, gamma=0.21), g)
        # conforming elements: a Ritz value, so the error is one-sided
        assert j**2 < lam1 < j**2 * (1 + 5e-4)

    def test_monotone_and_scaling(self):
        g = build_grid(RADIAL, 1.0, 200, 2, n=4)
        l0 = first_eigenvalue(ProblemInstance(4, 2), g)
        l1 = first_eigenvalue(ProblemInstance(4, 2, gamma=0.5), g)
        assert l1 < l0
        g2 = build_grid(RADIAL, 3.0, 200, 2, n=4)
        assert first_eigenvalue(ProblemInstance(4, 2, R=3.0), g2) == pytest.approx(l0 / 9, rel=1e-10)

    def test_needs_dirichlet(self):
        g = build_grid(RADIAL, 1.0, 64, 2, n=3, tail_exponent=1.0)
        with pytest.raises(ValueError):
            first_eigenvalue(ProblemInstance(3, 2), g)


class TestMass:
    @pytest.mark.parametrize("n, gamma", [(3, 0.0), (3, 0.21), (5, 1.5), (5, 2.0), (4, 0.5)])
    def test_exact_two_power_case(self, n, gamma):
        g = build_grid(RADIAL, 1.0, 2000, 2, n=n)
        assert mass_estimate(ProblemInstance(n, 2, gamma=gamma, lam=0.0), g) == pytest.approx(-1.0, rel=2e-2)

    @pytest.mark.parametrize("lam", [0.5, 3.0, 6.0])
    def test_against_bessel(self, lam):
        g = build_grid(RADIAL, 1.0, 2000, 2, n=3)
        sol = singular_solution(ProblemInstance(3, 2, gamma=0.21, lam=lam), g)
        exact = bessel_mass(3, 0.21, lam)
        assert sol.shooting_mass == pytest.approx(exact, rel=1e-6)
        assert sol.mass == pytest.approx(exact, rel=1e-3)

    def test_continuation_and_blow_up(self):
        g = build_grid(RADIAL, 1.0, 2000, 2, n=3)
        inst = ProblemInstance(3, 2, gamma=0.21)
        nu = math.sqrt(0.25 - 0.21)
        lam1 = brentq(lambda x: jv(nu, x), 2.0, 3.5) ** 2
        ms = [mass_estimate(inst.replace(lam=x), g) for x in (0.0, 0.01, 0.02)]
        assert ms[0] < ms[1] < ms[2] and ms[2] - ms[0] < 0.05
        near = [mass_estimate(inst.replace(lam=lam1 * f), g) for f in (0.9, 0.99, 0.999)]
        assert near[0] < near[1] < near[2] and near[2] > 1e2
        assert mass_estimate(inst.replace(lam=lam1 * 0.9999), g) > 1e3

    def test_preconditions(self):
        g = build_grid(RADIAL, 1.0, 200, 2, n=5)
        with pytest.raises(ValueError):
            mass_estimate(ProblemInstance(5, 2, gamma=1.0), g)  # non-critical
        g1 = build_grid(INTERVAL, 1.0, 64, 1)
        with pytest.raises(ValueError):
            mass_estimate(ProblemInstance(1, 0.5, q=3), g1)
