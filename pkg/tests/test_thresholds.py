import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardylab.specfun import PsiParams, psi
from hardylab.thresholds import (
    Governing,
    ProblemInstance,
    Regime,
    UnsupportedError,
    Verdict,
    beta_pm,
    classify,
    gamma_crit,
    gamma_H,
    is_critical,
    q_crit,
    two_star,
)


def local_betas(n, g):
    mid = (n - 2) / 2
    return mid - math.sqrt(mid * mid - g), mid + math.sqrt(mid * mid - g)


@st.composite
def admissible(draw):
    """(n, alpha, gamma) with 0 <= gamma < gamma_H."""
    a = draw(st.floats(min_value=0.05, max_value=2.0))
    n = draw(st.sampled_from([1, 2, 3, 4, 5, 6, 8, 10]))
    if n <= a:
        n = 3
    frac = draw(st.floats(min_value=0.0, max_value=0.999))
    return n, a, frac * gamma_H(n, a)


class TestGammaH:
    @pytest.mark.parametrize("n, a, expected", [(3, 2, 0.25), (6, 2, 4.0), (3, 1, 2 / math.pi)])
    def test_examples(self, n, a, expected):
        assert gamma_H(n, a) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("n", range(3, 11))
    def test_local_formula(self, n):
        assert abs(gamma_H(n, 2) - (n - 2) ** 2 / 4) <= 1e-10

    def test_domain(self):
        with pytest.raises(ValueError):
            gamma_H(2, 2)


class TestBetas:
    @pytest.mark.parametrize(
        "n, a, g, expected", [(3, 2, 0.21, (0.3, 0.7)), (3, 2, 0.0, (0.0, 1.0)), (5, 2, 2.0, (1.0, 2.0))]
    )
    def test_examples(self, n, a, g, expected):
        bm, bp = beta_pm(n, a, g)
        assert bm == pytest.approx(expected[0], abs=1e-10)
        assert bp == pytest.approx(expected[1], abs=1e-10)

    def test_zero_gamma_exact(self):
        assert beta_pm(4.5, 1.3, 0.0) == (0.0, 3.2)

    def test_hardy_limit_is_midpoint(self):
        gh = gamma_H(5, 1.2)
        assert beta_pm(5, 1.2, gh) == (1.9, 1.9)

    @settings(max_examples=200, deadline=None)
    @given(admissible())
    def test_round_trip(self, nag):
        n, a, g = nag
        bm, bp = beta_pm(n, a, g)
        p = PsiParams(n, a)
        assert abs(psi(p, bm) - g) <= 1e-9
        assert abs(psi(p, bp) - g) <= 1e-9
        assert abs(bm + bp - (n - a)) <= 1e-10
        assert 0 <= bm <= (n - a) / 2 <= bp <= n - a

    @pytest.mark.parametrize("n", range(3, 9))
    def test_local_closed_form(self, n):
        for g in np.linspace(0, 0.999 * (n - 2) ** 2 / 4, 20):
            bm, bp = beta_pm(n, 2, g)
            em, ep = local_betas(n, g)
            assert abs(bm - em) <= 1e-9 and abs(bp - ep) <= 1e-9

    @pytest.mark.parametrize("n, a", [(3, 2), (1, 0.6), (4, 1.1), (7, 1.8)])
    def test_monotone_in_gamma(self, n, a):
        gs = np.linspace(0, 0.999 * gamma_H(n, a), 60)
        bms, bps = zip(*(beta_pm(n, a, g) for g in gs))
        assert np.all(np.diff(bms) >= 0)
        assert np.all(np.diff(bps) <= 0)

    def test_negative_gamma_local(self):
        bm, bp = beta_pm(5, 2, -1.0)
        em, ep = local_betas(5, -1.0)
        assert bm == pytest.approx(em) and bp == pytest.approx(ep)
        assert bm < 0

    def test_negative_gamma_fractional_unsupported(self):
        with pytest.raises(UnsupportedError):
            beta_pm(3, 1.5, -0.1)

    def test_above_hardy(self):
        with pytest.raises(ValueError):
            beta_pm(3, 2, 0.26)


class TestCriticality:
    @pytest.mark.parametrize("n", range(3, 11))
    def test_local_gamma_crit(self, n):
        assert abs(gamma_crit(n, 2) - ((n - 2) ** 2 / 4 - 1)) <= 1e-10

    def test_examples(self):
        assert gamma_crit(5, 2) == pytest.approx(1.25, abs=1e-12)
        assert gamma_crit(4, 2) == 0.0
        assert gamma_crit(3, 2) == -0.75
        assert gamma_crit(1, 0.7) is None
        assert gamma_crit(3, 1.6) is None

    def test_always_critical_low_dimension(self):
        assert is_critical(3, 2, 0.0)
        assert is_critical(1, 0.6, 0.1)

    def test_n3_critical_below_closed_form_value(self):
        # the closed form gives -3/4 at n = 3, yet every gamma is critical there
        assert is_critical(3, 2, -1.0)
        assert is_critical(3, 2, -0.75)
        assert not is_critical(4, 2, 0.0)

    def test_boundary_is_non_critical(self):
        assert not is_critical(5, 2, 1.25)
        assert is_critical(5, 2, 1.25 + 1e-6)
        assert not is_critical(5, 2, 1.0)

    def test_n_equals_two_alpha(self):
        assert not is_critical(4, 2, 0.0)
        assert is_critical(4, 2, 0.1)


class TestQCrit:
    def test_examples(self):
        assert abs(q_crit(3, 2, 0) - 4) <= 1e-10
        assert q_crit(5, 2, 2.0) == pytest.approx(8 / 3, abs=1e-10)

    def test_limit_at_hardy_constant(self):
        assert q_crit(3, 2, 0.25 * (1 - 1e-14)) == pytest.approx(two_star(3, 2), abs=1e-6)

    def test_non_critical_raises(self):
        with pytest.raises(ValueError, match="non-critical"):
            q_crit(5, 2, 1.0)

    @settings(max_examples=200, deadline=None)
    @given(admissible())
    def test_range_and_consistency(self, nag):
        n, a, g = nag
        if not is_critical(n, a, g):
            return
        qc = q_crit(n, a, g)
        bm, bp = beta_pm(n, a, g)
        assert 2 < qc <= two_star(n, a)
        assert abs(n - qc * (n - a) / 2 - (bp - bm)) <= 1e-10


class TestClassify:
    def test_non_critical_example(self):
        r = classify(ProblemInstance(5, 2, gamma=1.0, lam=0, q=3, h0=1))
        assert r.regime is Regime.NON_CRITICAL
        assert r.governing is Governing.H0_POSITIVE
        assert r.verdict is Verdict.GUARANTEED

    def test_critical_above_q_crit(self):
        r = classify(ProblemInstance(3, 2, gamma=0, lam=0.5, q=5, h0=1))
        assert r.regime is Regime.CRITICAL
        assert r.q_crit == pytest.approx(4)
        assert r.governing is Governing.H0_POSITIVE
        assert r.verdict is Verdict.GUARANTEED

    def test_critical_below_q_crit_needs_mass(self):
        r = classify(ProblemInstance(3, 2, gamma=0, lam=0.5, q=3, h0=1))
        assert r.governing is Governing.MASS_POSITIVE
        assert r.verdict is Verdict.MASS_UNKNOWN
        assert classify(ProblemInstance(3, 2, q=3, mass=0.2)).verdict is Verdict.GUARANTEED
        assert classify(ProblemInstance(3, 2, q=3, mass=-0.2)).verdict is Verdict.NOT_MET

    def test_combined_at_q_crit(self):
        qc = q_crit(3, 2, 0.21)
        base = ProblemInstance(3, 2, gamma=0.21, q=qc * (1 + 1e-12), h0=1.0)
        r = classify(base)
        assert r.governing is Governing.COMBINED_POSITIVE
        assert r.verdict is Verdict.MASS_UNKNOWN
        assert r.exponent_perturbation == pytest.approx(r.exponent_mass, abs=1e-9)
        assert classify(base.replace(mass=0.5)).verdict is Verdict.GUARANTEED
        assert classify(base.replace(h0=0.0, mass=-0.5)).verdict is Verdict.NOT_MET
        assert classify(base.replace(mass=-0.5)).verdict is Verdict.UNDETERMINED
        r = classify(base.replace(mass=-0.5), coefficients=(2.0, 1.0))
        assert r.verdict is Verdict.GUARANTEED and r.coefficients == (2.0, 1.0)

    def test_h0_zero_not_met(self):
        assert classify(ProblemInstance(5, 2, gamma=1.0, h0=0.0)).verdict is Verdict.NOT_MET

    def test_lambda_bound(self):
        with pytest.raises(ValueError, match="lambda_1"):
            classify(ProblemInstance(3, 2, lam=10.0), lambda1=9.87)

    @settings(max_examples=100, deadline=None)
    @given(admissible(), st.floats(min_value=0.01, max_value=0.99), st.floats(min_value=1e-3, max_value=1e3))
    def test_invariants(self, nag, qfrac, scale):
        n, a, g = nag
        top = two_star(n, a)
        q = 2 + qfrac * (top - 2)
        inst = ProblemInstance(n, a, gamma=g, q=q, h0=1.0)
        r = classify(inst)
        assert 0 < r.exponent_perturbation < a
        assert r.beta_minus + r.beta_plus == pytest.approx(n - a, abs=1e-10)
        if r.regime is Regime.CRITICAL:
            assert 2 < r.q_crit <= top
        # only the sign of h0 matters
        r2 = classify(inst.replace(h0=scale))
        assert (r2.regime, r2.q_crit, r2.governing) == (r.regime, r.q_crit, r.governing)

    def test_to_dict(self):
        d = classify(ProblemInstance(3, 2, q=5)).to_dict()
        assert d["regime"] == "Critical" and d["governing"] == "H0Positive"
        assert d["gamma_crit"] == -0.75
        assert classify(ProblemInstance(3, 1.6, q=3)).to_dict()["gamma_crit"] is None


class TestProblemInstance:
    @pytest.mark.parametrize(
        "kwargs, match",
        [
            (dict(n=3, alpha=2, s=2), "0 <= s < alpha"),
            (dict(n=3, alpha=2, s=-0.1), "0 <= s < alpha"),
            (dict(n=3, alpha=2, q=2), "2 < q"),
            (dict(n=3, alpha=2, q=6), "2 < q"),
            (dict(n=3, alpha=2, gamma=0.25), "gamma_H"),
            (dict(n=3, alpha=2, h0=-1), "h0"),
            (dict(n=2, alpha=2), "n > alpha"),
            (dict(n=3, alpha=2.5), "alpha"),
            (dict(n=3, alpha=2, R=0), "R"),
        ],
    )
    def test_validation(self, kwargs, match):
        with pytest.raises(ValueError, match=match):
            ProblemInstance(**kwargs)

    def test_h_profile(self):
        inst = ProblemInstance(3, 2, h0=2.0)
        np.testing.assert_array_equal(inst.h([0.1, 0.5]), [2.0, 2.0])
        inst = ProblemInstance(3, 2, h0=1.0, h_profile=lambda r: 1 - r)
        np.testing.assert_allclose(inst.h(np.array([0.0, 0.5])), [1.0, 0.5])

    def test_two_star(self):
        assert ProblemInstance(3, 2, s=1).two_star_s == pytest.approx(4.0)
        assert two_star(5, 2) == pytest.approx(10 / 3)
