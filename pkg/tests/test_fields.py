"""Tests for exponential fields, contractions, residues and modes.

The contraction kernel is checked against the exponential of the
bracket generating series (an independent oracle), the two-point
product of the generating field against its four known kernels, and
the mode action against vacuum matrix elements assembled from the
kernels — so the Wick route and the oscillator route confirm each
other.
"""

import pytest
from conftest import bracket_log_coeffs, exp_x_series

from dca.errors import (
    HigherOrderPole,
    NonScalarExchange,
    UnsupportedDerivative,
)
from dca.fields import (
    ExpFactor,
    Field,
    FieldTerm,
    contraction,
    exchange_function,
    field_T,
    field_identity,
    fs_sum_is_zero,
    lam_minus,
    lam_plus,
    matrix_element_series,
    mode_apply,
    no_product,
    ope_residue,
    pole_gammas,
    wick_expand,
)
from dca.fock import FockVector, pair
from dca.qseries import S_TT_pf, f_pf, g_ratio
from dca.ring import FactoredScalar, Monomial, Q, Scalar, mono


CUT = 14


@pytest.fixture(scope="module")
def T():
    return field_T()


@pytest.fixture(scope="module")
def peTT(T):
    return wick_expand([T, T], CUT)


class TestNOProduct:
    def test_cancellation(self):
        no = no_product([ExpFactor(1, mono(1, 2, 0)),
                         ExpFactor(-1, mono(1, 2, 0)),
                         ExpFactor(1, mono(1, 0, 1))])
        assert no == (ExpFactor(1, mono(1, 0, 1)),)

    def test_full_cancellation_is_identity(self):
        no = no_product([ExpFactor(1, mono(1, 0, 0)),
                         ExpFactor(-1, mono(1, 0, 0))])
        assert no == ()

    def test_sorted_deterministically(self):
        a = no_product([lam_plus(), lam_minus()])
        b = no_product([lam_minus(), lam_plus()])
        assert a == b


class TestField:
    def test_T_structure(self, T):
        assert len(T.terms) == 2
        assert {t.no[0].eps for t in T.terms} == {1, -1}

    def test_merge_same_product(self):
        one = FactoredScalar.one()
        no = no_product([lam_plus()])
        f = Field([FieldTerm(one, no), FieldTerm(one, no)])
        assert len(f.terms) == 1
        assert f.terms[0].coeff.eq(FactoredScalar.from_monomial(2))

    def test_exact_zero_across_terms(self):
        # (1-q)(1+q) - (1-q^2) = 0 requires the cross-multiplied test
        a = FactoredScalar(1, 0, 0, [(mono(1, 0, 1), 1), (mono(-1, 0, 1), 1)])
        b = FactoredScalar(-1, 0, 0, [(mono(1, 0, 2), 1)])
        no = no_product([lam_plus()])
        f = Field([FieldTerm(a, no), FieldTerm(b, no)])
        assert f.is_zero()
        assert fs_sum_is_zero([a, b])

    def test_proportionality(self, T):
        half = FactoredScalar.from_monomial(Q(1, 2), 2, -1)
        r = T.scale(half).proportional_to(T)
        assert r is not None and r.eq(half)
        assert T.proportional_to(field_identity()) is None


class TestContraction:
    @pytest.mark.parametrize("ea,eb,arga,argb", [
        (1, 1, (1, 0, 0), (1, 0, 0)),
        (1, -1, (1, 0, 0), (1, -2, 0)),
        (-1, 1, (1, -2, 0), (1, 0, 1)),
        (-1, -1, (1, -2, 1), (1, -2, 0)),
    ])
    def test_against_exponential_oracle(self, ea, eb, arga, argb):
        # C = exp(eps_a eps_b sum kappa_m (x tau)^m), tau = arg_b/arg_a
        prec, top = 11, 5
        a = ExpFactor(ea, mono(*arga))
        b = ExpFactor(eb, mono(*argb))
        got = contraction(a, b, CUT).expand(top, prec)
        tau = Monomial(b.arg.c / a.arg.c, b.arg.a2 - a.arg.a2,
                       b.arg.b - a.arg.b)
        base = bracket_log_coeffs(top, prec)
        logs = {}
        for m, v in base.items():
            g = Monomial(tau.c ** m, tau.a2 * m, tau.b * m)
            logs[m] = v.mul_mono(-ea * eb * g.c, g.a2, g.b)
        want = exp_x_series(logs, top, prec)
        for l in range(top + 1):
            assert got.get(l, Scalar.zero(prec)) == want[l], f"x^{l}"

    def test_derivative_unsupported(self):
        d = ExpFactor(1, mono(1, 0, 0), deriv=1)
        with pytest.raises(UnsupportedDerivative):
            contraction(d, lam_plus(), CUT)


class TestProductExpansion:
    def test_TT_kernels(self, peTT):
        fe = f_pf(CUT)
        # term order is (-,-), (-,+), (+,-), (+,+) after canonical sort
        c_mm, c_mp, c_pm, c_pp = [t.cfun[(0, 1)] for t in peTT.terms]
        assert c_pp.equal(fe.inv())
        assert c_mm.equal(fe.inv())
        assert c_pm.equal(fe.shift_x(mono(1, -2, 0)))
        assert c_mp.equal(fe.shift_x(mono(1, 2, 0)))

    def test_pole_families(self, peTT):
        gam = pole_gammas(peTT)
        want = {(-2, 0), (2, 0), (0, 1), (2, -1)}
        got = {(m.a2, m.b) for m in gam}
        assert want <= got
        # ascending families: q p^{2n} and q^-1 p^{2n+1}
        assert (4, 1) in got and (6, -1) in got
        # nothing outside the four families
        for a2, b in got:
            assert (a2, b) in want or \
                (b == 1 and a2 % 4 == 0 and a2 > 0) or \
                (b == -1 and a2 % 4 == 2 and a2 > 2)


class TestResidue:
    def test_degree2_field_structure(self, peTT):
        R = ope_residue(peTT, mono(1, 0, 1))
        assert not R.warnings
        assert len(R.terms) == 3
        sigs = {tuple((f.eps, f.arg.a2, f.arg.b) for f in t.no): t.coeff
                for t in R.terms}
        plus = sigs[((1, 0, 0), (1, 0, 1))]
        minus = sigs[((-1, -2, 0), (-1, -2, 1))]
        mixed = sigs[((-1, -2, 0), (1, 0, 1))]
        assert plus.eq(minus)
        # mixed/plus = (1-p)(1+q)/(1-pq) exactly (modulo the boundary)
        want = FactoredScalar(1, 0, 0, [
            (mono(1, 2, 0), 1), (mono(-1, 0, 1), 1), (mono(1, 2, 1), -1)])
        assert (mixed / plus).congruent(want, CUT - 2)
        assert g_ratio(mono(1, 0, 1)).eq(want)

    def test_no_pole_gives_flagged_zero(self, peTT):
        R = ope_residue(peTT, mono(1, 0, 2))    # q^2 is not a pole line
        assert R.warnings == ("no-pole",)
        assert R.is_zero()

    def test_higher_order_pole_raises(self):
        sq = Field([FieldTerm(FactoredScalar.one(),
                              no_product([lam_plus(), lam_plus()]))])
        pe = wick_expand([sq, sq], CUT)
        with pytest.raises(HigherOrderPole):
            ope_residue(pe, mono(1, 0, 1))


class TestModes:
    def test_zero_mode_on_vacuum(self, T):
        prec = 9
        v = mode_apply(T, 0, FockVector.vacuum(prec), prec)
        got = pair((), v, prec)
        want = Scalar.monomial(1, -1, 0, prec) + Scalar.monomial(1, 1, 0, prec)
        assert got == want

    def test_positive_mode_annihilates_vacuum(self, T):
        prec = 9
        v = mode_apply(T, 3, FockVector.vacuum(prec), prec)
        assert v.is_zero()

    def test_grading(self, T):
        prec = 9
        v = mode_apply(T, -2, FockVector.vacuum(prec), prec)
        assert v.degrees() == {2}
        w = mode_apply(T, 2, v, prec)
        assert not w.is_zero() and w.degrees() == {0}

    def test_derivative_unsupported(self):
        d = Field([FieldTerm(FactoredScalar.one(),
                             (ExpFactor(1, mono(1, 0, 0), deriv=2),))])
        with pytest.raises(UnsupportedDerivative):
            mode_apply(d, 0, FockVector.vacuum(5), 5)


class TestMatrixElements:
    def test_vacuum_two_point_function_matches_kernels(self, T, peTT):
        # <T(z)T(w)> = (p^-1 + p)/f(x)... assembled from the four kernels
        # with prefactors p^(-sum eps/2); compared against mode chains.
        prec, top = 11, 5
        t, chain = matrix_element_series(T, T, (), (), 0, top, prec)
        assert t == 0
        fe = f_pf(CUT)
        combo = {}
        pieces = [
            (fe.inv(), -2), (fe.inv(), 2),
            (fe.shift_x(mono(1, -2, 0)), 0), (fe.shift_x(mono(1, 2, 0)), 0),
        ]
        for pf, a2 in pieces:
            for l, c in pf.expand(top, prec).items():
                cc = c.mul_mono(1, a2, 0)
                combo[l] = combo.get(l, Scalar.zero(prec)) + cc
        for n in range(top + 1):
            assert chain[n] == combo[n], f"x^{n} mismatch"

    def test_off_vacuum_element(self, T):
        # <(1)| T(z)T(w) |(1)>: t = 0 and the n = 0 entry is nonzero
        prec = 9
        t, chain = matrix_element_series(T, T, (1,), (1,), 0, 2, prec)
        assert t == 0
        assert not chain[0].is_zero()


class TestExchange:
    def test_TT_exchange_is_S(self, T):
        S = exchange_function(T, T, CUT)
        assert S.equal(S_TT_pf(CUT))

    def test_non_scalar_exchange_raises(self, T):
        mixture = field_identity() + T
        with pytest.raises(NonScalarExchange):
            exchange_function(mixture, T, CUT)
