"""Tests for the named structure series.

The kernel f is checked against an independent oracle: its logarithm is
the generating series of the oscillator bracket, so exponentiating
sum_m (1-q^m)(1-p^m q^-m)/(m(1+p^m)) x^m  term by term must reproduce
the product form.  The exchange function is checked two ways (theta
quotient versus f(1/x)/f(x)), and the splitting kernels against their
factorization identities.
"""

import pytest
from conftest import bracket_log_coeffs, exp_x_series

from dca.errors import UnknownSeries
from dca.qseries import (
    F1_pf,
    F2_pf,
    S_TT_pf,
    f_pf,
    g_ratio,
    pochhammer_pf,
    structure_series,
    theta_pf,
)
from dca.ring import ProductForm, Q, Scalar, mono


class TestKernelF:
    def test_matches_exponential_oracle(self):
        cutoff, top, prec = 14, 6, 13
        want = exp_x_series(bracket_log_coeffs(top, prec), top, prec)
        got = f_pf(cutoff).expand(top, prec)
        for l in range(top + 1):
            assert got[l].truncated(prec) == want[l], f"x^{l} mismatch"

    def test_first_coefficient_low_orders(self):
        # f_1 = (1-q) + p(q - 1/q) + O(p^2)
        got = f_pf(12).expand(1, 4)[1]
        want = (Scalar.one(4) - Scalar.monomial(1, 0, 1, 4)) + \
            Scalar.monomial(1, 2, 1, 4) - Scalar.monomial(1, 2, -1, 4)
        assert got == want

    def test_constant_term_is_one(self):
        got = f_pf(12).expand(0, 9)[0]
        assert got == Scalar.one(9)


class TestExchangeFunction:
    def test_theta_quotient_equals_f_ratio(self):
        # S(x) = f(x)^-1 f(1/x): same function from two constructions
        cutoff = 12
        B = f_pf(cutoff)
        assert S_TT_pf(cutoff).equal(B.inv() * B.invert_x())

    def test_inversion_antisymmetry(self):
        # S(x) S(1/x) = 1
        S = S_TT_pf(12)
        assert (S * S.invert_x()).equal(ProductForm.one(12))


class TestSplittingKernels:
    def test_F1_factorizes_mixed_exchange(self):
        # S(x) S(xq) = F1(x)^-1 F1(1/(xq))
        cutoff = 12
        S = S_TT_pf(cutoff)
        left = S * S.shift_x(mono(1, 0, 1))
        F1 = F1_pf(cutoff)
        right = F1.inv() * F1.shift_x(mono(1, 0, -1)).invert_x()
        assert left.equal(right)

    def test_F2_factorizes_degree2_exchange(self):
        # S_22(x) = S(x)^2 S(xq) S(x/q) = F2(x)^-1 F2(1/x)
        cutoff = 12
        S = S_TT_pf(cutoff)
        left = S * S * S.shift_x(mono(1, 0, 1)) * S.shift_x(mono(1, 0, -1))
        F2 = F2_pf(cutoff)
        right = F2.inv() * F2.invert_x()
        assert left.equal(right)


class TestGRatio:
    def test_total_telescoping(self):
        # f(x) f(xp) collapses to (1-xq)(1-xp/q)/((1-x)(1-xp))
        fe = f_pf(16)
        prod = fe * fe.shift_x(mono(1, 2, 0))
        m = mono(1, 0, 0)
        G = ProductForm(0, None, [
            (mono(1, 0, 1), 1), (mono(1, 2, -1), 1),
            (m, -1), (mono(1, 2, 0), -1)])
        assert prod.equal(G)

    def test_matches_series_at_argument(self):
        # g evaluated at q^3 equals the product of truncated f-values
        m = mono(1, 0, 3)
        w = 11
        fe = f_pf(15)
        lhs = g_ratio(m).expand(w)
        rhs = (fe.eval_x(m) * fe.eval_x(mono(1, 2, 3))).expand(w)
        assert lhs == rhs


class TestBuilders:
    def test_pochhammer_first_coefficient(self):
        # (x; p^2): coefficient of x is -(1 + p^2 + p^4 + ...)
        got = pochhammer_pf(mono(1, 0, 0), 11).expand(1, 9)[1]
        want = -(Scalar.one(9) - Scalar.monomial(1, 4, 0, 9)).inv()
        assert got == want

    def test_theta_has_inverse_lines(self):
        th = theta_pf(mono(1, 2, 0), 12)
        assert th.xpow < 0          # rewritten 1/x lines shift xpow
        assert not th.unit.is_one()

    def test_structure_series_lookup(self):
        assert structure_series("f", 10).equal(f_pf(10))
        with pytest.raises(UnknownSeries):
            structure_series("nope", 10)
