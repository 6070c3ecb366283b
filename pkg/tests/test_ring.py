"""Tests for the layered coefficient arithmetic.

Expected values here come from hand expansions (geometric series,
binomials), from round-trip identities (x * x^-1 == 1), or from
comparing two independent routes (factored equality versus series
expansion).  Nothing is copied back from engine output.
"""

import pytest
from gmpy2 import mpq

from hypothesis import given, settings, strategies as st

from dca.errors import (
    HigherOrderPole,
    InversionOfZero,
    PoleAtSubstitution,
)
from dca.ring import (
    FactoredScalar,
    Monomial,
    ProductForm,
    Q,
    QRat,
    Scalar,
    mono,
)


def qr(b):
    return QRat.monomial(1, b)


class TestQRat:
    def test_field_ops(self):
        a = qr(1) + QRat.const(1)          # q + 1
        b = qr(2) - QRat.const(1)          # q^2 - 1
        assert b / a == qr(1) - QRat.const(1)
        assert (a * b) / b == a
        assert (a - a).is_zero()

    def test_reduced_canonical(self):
        r = (qr(2) - QRat.const(1)) / (qr(1) + QRat.const(1))
        red = r.reduced()
        assert red.n == {0: Q(-1), 1: Q(1)}
        assert red.d == {0: Q(1)}

    def test_reduced_monic_denominator(self):
        r = QRat({0: Q(1)}, {0: Q(2), 1: Q(2)})
        red = r.reduced()
        assert red.d[max(red.d)] == 1
        assert red == r

    def test_eval_at_one_strips_shared_factors(self):
        # (q^2 - 1)/(q - 1) -> q + 1 -> 2
        r = (qr(2) - QRat.const(1)) / (qr(1) - QRat.const(1))
        assert r.eval_at_one() == 2

    def test_eval_at_one_zero_numerator(self):
        r = (qr(1) - QRat.const(1)) / (qr(1) + QRat.const(1))
        assert r.eval_at_one() == 0

    def test_eval_at_one_pole(self):
        r = QRat.const(1) / (qr(1) - QRat.const(1))
        with pytest.raises(PoleAtSubstitution):
            r.eval_at_one()

    def test_series_in_s2_geometric(self):
        v = QRat.const(1) / (QRat.const(1) - qr(1))
        assert v.series_in_s2(7) == {0: Q(1), 2: Q(1), 4: Q(1), 6: Q(1)}

    def test_series_in_s2_laurent(self):
        # q^-1 has a double s-pole
        assert qr(-1).series_in_s2(3) == {-2: Q(1)}

    def test_q_valuation(self):
        assert (QRat.monomial(3, -2) / qr(1)).q_valuation() == -3

    def test_invert_zero(self):
        with pytest.raises(InversionOfZero):
            QRat.const(0).inv()


class TestScalar:
    def test_geometric_inverse(self):
        g = Scalar.one(9) - Scalar.monomial(1, 2, 0, 9)
        inv = g.inv()
        assert inv.c == {k: QRat.const(1) for k in (0, 2, 4, 6, 8)}
        assert g * inv == Scalar.one(9)

    def test_inverse_precision_rule(self):
        # valuation 2 -> window shrinks by 4
        a = Scalar.monomial(1, 2, 0, 9) - Scalar.monomial(1, 4, 0, 9)
        inv = a.inv()
        assert inv.prec == 9 - 4
        assert (a * inv).valuation() == 0
        assert a * inv == Scalar.one(inv.prec)

    def test_add_min_precision(self):
        a = Scalar.one(5)
        b = Scalar.one(9)
        assert (a + b).prec == 5

    def test_mul_precision_with_valuation(self):
        a = Scalar.monomial(1, 3, 0, 10)   # val 3, prec 10
        b = Scalar.monomial(1, 1, 0, 6)    # val 1, prec 6
        assert (a * b).prec == min(10 + 1, 6 + 3)

    def test_invert_zero_series(self):
        with pytest.raises(InversionOfZero):
            Scalar.zero(5).inv()

    def test_substitute_q_to_one(self):
        r = (qr(2) - QRat.const(1)) / (qr(1) - QRat.const(1))
        s = Scalar({2: r}, 7).substitute_q("1")
        assert s.coeff(2) == QRat.const(2)

    def test_substitute_q_to_p_shifts_window(self):
        h = Scalar.monomial(1, 0, 1, 9) - Scalar.monomial(1, 0, -1, 9)
        hp = h.substitute_q("p")
        assert hp.prec == 7
        assert hp.coeff(2) == QRat.const(1)
        assert hp.coeff(-2) == QRat.const(-1)

    def test_substitute_q_limit_is_one(self):
        # (1+q)(1-p)/(1-pq) -> 1 as q -> p
        one = Scalar.one(13)
        num = (one + Scalar.monomial(1, 0, 1, 13)) * \
              (one - Scalar.monomial(1, 2, 0, 13))
        den = one - Scalar.monomial(1, 2, 1, 13)
        lim = (num * den.inv()).substitute_q("p")
        assert lim == Scalar.one(lim.prec)

    def test_equal_through_window_guard(self):
        with pytest.raises(ValueError):
            Scalar.one(5).equal_through(Scalar.one(9), 7)


class TestFactoredScalar:
    def test_canonical_rewrite_q(self):
        # (1 - q^-1) = (-q^-1)(1 - q)
        fs = FactoredScalar(1, 0, 0, [(mono(1, 0, -1), 1)])
        assert fs.c == -1 and fs.b == -1
        assert fs.f == {Monomial(Q(1), 0, 1): 1}

    def test_canonical_rewrite_s(self):
        # (1 - s^-2) = (-s^-2)(1 - s^2)
        fs = FactoredScalar(1, 0, 0, [(mono(1, -2, 0), 1)])
        assert fs.c == -1 and fs.a2 == -2
        assert fs.f == {Monomial(Q(1), 2, 0): 1}

    def test_constant_fold_and_zero(self):
        assert FactoredScalar(1, 0, 0, [(mono(Q(1, 2), 0, 0), 1)]).c == Q(1, 2)
        assert FactoredScalar(1, 0, 0, [(mono(1, 0, 0), 2)]).is_zero()
        with pytest.raises(InversionOfZero):
            FactoredScalar(1, 0, 0, [(mono(1, 0, 0), -1)])

    def test_mul_cancels(self):
        a = FactoredScalar(2, 1, 0, [(mono(1, 0, 1), 1)])
        assert (a * a.inv()).is_one()

    def test_try_add_common_factor(self):
        a = FactoredScalar.from_monomial(1, 1, 0)
        b = FactoredScalar.from_monomial(-1, 1, 1)
        s = a.try_add(b)     # s - s q = s(1 - q)
        assert s is not None
        assert s.eq(FactoredScalar(1, 1, 0, [(mono(1, 0, 1), 1)]))

    def test_try_add_opposite(self):
        a = FactoredScalar.from_monomial(1, 2, 1)
        assert a.try_add(-a).is_zero()

    def test_try_add_incompatible(self):
        a = FactoredScalar(1, 0, 0, [(mono(1, 0, 1), 1)])
        b = FactoredScalar(1, 0, 0, [(mono(1, 2, 0), 1)])
        assert a.try_add(b) is None

    def test_eq_versus_expansion(self):
        # (1-q)(1+q) == (1-q^2) two routes: exact eq and series expansion
        a = FactoredScalar(1, 0, 0, [(mono(1, 0, 1), 1), (mono(-1, 0, 1), 1)])
        b = FactoredScalar(1, 0, 0, [(mono(1, 0, 2), 1)])
        assert a.eq(b)
        assert a.expand(9) == b.expand(9)
        c = FactoredScalar(1, 0, 0, [(mono(1, 0, 2), 2)])
        assert not a.eq(c)

    def test_expand_matches_scalar_route(self):
        # (1 - s^2 q^-1)/(1 + s^2) built factored and via Scalar ops
        fs = FactoredScalar(1, 0, 0, [(mono(1, 2, -1), 1), (mono(-1, 2, 0), -1)])
        w = 11
        num = Scalar.one(w) - Scalar.monomial(1, 2, -1, w)
        den = Scalar.one(w) + Scalar.monomial(1, 2, 0, w)
        assert fs.expand(w) == num * den.inv()

    def test_substitute_q_one_slope(self):
        # (1-q^2)/(1-q^3) -> 2/3
        fs = FactoredScalar(1, 0, 0, [(mono(1, 0, 2), 1), (mono(1, 0, 3), -1)])
        assert fs.substitute_q("1").eq(FactoredScalar.from_monomial(Q(2, 3)))

    def test_substitute_q_p_limit_one(self):
        fs = FactoredScalar(1, 0, 0, [
            (mono(-1, 0, 1), 1), (mono(1, 2, 0), 1), (mono(1, 2, 1), -1)])
        assert fs.substitute_q("p").eq(FactoredScalar.one())

    def test_substitute_q_pole(self):
        fs = FactoredScalar(1, 0, 0, [(mono(1, 0, 2), -1)])
        with pytest.raises(PoleAtSubstitution):
            fs.substitute_q("1")

    def test_substitute_keeps_plain_factors(self):
        # (1 - p q) at q := 1 is (1 - p), no vanishing involved
        fs = FactoredScalar(1, 0, 0, [(mono(1, 2, 1), 1)])
        out = fs.substitute_q("1")
        assert out.f == {Monomial(Q(1), 2, 0): 1}


class TestProductForm:
    def test_residue_simple_pole(self):
        # P = (1-x)^-1 (1-xq); removing the line at x=1 leaves 1-q
        P = ProductForm(0, None, [(mono(1, 0, 0), -1), (mono(1, 0, 1), 1)])
        val, status = P.residue_at(mono(1, 0, 0))
        assert status == "ok"
        assert val.eq(FactoredScalar(1, 0, 0, [(mono(1, 0, 1), 1)]))

    def test_residue_no_pole(self):
        P = ProductForm(0, None, [(mono(1, 0, 1), 1)])
        val, status = P.residue_at(mono(1, 0, 0))
        assert status == "no-pole"
        assert val.is_zero()

    def test_residue_higher_order(self):
        P = ProductForm(0, None, [(mono(1, 0, 0), -2)])
        with pytest.raises(HigherOrderPole):
            P.residue_at(mono(1, 0, 0))

    def test_expand_geometric(self):
        P = ProductForm(0, None, [(mono(1, 0, 1), -1)])   # 1/(1-xq)
        ex = P.expand(4, 9)
        for l in range(5):
            assert ex[l] == Scalar.monomial(1, 0, l, 9)

    def test_expand_inverse_direction(self):
        # function of 1/x: build (1 - q/x)^-1 by inverting the argument
        P = ProductForm(0, None, [(mono(1, 0, 1), -1)]).invert_x()
        ex = P.expand(3, 9, "1/x")
        for l in range(4):
            assert ex[l] == Scalar.monomial(1, 0, l, 9)

    def test_invert_x_round_trip(self):
        P = ProductForm(2, FactoredScalar.from_monomial(3, 1, -1),
                        [(mono(1, 0, 1), 1), (mono(1, 2, 0), -1)], sprec=8)
        Q2 = P.invert_x().invert_x()
        assert Q2.xpow == P.xpow and Q2.f == P.f
        assert Q2.unit.eq(P.unit)

    def test_eval_x(self):
        P = ProductForm(1, None, [(mono(1, 0, 1), 1)])
        v = P.eval_x(mono(1, 2, 0))      # x := p
        assert v.eq(FactoredScalar(1, 2, 0, [(mono(1, 2, 1), 1)]))

    def test_eval_x_zero_and_pole(self):
        P = ProductForm(0, None, [(mono(1, 0, 1), 1)])
        assert P.eval_x(mono(1, 0, -1)).is_zero()
        with pytest.raises(PoleAtSubstitution):
            P.inv().eval_x(mono(1, 0, -1))

    def test_equal_different_truncations(self):
        def fam(cutoff):
            fac = []
            n = 0
            while 4 * n + 1 < cutoff:
                fac.append((mono(1, 4 * n, 1), 1))
                n += 1
            return ProductForm(0, None, fac, sprec=cutoff)

        assert fam(9).equal(fam(17))
        other = fam(9) * ProductForm(0, None, [(mono(1, 0, 1), 1)])
        assert not fam(9).equal(other)

    def test_equal_detects_unit_mismatch(self):
        P = ProductForm(0, None, [], sprec=10)
        Q2 = ProductForm(0, FactoredScalar.from_monomial(2), [], sprec=10)
        assert not P.equal(Q2)

    def test_shift_x_consumes_guarantee(self):
        P = ProductForm(0, None, [(mono(1, 0, 1), 1)], sprec=6)
        assert P.shift_x(mono(1, 2, 0)).sprec == 4
        assert P.shift_x(mono(1, -2, 0)).sprec == 4

    def test_shift_then_eval(self):
        P = ProductForm(0, None, [(mono(1, 0, 1), 1)], sprec=10)
        a = P.shift_x(mono(1, 2, 0)).eval_x(mono(1, 0, 0))
        b = P.eval_x(mono(1, 2, 0))
        assert a.eq(b)


# ---------------------------------------------------------------------------
# property tests
# ---------------------------------------------------------------------------

small_qrat = st.builds(
    lambda cs: QRat({e: Q(c) for e, c in cs.items() if c}),
    st.dictionaries(st.integers(-2, 2), st.integers(-4, 4), max_size=3),
)

small_scalar = st.builds(
    lambda cs, prec: Scalar(
        {e: QRat.const(c) for e, c in cs.items() if c}, prec),
    st.dictionaries(st.integers(-3, 6), st.integers(-4, 4), max_size=4),
    st.integers(5, 9),
)


@settings(max_examples=60, deadline=None)
@given(small_qrat, small_qrat, small_qrat)
def test_qrat_distributive(a, b, c):
    assert a * (b + c) == a * b + a * c


@settings(max_examples=60, deadline=None)
@given(small_qrat)
def test_qrat_inverse_round_trip(a):
    if not a.is_zero():
        assert a * a.inv() == QRat.const(1)


@settings(max_examples=60, deadline=None)
@given(small_scalar, small_scalar, small_scalar)
def test_scalar_distributive(a, b, c):
    lhs = a * (b + c)
    rhs = a * b + a * c
    w = min(lhs.prec, rhs.prec)
    assert lhs.truncated(w) == rhs.truncated(w)

@settings(max_examples=60, deadline=None)
@given(small_scalar)
def test_scalar_inverse_round_trip(a):
    if not a.is_zero():
        inv = a.inv()
        prod = a * inv
        assert prod == Scalar.one(prod.prec)


@settings(max_examples=60, deadline=None)
@given(small_scalar, small_scalar)
def test_scalar_add_precision_is_min(a, b):
    assert (a + b).prec == min(a.prec, b.prec)


mono_st = st.builds(
    lambda c, a2, b: mono(Q(c), a2, b),
    st.integers(-3, 3).filter(lambda c: c != 0),
    st.integers(-2, 4),
    st.integers(-2, 2),
).filter(lambda m: not (m.c == 1 and m.a2 == 0 and m.b == 0))

small_fs = st.builds(
    lambda ms: FactoredScalar(1, 0, 0, [(m, e) for m, e in ms]),
    st.lists(st.tuples(mono_st, st.integers(-2, 2)), max_size=3),
)


@settings(max_examples=40, deadline=None)
@given(small_fs)
def test_fs_inverse_round_trip(fs):
    if not fs.is_zero():
        assert (fs * fs.inv()).is_one()


@settings(max_examples=40, deadline=None)
@given(small_fs, small_fs)
def test_fs_eq_matches_expansion(a, b):
    # factored equality and truncated-series equality must agree on a
    # window wide enough to separate these small factor sets
    if a.is_zero() or b.is_zero():
        return
    w = 25
    assert a.eq(b) == (a.expand(w) == b.expand(w))
