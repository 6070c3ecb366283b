"""Tests for partitions, the bracket scalar and Fock vectors."""

from dca.fock import (
    FockVector,
    degree,
    kappa,
    kappa_exact,
    mults,
    pair,
    partitions_of,
    remove_parts,
    sub_multisets,
)
from dca.ring import Q, Scalar


class TestPartitions:
    def test_counts(self):
        # number of partitions of n for n = 0..6: 1 1 2 3 5 7 11
        want = [1, 1, 2, 3, 5, 7, 11]
        got = [len(partitions_of(n)) for n in range(7)]
        assert got == want

    def test_max_part(self):
        assert partitions_of(4, max_part=2) == ((2, 2), (2, 1, 1), (1, 1, 1, 1))

    def test_degree_and_mults(self):
        assert degree((3, 2, 2)) == 7
        assert mults((3, 2, 2)) == {3: 1, 2: 2}

    def test_sub_multisets(self):
        subs = list(sub_multisets((2, 1, 1)))
        assert len(subs) == 6           # (0..1 copies of 2) x (0..2 copies of 1)
        assert {} in [dict(s) for s in subs]

    def test_remove_parts(self):
        assert remove_parts((3, 2, 2, 1), {2: 1, 1: 1}) == (3, 2)


class TestKappa:
    def test_matches_series_route(self):
        # kappa_m = -(1/m)(1 - q^m)(1 - p^m q^-m)/(1 + p^m)
        prec = 12
        for m in (1, 2, 3):
            num = (Scalar.one(prec) - Scalar.monomial(1, 0, m, prec)) * \
                  (Scalar.one(prec) - Scalar.monomial(1, 2 * m, -m, prec))
            den = Scalar.one(prec) + Scalar.monomial(1, 2 * m, 0, prec)
            want = num * den.inv() * Scalar.monomial(Q(-1, m), 0, 0, prec)
            assert kappa(m, prec) == want
            assert kappa_exact(m).expand(prec) == want

    def test_antisymmetric_prefactor_structure(self):
        k1 = kappa_exact(1)
        assert k1.c == Q(-1)


class TestFockVector:
    def test_arithmetic(self):
        prec = 8
        v = FockVector.basis((2, 1), prec).scale_mono(2, 0, 0)
        w = v - FockVector.basis((2, 1), prec)
        assert w.degrees() == {3}
        assert pair((2, 1), w, prec) == Scalar.one(prec)
        assert pair((3,), w, prec).is_zero()

    def test_vacuum(self):
        v = FockVector.vacuum(6)
        assert v.degrees() == {0}
        assert pair((), v, 6) == Scalar.one(6)
