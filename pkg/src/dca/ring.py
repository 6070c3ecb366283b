"""Layered exact coefficient arithmetic in the deformation parameters.

Everything in this engine is computed over the field Q(q) of rational
functions in the generic parameter q, tensored with formal series in a
second parameter s, where s**2 = p.  Half-integer powers of p are
ubiquitous (field prefactors carry p**(1/2)), so the series variable is
s rather than p and every p-order statement translates to an s-window
of twice the length.

Four representations are layered, cheapest first:

``QRat``
    A rational function of q alone: two sparse Laurent polynomials
    (numerator, denominator) with exact rational coefficients.
    Equality is decided by cross multiplication, never by sampling.

``Scalar``
    A truncated Laurent series in s whose coefficients are ``QRat``s,
    together with the exponent bound ``prec`` below which the
    coefficients are trustworthy.  This is the workhorse for sweeps.

``FactoredScalar``
    An exact product  c * s**a2 * q**b * prod (1 - c_i s**{a_i} q**{b_i})**{e_i}
    kept in factored form.  Used wherever exactness must survive
    substitutions q := 1 and q := p (classical limits) and wherever
    coefficients admit a product form (residue prefactors).

``ProductForm``
    A function of one more variable x kept as
    x**xpow * unit * prod (1 - x * m_i)**{e_i}  with monomial lines m_i.
    Contractions, structure functions and exchange functions all live
    here; pole extraction is the removal of a single line.

The zero-recognition strategy is uniform: factored objects compare by
exact cross-multiplied polynomial identities; truncated series compare
coefficientwise on the window both sides guarantee.
"""

from __future__ import annotations

from typing import Iterable, NamedTuple

from gmpy2 import lcm, mpq, mpz

from .errors import (
    HigherOrderPole,
    InversionOfZero,
    NonterminatingProduct,
    PoleAtSubstitution,
)

# Exact rational constructor used throughout the package.
Q = mpq

#: Sentinel precision for series that are exact finite objects.
PREC_EXACT = 10**9

#: Default shrink applied to the guaranteed factor window when two
#: ProductForms are compared (covers the grid spacing of line families).
DEFAULT_EQ_SLACK = 4

_MAX_SERIES_TERMS = 100000


def gbinom(e: int, j: int) -> mpq:
    """Generalized binomial coefficient C(e, j) for integer e, j >= 0."""
    out = Q(1)
    for i in range(j):
        out = out * Q(e - i, i + 1)
    return out


# ---------------------------------------------------------------------------
# sparse Laurent polynomials over Q, dict {exponent: mpq}
# ---------------------------------------------------------------------------


def _pstrip(a: dict) -> dict:
    for k in [k for k, v in a.items() if not v]:
        del a[k]
    return a


def _padd(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        w = out.get(k)
        if w is None:
            out[k] = v
        else:
            w = w + v
            if w:
                out[k] = w
            else:
                del out[k]
    return out


def _padd_into(a: dict, b: dict) -> None:
    """Merge b into a in place (a must be owned by the caller)."""
    for k, v in b.items():
        w = a.get(k)
        if w is None:
            a[k] = v
        else:
            w = w + v
            if w:
                a[k] = w
            else:
                del a[k]


def _nd_accum(cur: list, n: dict, d: dict) -> None:
    """Accumulate the fraction n/d into cur = [num, den] in place.

    Only cur[0] is ever mutated; denominator dicts may be shared and are
    replaced, not modified.  Mirrors the divisible-denominator reuse of
    rational addition."""
    dc = cur[1]
    if dc is d or dc == d:
        _padd_into(cur[0], n)
        return
    quo = _pdivexact(dc, d)
    if quo is not None:
        _padd_into(cur[0], _pmul(n, quo))
        return
    quo = _pdivexact(d, dc)
    if quo is not None:
        new = _pmul(cur[0], quo)
        _padd_into(new, n)
        cur[0] = new
        cur[1] = d
        return
    new = _pmul(cur[0], d)
    _padd_into(new, _pmul(n, dc))
    cur[0] = new
    cur[1] = _pmul(dc, d)


def _pneg(a: dict) -> dict:
    return {k: -v for k, v in a.items()}


def _pscale(a: dict, c) -> dict:
    if not c:
        return {}
    return {k: c * v for k, v in a.items()}


def _pshift(a: dict, k: int, c=None) -> dict:
    """a(q) * c * q**k as a new dict."""
    if c is None:
        return {e + k: v for e, v in a.items()}
    if not c:
        return {}
    return {e + k: c * v for e, v in a.items()}


#: Below this many coefficient pairs a straight convolution beats the
#: packed big-integer product.
_PACK_CUTOFF = 300


def _pmul(a: dict, b: dict) -> dict:
    if not a or not b:
        return {}
    if len(a) > len(b):
        a, b = b, a
    if len(a) == 1:
        ((ka, va),) = a.items()
        return {ka + kb: va * vb for kb, vb in b.items()}
    if len(a) * len(b) <= 24:
        out: dict = {}
        for ka, va in a.items():
            for kb, vbv in b.items():
                k = ka + kb
                w = out.get(k)
                out[k] = va * vbv if w is None else w + va * vbv
        return {k: v for k, v in out.items() if v}
    if len(a) * len(b) > _PACK_CUTOFF:
        return _pmul_packed(a, b)
    # dense convolution: these polynomials have few gaps, and indexed
    # lists beat dict probing on the inner loop
    lb, hb = min(b), max(b)
    vb = [b.get(e, 0) for e in range(lb, hb + 1)]
    la = min(a)
    out = [0] * (max(a) - la + len(vb))
    for ka, va in a.items():
        base = ka - la
        for j, y in enumerate(vb):
            if y:
                out[base + j] = out[base + j] + va * y
    return {k + la + lb: v for k, v in enumerate(out) if v}


def _pmul_packed(a: dict, b: dict) -> dict:
    """Kronecker substitution: clear denominators, evaluate both factors
    at a power of two wide enough that product digits never overlap, and
    take one big-integer product."""
    la, lb = min(a), min(b)
    da = _denlcm(a)
    db = _denlcm(b)
    ia = {k - la: int(v * da) for k, v in a.items()}
    ib = {k - lb: int(v * db) for k, v in b.items()}
    bound = (max(abs(v) for v in ia.values())
             * max(abs(v) for v in ib.values())
             * min(len(ia), len(ib)))
    bits = bound.bit_length() + 2
    prod = _pack(ia, bits) * _pack(ib, bits)
    n_out = max(ia) + max(ib) + 1
    mask = (1 << bits) - 1
    half = 1 << (bits - 1)
    # bias every digit into [0, 2**bits) so the decode needs no borrows
    packed = prod + ((1 << (bits * n_out)) - 1) // mask * half
    den = da * db
    out = {}
    for i in range(n_out):
        d = ((packed >> (bits * i)) & mask) - half
        if d:
            out[i + la + lb] = Q(d, den)
    return out


def _denlcm(a: dict):
    acc = 1
    for v in a.values():
        d = v.denominator
        if d != 1:
            acc = lcm(acc, d)
    return acc


def _pack(iv: dict, bits: int):
    acc = mpz(0)
    for k, v in iv.items():
        acc += mpz(v) << (bits * k)
    return acc


def _pval(a: dict) -> int:
    return min(a)


def _pdeg(a: dict) -> int:
    return max(a)


def _pdivmod(a: dict, b: dict) -> tuple[dict, dict]:
    """Polynomial division (nonnegative exponents assumed): a = q*b + r."""
    if not b:
        raise ZeroDivisionError("polynomial division by zero")
    r = dict(a)
    quo: dict = {}
    db = _pdeg(b)
    lb = b[db]
    while r and _pdeg(r) >= db:
        dr = _pdeg(r)
        t = r[dr] / lb
        quo[dr - db] = t
        for kb, vb in b.items():
            k = kb + dr - db
            w = r.get(k, Q(0)) - t * vb
            if w:
                r[k] = w
            elif k in r:
                del r[k]
    return quo, r


def _pgcd(a: dict, b: dict) -> dict:
    """Monic gcd of two polynomials with nonnegative exponents."""
    while b:
        _, r = _pdivmod(a, b)
        a, b = b, r
    if not a:
        return {0: Q(1)}
    lc = a[_pdeg(a)]
    return {k: v / lc for k, v in a.items()}


def _pdivexact(a: dict, b: dict) -> dict | None:
    """Exact Laurent quotient a / b, or None if b does not divide a."""
    sa, sb = _pval(a), _pval(b)
    quo, rem = _pdivmod(_pshift(a, -sa), _pshift(b, -sb))
    if rem:
        return None
    return _pshift(quo, sa - sb)


def _pdiv_by_q_minus_1(a: dict) -> dict:
    """Exact quotient a / (q - 1); caller guarantees a(1) = 0."""
    lo, hi = _pval(a), _pdeg(a)
    coeffs = [a.get(e, Q(0)) for e in range(lo, hi + 1)]
    out = []
    acc = Q(0)
    for c in reversed(coeffs[1:]):
        acc = acc + c
        out.append(acc)
    out.reverse()
    return _pstrip({lo + i: v for i, v in enumerate(out)})


def _pseries_quot(num: dict, den: dict, nterms: int) -> list:
    """First ``nterms`` coefficients of num/den as power series in q.

    Both arguments are polynomials with min exponent 0 and den[0] != 0.
    """
    b0 = den[0]
    out = []
    for j in range(nterms):
        c = num.get(j, Q(0))
        for k, bv in den.items():
            if 0 < k <= j:
                c = c - bv * out[j - k]
        out.append(c / b0)
    return out


# ---------------------------------------------------------------------------
# QRat: rational functions of q
# ---------------------------------------------------------------------------


class QRat:
    """A rational function of q: sparse Laurent numerator / denominator.

    Results of arithmetic are not reduced eagerly; ``reduced()`` returns
    the canonical form (coprime polynomial parts, monic denominator) and
    is applied before serialization.  Equality cross-multiplies, so the
    lazy form is still exact.
    """

    __slots__ = ("n", "d")

    def __init__(self, n: dict, d: dict | None = None):
        if d is None:
            d = {0: Q(1)}
        if not d:
            raise InversionOfZero("QRat with zero denominator")
        self.n = n
        self.d = d

    # -- constructors -------------------------------------------------

    @staticmethod
    def const(c) -> "QRat":
        c = Q(c)
        return QRat({0: c} if c else {})

    @staticmethod
    def monomial(c, b: int) -> "QRat":
        c = Q(c)
        return QRat({b: c} if c else {})

    # -- predicates ---------------------------------------------------

    def is_zero(self) -> bool:
        return not self.n

    def __bool__(self) -> bool:
        return bool(self.n)

    def _triv(self) -> bool:
        return len(self.d) == 1 and 0 in self.d and self.d[0] == 1

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other: "QRat") -> "QRat":
        if self._triv() and other._triv():
            return QRat(_padd(self.n, other.n))
        if self.d == other.d:
            return QRat(_padd(self.n, other.n), self.d)
        # Denominators here come from a small multiplicative pool, so one
        # usually divides the other; reusing it keeps degrees from
        # compounding across long accumulations.
        quo = _pdivexact(self.d, other.d)
        if quo is not None:
            return QRat(_padd(self.n, _pmul(other.n, quo)), self.d)
        quo = _pdivexact(other.d, self.d)
        if quo is not None:
            return QRat(_padd(_pmul(self.n, quo), other.n), other.d)
        return QRat(
            _padd(_pmul(self.n, other.d), _pmul(other.n, self.d)),
            _pmul(self.d, other.d),
        )

    def __neg__(self) -> "QRat":
        return QRat(_pneg(self.n), self.d)

    def __sub__(self, other: "QRat") -> "QRat":
        return self + (-other)

    def __mul__(self, other: "QRat") -> "QRat":
        if not self.n or not other.n:
            return QRat({})
        n = _pmul(self.n, other.n)
        if other._triv():
            return QRat(n, self.d)
        if self._triv():
            return QRat(n, other.d)
        return QRat(n, _pmul(self.d, other.d))

    def scale(self, c, b: int = 0) -> "QRat":
        """self * c * q**b with a scalar c (cheap path)."""
        if not c:
            return QRat({})
        return QRat(_pshift(self.n, b, Q(c)), self.d)

    def inv(self) -> "QRat":
        if not self.n:
            raise InversionOfZero("inverting the zero rational function")
        return QRat(self.d, self.n)

    def __truediv__(self, other: "QRat") -> "QRat":
        return self * other.inv()

    def __eq__(self, other) -> bool:
        if not isinstance(other, QRat):
            return NotImplemented
        return _pmul(self.n, other.d) == _pmul(other.n, self.d)

    __hash__ = None  # type: ignore[assignment]

    # -- canonical form ----------------------------------------------

    def reduced(self) -> "QRat":
        """Canonical representative: coprime parts, monic denominator,
        nonnegative exponents with no common q power."""
        if not self.n:
            return QRat({}, {0: Q(1)})
        shift = -min(_pval(self.n), _pval(self.d))
        n = _pshift(self.n, shift)
        d = _pshift(self.d, shift)
        g = _pgcd(n, d)
        if g != {0: Q(1)}:
            n, _ = _pdivmod(n, g)
            d, _ = _pdivmod(d, g)
        lc = d[_pdeg(d)]
        if lc != 1:
            n = {k: v / lc for k, v in n.items()}
            d = {k: v / lc for k, v in d.items()}
        return QRat(n, d)

    # -- evaluations --------------------------------------------------

    def q_valuation(self) -> int:
        """Order of vanishing at q = 0 (negative for a pole there)."""
        if not self.n:
            raise ValueError("valuation of zero")
        return _pval(self.n) - _pval(self.d)

    def eval_at_one(self):
        """Exact limit q -> 1 as an mpq; cancels shared (q-1) factors."""
        if not self.n:
            return Q(0)
        n, d = self.n, self.d
        n = _pshift(n, -_pval(n))
        d = _pshift(d, -_pval(d))
        while sum(n.values()) == 0 and sum(d.values()) == 0:
            n = _pdiv_by_q_minus_1(n)
            d = _pdiv_by_q_minus_1(d)
        dv = sum(d.values())
        if dv == 0:
            raise PoleAtSubstitution(
                f"pole at q := 1 in rational coefficient {self!r}"
            )
        return sum(n.values()) / dv

    def series_in_s2(self, max_s_exp: int) -> dict:
        """Expansion of self with q := s**2 as {s_exponent: mpq},
        complete for exponents < max_s_exp."""
        if not self.n:
            return {}
        vn, vd = _pval(self.n), _pval(self.d)
        num = _pshift(self.n, -vn)
        den = _pshift(self.d, -vd)
        lead = 2 * (vn - vd)
        nterms = (max_s_exp - lead + 1) // 2 + 1
        if nterms <= 0:
            return {}
        cs = _pseries_quot(num, den, nterms)
        return {lead + 2 * j: c for j, c in enumerate(cs) if c and lead + 2 * j < max_s_exp}

    def __repr__(self) -> str:
        def side(a: dict) -> str:
            if not a:
                return "0"
            bits = []
            for e in sorted(a):
                c = a[e]
                if e == 0:
                    bits.append(f"{c}")
                elif e == 1:
                    bits.append(f"{c}*q")
                else:
                    bits.append(f"{c}*q^{e}")
            return " + ".join(bits)

        if self._triv():
            return f"QRat({side(self.n)})"
        return f"QRat(({side(self.n)}) / ({side(self.d)}))"


_QRAT_ONE = QRat({0: Q(1)})
_QRAT_ZERO = QRat({})


# ---------------------------------------------------------------------------
# Scalar: truncated Laurent series in s with QRat coefficients
# ---------------------------------------------------------------------------


class Scalar:
    """Truncated Laurent series sum_k c_k(q) s**k, trusted for k < prec.

    ``c`` maps s-exponents to nonzero ``QRat`` coefficients; exponents at
    or above ``prec`` are discarded on construction.  The precision
    rules: addition keeps the smaller window; multiplication keeps
    min(prec_a + val_b, prec_b + val_a); inversion of a series with
    valuation v yields precision prec - 2*v.
    """

    __slots__ = ("c", "prec")

    def __init__(self, c: dict, prec: int):
        self.c = {k: v for k, v in c.items() if v and k < prec}
        self.prec = prec

    # -- constructors -------------------------------------------------

    @staticmethod
    def zero(prec: int) -> "Scalar":
        return Scalar({}, prec)

    @staticmethod
    def one(prec: int) -> "Scalar":
        return Scalar({0: _QRAT_ONE}, prec)

    @staticmethod
    def monomial(c, a2: int, b: int, prec: int) -> "Scalar":
        """c * s**a2 * q**b at the given precision."""
        r = QRat.monomial(c, b)
        return Scalar({a2: r} if r else {}, prec)

    @staticmethod
    def from_qrat(r: QRat, prec: int) -> "Scalar":
        return Scalar({0: r} if r else {}, prec)

    # -- basics -------------------------------------------------------

    def is_zero(self) -> bool:
        return not self.c

    def valuation(self) -> int:
        """Least s-exponent present; ``prec`` for the zero window."""
        return min(self.c) if self.c else self.prec

    def coeff(self, k: int) -> QRat:
        return self.c.get(k, _QRAT_ZERO)

    def truncated(self, prec: int) -> "Scalar":
        if prec >= self.prec:
            return self
        return Scalar(self.c, prec)

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other: "Scalar") -> "Scalar":
        prec = min(self.prec, other.prec)
        out = dict(self.c)
        for k, v in other.c.items():
            w = out.get(k)
            if w is None:
                out[k] = v
            else:
                w = w + v
                if w:
                    out[k] = w
                else:
                    del out[k]
        return Scalar(out, prec)

    def __neg__(self) -> "Scalar":
        return Scalar({k: -v for k, v in self.c.items()}, self.prec)

    def __sub__(self, other: "Scalar") -> "Scalar":
        return self + (-other)

    def __mul__(self, other: "Scalar") -> "Scalar":
        va, vb = self.valuation(), other.valuation()
        prec = min(self.prec + vb, other.prec + va)
        if not self.c or not other.c:
            return Scalar({}, prec)
        a, b = self.c, other.c
        if len(a) > len(b):
            a, b = b, a
        bl = sorted(b.items())
        # accumulate numerator dicts in place per output exponent; the
        # denominators come from a small multiplicative pool, so the
        # shared-den and divisible-den paths almost always apply
        acc: dict = {}
        for ka, u in a.items():
            un, ud = u.n, u.d
            ud_triv = len(ud) == 1 and 0 in ud and ud[0] == 1
            kcap = prec - ka
            for kb, v in bl:
                if kb >= kcap:
                    break
                n = _pmul(un, v.n)
                if not n:
                    continue
                vd = v.d
                if len(vd) == 1 and 0 in vd and vd[0] == 1:
                    d = ud
                elif ud_triv:
                    d = vd
                else:
                    d = _pmul(ud, vd)
                cur = acc.get(ka + kb)
                if cur is None:
                    acc[ka + kb] = [n, d]
                else:
                    _nd_accum(cur, n, d)
        out = {}
        for k, nd in acc.items():
            if nd[0]:
                out[k] = QRat(nd[0], nd[1])
        return Scalar(out, prec)

    def mul_mono(self, c, a2: int, b: int) -> "Scalar":
        """self * (c * s**a2 * q**b); shifts the window by a2."""
        if not c:
            return Scalar({}, self.prec + a2)
        c = Q(c)
        return Scalar(
            {k + a2: v.scale(c, b) for k, v in self.c.items()},
            self.prec + a2,
        )

    def mul_qrat(self, r: QRat) -> "Scalar":
        if not r:
            return Scalar({}, self.prec)
        return Scalar({k: v * r for k, v in self.c.items()}, self.prec)

    def inv(self) -> "Scalar":
        if not self.c:
            raise InversionOfZero(
                f"inverting a series that is zero through s^{self.prec}"
            )
        v = self.valuation()
        u0 = self.c[v]
        w0 = u0.inv()
        nterms = self.prec - v  # window length of the unit part
        inv_c: dict = {0: w0}
        for j in range(1, nterms):
            acc = _QRAT_ZERO
            for k, uk in self.c.items():
                kk = k - v
                if 0 < kk <= j:
                    t = inv_c.get(j - kk)
                    if t is not None:
                        acc = acc + uk * t
            if acc:
                inv_c[j] = -(w0 * acc)
        out = {k - v: val for k, val in inv_c.items() if val}
        return Scalar(out, self.prec - 2 * v)

    # -- comparison ---------------------------------------------------

    def __eq__(self, other) -> bool:
        """Coefficientwise equality on the window both sides guarantee."""
        if not isinstance(other, Scalar):
            return NotImplemented
        w = min(self.prec, other.prec)
        keys = set(k for k in self.c if k < w) | set(k for k in other.c if k < w)
        return all(self.coeff(k) == other.coeff(k) for k in keys)

    __hash__ = None  # type: ignore[assignment]

    def equal_through(self, other: "Scalar", w: int) -> bool:
        """Coefficientwise equality for s-exponents < w (must be within
        both windows)."""
        if w > self.prec or w > other.prec:
            raise ValueError(
                f"window {w} exceeds available precision "
                f"({self.prec}, {other.prec})"
            )
        keys = set(k for k in self.c if k < w) | set(k for k in other.c if k < w)
        return all(self.coeff(k) == other.coeff(k) for k in keys)

    # -- substitutions ------------------------------------------------

    def substitute_q(self, target: str) -> "Scalar":
        """Substitute q := 1 or q := p (== s**2) termwise.

        For q := 1 each coefficient is evaluated exactly (shared q-1
        factors cancel); a genuine pole raises PoleAtSubstitution.  For
        q := p each coefficient becomes a series in s; the window
        shrinks by twice the worst q-pole order among the coefficients.
        """
        if target == "1":
            out = {}
            for k, v in self.c.items():
                c1 = v.eval_at_one()
                if c1:
                    out[k] = QRat.const(c1)
            return Scalar(out, self.prec)
        if target != "p":
            raise ValueError(f"unknown substitution target {target!r}")
        if not self.c:
            return Scalar({}, self.prec)
        worst = min(0, min(2 * v.q_valuation() for v in self.c.values()))
        prec = self.prec + worst
        out: dict = {}
        for k, v in self.c.items():
            for e, cc in v.series_in_s2(prec - k).items():
                kk = k + e
                w = out.get(kk)
                if w is None:
                    out[kk] = QRat.const(cc)
                else:
                    out[kk] = w + QRat.const(cc)
        return Scalar(out, prec)

    def __repr__(self) -> str:
        if not self.c:
            return f"Scalar(0; O(s^{self.prec}))"
        bits = []
        for k in sorted(self.c):
            bits.append(f"s^{k}*[{self.c[k]!r}]")
        return "Scalar(" + " + ".join(bits) + f"; O(s^{self.prec}))"


# ---------------------------------------------------------------------------
# Monomial: c * s**a2 * q**b
# ---------------------------------------------------------------------------


class Monomial(NamedTuple):
    """c * s**a2 * q**b with exact rational c.  Hashable; used both as
    a factor key (1 - Monomial) and as a substitution value."""

    c: object  # mpq
    a2: int
    b: int


MONO_ONE = Monomial(Q(1), 0, 0)


def mono(c, a2: int, b: int) -> Monomial:
    return Monomial(Q(c), a2, b)


def m_mul(x: Monomial, y: Monomial) -> Monomial:
    return Monomial(x.c * y.c, x.a2 + y.a2, x.b + y.b)


def m_inv(x: Monomial) -> Monomial:
    return Monomial(1 / x.c, -x.a2, -x.b)


def m_pow(x: Monomial, k: int) -> Monomial:
    return Monomial(x.c ** k, x.a2 * k, x.b * k)


def m_is_one(x: Monomial) -> bool:
    return x.a2 == 0 and x.b == 0 and x.c == 1


def m_str(x: Monomial) -> str:
    bits = []
    if x.c != 1 or (x.a2 == 0 and x.b == 0):
        bits.append(str(x.c))
    if x.a2:
        bits.append(f"s^{x.a2}" if x.a2 != 1 else "s")
    if x.b:
        bits.append(f"q^{x.b}" if x.b != 1 else "q")
    return "*".join(bits) if bits else "1"


# ---------------------------------------------------------------------------
# FactoredScalar: exact factored elements
# ---------------------------------------------------------------------------


def _canon_insert(f: dict, head, m: Monomial, e: int):
    """Insert factor (1 - m)**e into dict f in canonical position.

    Canonical factor monomials have a2 > 0, or a2 == 0 and b > 0.
    Others are rewritten via (1 - m) = (-m) * (1 - 1/m), the monomial
    part going into the head accumulator ``head`` = [c, a2, b].
    Returns the number of vanishing factors folded (0 normally); a
    (1 - 1) factor makes the whole product zero or singular, which the
    caller resolves through the returned flag.
    """
    zero_exp = 0
    while True:
        if m.c == 0:
            return zero_exp
        if m.a2 > 0 or (m.a2 == 0 and m.b > 0):
            cur = f.get(m, 0)
            cur += e
            if cur:
                f[m] = cur
            elif m in f:
                del f[m]
            return zero_exp
        if m.a2 == 0 and m.b == 0:
            if m.c == 1:
                zero_exp += e
                return zero_exp
            head[0] = head[0] * (1 - m.c) ** e
            return zero_exp
        # rewrite: (1 - m)^e = (-m)^e (1 - 1/m)^e
        head[0] = head[0] * (-m.c) ** e
        head[1] += m.a2 * e
        head[2] += m.b * e
        m = m_inv(m)


class FactoredScalar:
    """Exact element  c * s**a2 * q**b * prod (1 - m_i)**{e_i}.

    The factor monomials are canonicalized so a2 > 0 or (a2 == 0, b > 0);
    monomial parts extracted by the rewrite (1 - m) = (-m)(1 - 1/m)
    accumulate in the head.  The zero element is head c == 0 with no
    factors.  Equality is exact (cross-multiplied bivariate polynomial
    identity); expansion produces a ``Scalar`` at any requested window.
    """

    __slots__ = ("c", "a2", "b", "f")

    def __init__(self, c=1, a2: int = 0, b: int = 0,
                 factors: Iterable[tuple[Monomial, int]] = ()):
        head = [Q(c), a2, b]
        f: dict = {}
        zexp = 0
        for m, e in factors:
            if e:
                zexp += _canon_insert(f, head, Monomial(Q(m[0]), m[1], m[2]), e)
        if zexp < 0:
            raise InversionOfZero("factored scalar with (1 - 1) in the denominator")
        if zexp > 0 or not head[0]:
            self.c, self.a2, self.b, self.f = Q(0), 0, 0, {}
        else:
            self.c, self.a2, self.b, self.f = head[0], head[1], head[2], f

    # -- constructors -------------------------------------------------

    @staticmethod
    def one() -> "FactoredScalar":
        return _FS_ONE

    @staticmethod
    def zero() -> "FactoredScalar":
        return _FS_ZERO

    @staticmethod
    def from_monomial(c, a2: int = 0, b: int = 0) -> "FactoredScalar":
        return FactoredScalar(c, a2, b)

    # -- predicates ---------------------------------------------------

    def is_zero(self) -> bool:
        return not self.c

    def is_one(self) -> bool:
        return self.c == 1 and self.a2 == 0 and self.b == 0 and not self.f

    def s_ord(self) -> int:
        """Leading s-order (the factors are units in s)."""
        if not self.c:
            raise ValueError("s_ord of zero")
        return self.a2

    # -- arithmetic ---------------------------------------------------

    def __mul__(self, other: "FactoredScalar") -> "FactoredScalar":
        if not self.c or not other.c:
            return _FS_ZERO
        out = FactoredScalar.__new__(FactoredScalar)
        out.c = self.c * other.c
        out.a2 = self.a2 + other.a2
        out.b = self.b + other.b
        f = dict(self.f)
        for m, e in other.f.items():
            cur = f.get(m, 0) + e
            if cur:
                f[m] = cur
            elif m in f:
                del f[m]
        out.f = f
        return out

    def __neg__(self) -> "FactoredScalar":
        if not self.c:
            return self
        out = FactoredScalar.__new__(FactoredScalar)
        out.c, out.a2, out.b, out.f = -self.c, self.a2, self.b, dict(self.f)
        return out

    def inv(self) -> "FactoredScalar":
        if not self.c:
            raise InversionOfZero("inverting the zero factored scalar")
        out = FactoredScalar.__new__(FactoredScalar)
        out.c = 1 / self.c
        out.a2, out.b = -self.a2, -self.b
        out.f = {m: -e for m, e in self.f.items()}
        return out

    def __truediv__(self, other: "FactoredScalar") -> "FactoredScalar":
        return self * other.inv()

    def pow(self, k: int) -> "FactoredScalar":
        if k == 0:
            return _FS_ONE
        if not self.c:
            if k < 0:
                raise InversionOfZero("negative power of zero")
            return _FS_ZERO
        out = FactoredScalar.__new__(FactoredScalar)
        out.c = self.c ** k
        out.a2, out.b = self.a2 * k, self.b * k
        out.f = {m: e * k for m, e in self.f.items()}
        return out

    def mul_mono(self, c, a2: int = 0, b: int = 0) -> "FactoredScalar":
        if not c or not self.c:
            return _FS_ZERO
        out = FactoredScalar.__new__(FactoredScalar)
        out.c = self.c * Q(c)
        out.a2, out.b = self.a2 + a2, self.b + b
        out.f = dict(self.f)
        return out

    def try_add(self, other: "FactoredScalar"):
        """Exact sum if it stays factored (identical factor lists, so
        the sum is self * (1 + monomial)); otherwise None."""
        if not self.c:
            return other
        if not other.c:
            return self
        if self.f != other.f:
            return None
        rc = other.c / self.c
        ra, rb = other.a2 - self.a2, other.b - self.b
        extra = FactoredScalar(1, 0, 0, [(Monomial(-rc, ra, rb), 1)])
        return self * extra

    # -- exact equality ----------------------------------------------

    def eq(self, other: "FactoredScalar") -> bool:
        if not self.c or not other.c:
            return bool(self.c) == bool(other.c)
        num_s, den_s = self._split()
        num_o, den_o = other._split()
        lhs = _bivmul(_bivhead(self), _bivprod(num_s + den_o))
        rhs = _bivmul(_bivhead(other), _bivprod(num_o + den_s))
        return lhs == rhs

    def _split(self):
        num = [(m, e) for m, e in self.f.items() if e > 0]
        den = [(m, -e) for m, e in self.f.items() if e < 0]
        return num, den

    def congruent(self, other: "FactoredScalar", w: int) -> bool:
        """Equality modulo s**w: factors of s-order >= w in the quotient
        are congruent to 1 on that window and are dropped before the
        exact comparison.  This is how values assembled from truncated
        line families are checked against exact closed forms."""
        if not self.c or not other.c:
            if self.c or other.c:
                t = self if self.c else other
                return t.a2 >= w
            return True
        r = self / other
        kept = [(m, e) for m, e in r.f.items() if m.a2 < w]
        trimmed = FactoredScalar(r.c, r.a2, r.b, kept)
        return trimmed.eq(_FS_ONE)

    # -- expansion ----------------------------------------------------

    def expand(self, prec: int) -> Scalar:
        """Series expansion as a Scalar with the given precision."""
        if not self.c:
            return Scalar.zero(prec)
        window = prec - self.a2
        qn: dict = {0: Q(1)}
        qd: dict = {0: Q(1)}
        sfactors = []
        for m, e in self.f.items():
            if m.a2 == 0:
                base = {0: Q(1), m.b: -m.c}
                if e > 0:
                    for _ in range(e):
                        qn = _pmul(qn, base)
                else:
                    for _ in range(-e):
                        qd = _pmul(qd, base)
            else:
                sfactors.append((m, e))
        acc = Scalar.from_qrat(QRat(qn, qd), window)
        for m, e in sfactors:
            acc = acc * _factor_series(m, e, window)
        return acc.mul_mono(self.c, self.a2, self.b)

    # -- substitutions ------------------------------------------------

    def substitute_q(self, target: str) -> "FactoredScalar":
        """Exact substitution q := 1 or q := p with the balanced-limit
        rule: vanishing factors (1 - q**b -> 0, or (q/p)**b -> 1) are
        counted with exponents; a positive balance gives zero, a
        negative one a pole, a zero balance the finite limit with the
        slope product prod b_i**e_i."""
        if target not in ("1", "p"):
            raise ValueError(f"unknown substitution target {target!r}")
        if not self.c:
            return self
        if target == "p":
            head = [self.c, self.a2 + 2 * self.b, 0]
        else:
            head = [self.c, self.a2, 0]
        f: dict = {}
        bal = 0
        slope = Q(1)
        zexp = 0
        for m, e in self.f.items():
            if target == "p":
                mm = Monomial(m.c, m.a2 + 2 * m.b, 0)
            else:
                mm = Monomial(m.c, m.a2, 0)
            if mm.a2 == 0 and mm.b == 0 and mm.c == 1:
                # factor vanishing in the limit; slope per unit is m.b
                bal += e
                slope = slope * Q(m.b) ** e
            else:
                zexp += _canon_insert(f, head, mm, e)
        if bal < 0:
            raise PoleAtSubstitution(
                f"pole in limit q := {target} of {self!r} "
                f"(vanishing balance {bal})"
            )
        if bal > 0 or zexp > 0 or not head[0]:
            return _FS_ZERO
        if zexp < 0:
            raise InversionOfZero(
                f"singular factor in limit q := {target} of {self!r}"
            )
        out = FactoredScalar.__new__(FactoredScalar)
        out.c = head[0] * slope
        out.a2, out.b, out.f = head[1], head[2], f
        return out

    def __repr__(self) -> str:
        if not self.c:
            return "FS(0)"
        bits = [m_str(Monomial(self.c, self.a2, self.b))]
        for m in sorted(self.f, key=lambda t: (t.a2, t.b, t.c)):
            e = self.f[m]
            base = f"(1-{m_str(m)})"
            bits.append(base if e == 1 else base + f"^{e}")
        return "FS(" + " * ".join(bits) + ")"


def _factor_series(m: Monomial, e: int, window: int) -> Scalar:
    """(1 - m)**e as a truncated Scalar (m has a2 > 0)."""
    out: dict = {}
    j = 0
    while j * m.a2 < window:
        if e >= 0 and j > e:
            break
        if e >= 0:
            c = gbinom(e, j) * (-m.c) ** j
        else:
            c = gbinom(-e + j - 1, j) * m.c ** j
        r = QRat.monomial(c, m.b * j)
        if r:
            out[j * m.a2] = r
        j += 1
        if j > _MAX_SERIES_TERMS:
            raise NonterminatingProduct(
                f"factor series for (1-{m_str(m)})^{e} exceeded "
                f"{_MAX_SERIES_TERMS} terms (window {window})"
            )
    return Scalar(out, window)


# bivariate Laurent dicts {(a2, b): mpq} for exact cross-multiplication


def _bivhead(fs: FactoredScalar) -> dict:
    return {(fs.a2, fs.b): fs.c}


def _bivmul(a: dict, b: dict) -> dict:
    out: dict = {}
    for (xa, ya), va in a.items():
        for (xb, yb), vb in b.items():
            k = (xa + xb, ya + yb)
            w = out.get(k, None)
            if w is None:
                out[k] = va * vb
            else:
                w = w + va * vb
                if w:
                    out[k] = w
                else:
                    del out[k]
    return out


def _bivprod(factors) -> dict:
    out = {(0, 0): Q(1)}
    for m, e in factors:
        base = {(0, 0): Q(1), (m.a2, m.b): -m.c}
        for _ in range(e):
            out = _bivmul(out, base)
    return out


_FS_ONE = FactoredScalar(1)
_FS_ZERO = FactoredScalar(0)


# ---------------------------------------------------------------------------
# ProductForm: factored functions of x
# ---------------------------------------------------------------------------


class ProductForm:
    """x**xpow * unit * prod (1 - x*m_i)**{e_i} with monomial lines m_i.

    ``sprec`` is the completeness guarantee: every line of the exact
    (infinite-product) function whose monomial has |s-order| < sprec is
    present in ``f``.  Products take the min; substituting x by a
    monomial of s-order d costs |d| of the guarantee.
    """

    __slots__ = ("xpow", "unit", "f", "sprec")

    def __init__(self, xpow: int = 0, unit: FactoredScalar | None = None,
                 factors: Iterable[tuple[Monomial, int]] = (),
                 sprec: int = PREC_EXACT):
        self.xpow = xpow
        self.unit = unit if unit is not None else _FS_ONE
        f: dict = {}
        for m, e in factors:
            if not e:
                continue
            m = Monomial(Q(m[0]), m[1], m[2])
            cur = f.get(m, 0) + e
            if cur:
                f[m] = cur
            elif m in f:
                del f[m]
        self.f = f
        self.sprec = sprec

    @staticmethod
    def one(sprec: int = PREC_EXACT) -> "ProductForm":
        return ProductForm(sprec=sprec)

    def is_one(self) -> bool:
        return (self.xpow == 0 and not self.f and self.unit.is_one())

    # -- arithmetic ---------------------------------------------------

    def __mul__(self, other: "ProductForm") -> "ProductForm":
        out = ProductForm.__new__(ProductForm)
        out.xpow = self.xpow + other.xpow
        out.unit = self.unit * other.unit
        f = dict(self.f)
        for m, e in other.f.items():
            cur = f.get(m, 0) + e
            if cur:
                f[m] = cur
            elif m in f:
                del f[m]
        out.f = f
        out.sprec = min(self.sprec, other.sprec)
        return out

    def inv(self) -> "ProductForm":
        out = ProductForm.__new__(ProductForm)
        out.xpow = -self.xpow
        out.unit = self.unit.inv()
        out.f = {m: -e for m, e in self.f.items()}
        out.sprec = self.sprec
        return out

    def __truediv__(self, other: "ProductForm") -> "ProductForm":
        return self * other.inv()

    def scale(self, fs: FactoredScalar) -> "ProductForm":
        out = ProductForm.__new__(ProductForm)
        out.xpow = self.xpow
        out.unit = self.unit * fs
        out.f = dict(self.f)
        out.sprec = self.sprec
        return out

    # -- argument moves ----------------------------------------------

    def shift_x(self, m: Monomial) -> "ProductForm":
        """Substitute x := x * m.  Costs |s_ord(m)| of the guarantee."""
        out = ProductForm.__new__(ProductForm)
        out.xpow = self.xpow
        out.unit = self.unit.mul_mono(m.c ** self.xpow,
                                      m.a2 * self.xpow, m.b * self.xpow)
        out.f = {m_mul(k, m): e for k, e in self.f.items()}
        out.sprec = self.sprec - abs(m.a2)
        return out

    def invert_x(self) -> "ProductForm":
        """Substitute x := 1/x, rewriting every line back to (1 - x*g):
        (1 - g/x) = (-g/x)(1 - x/g)."""
        esum = 0
        unit = self.unit
        f: dict = {}
        for m, e in self.f.items():
            esum += e
            unit = unit.mul_mono((-m.c) ** e, m.a2 * e, m.b * e)
            k = m_inv(m)
            cur = f.get(k, 0) + e
            if cur:
                f[k] = cur
            elif k in f:
                del f[k]
        out = ProductForm.__new__(ProductForm)
        out.xpow = -self.xpow - esum
        out.unit = unit
        out.f = f
        out.sprec = self.sprec
        return out

    # -- evaluation ---------------------------------------------------

    def eval_x(self, val: Monomial) -> FactoredScalar:
        """Substitute x := val exactly.  A vanishing line makes the
        result zero (net positive exponent) or raises (net negative)."""
        bal = 0
        rest = []
        for m, e in self.f.items():
            mm = m_mul(m, val)
            if m_is_one(mm):
                bal += e
            else:
                rest.append((mm, e))
        if bal < 0:
            raise PoleAtSubstitution(
                f"substituting x := {m_str(val)} hits a pole line "
                f"(net order {bal})"
            )
        if bal > 0:
            return _FS_ZERO
        head = m_pow(val, self.xpow)
        return self.unit.mul_mono(head.c, head.a2, head.b) * \
            FactoredScalar(1, 0, 0, rest)

    def residue_at(self, loc: Monomial):
        """Simple-pole extraction at x = loc against the measure dx/x:
        returns ((1 - x/loc) * self)|_{x=loc} together with a status.

        Status "ok" for a genuine simple pole; "no-pole" (with a zero
        value) when no line vanishes at loc; HigherOrderPole is raised
        when the net order exceeds one.
        """
        key = m_inv(loc)
        e = self.f.get(key, 0)
        if e >= 0:
            return _FS_ZERO, "no-pole"
        if e < -1:
            raise HigherOrderPole(
                f"pole of order {-e} at x = {m_str(loc)}; simple-pole "
                "extraction does not apply"
            )
        rest = dict(self.f)
        del rest[key]
        bal = 0
        items = []
        for m, ee in rest.items():
            mm = m_mul(m, loc)
            if m_is_one(mm):
                bal += ee
            else:
                items.append((mm, ee))
        if bal < 0:
            raise HigherOrderPole(
                f"additional vanishing line at x = {m_str(loc)} "
                "(pole not simple)"
            )
        if bal > 0:
            return _FS_ZERO, "ok"
        head = m_pow(loc, self.xpow)
        val = self.unit.mul_mono(head.c, head.a2, head.b) * \
            FactoredScalar(1, 0, 0, items)
        return val, "ok"

    # -- expansion ----------------------------------------------------

    def expand(self, order: int, coeff_prec: int,
               direction: str = "x") -> dict:
        """Coefficients of the series expansion.

        direction "x" returns {l: Scalar} for the coefficient of x**l,
        l <= order; direction "1/x" returns {l: Scalar} for the
        coefficient of x**(-l).  Expansion in x requires every line to
        be expanded as a geometric series in x, which is exact.
        """
        if direction == "1/x":
            return self.invert_x().expand(order, coeff_prec, "x")
        if direction != "x":
            raise ValueError(f"unknown expansion direction {direction!r}")
        acc: dict = {0: self.unit.expand(coeff_prec)}
        top = order - self.xpow
        if top < 0:
            return {}
        for m, e in self.f.items():
            fac = _line_series(m, e, top)
            new: dict = {}
            for j in range(top + 1):
                s = None
                for k, (cc, a2, bb) in fac.items():
                    if k > j:
                        break
                    prev = acc.get(j - k)
                    if prev is None:
                        continue
                    t = prev.mul_mono(cc, a2, bb)
                    s = t if s is None else s + t
                if s is not None and not s.is_zero():
                    new[j] = s
            acc = new
        return {j + self.xpow: v for j, v in acc.items()}

    # -- comparison ---------------------------------------------------

    def equal(self, other: "ProductForm", slack: int = DEFAULT_EQ_SLACK) -> bool:
        """Exact equality of the underlying functions, to the extent the
        completeness guarantees allow.

        The quotient self/other is formed and its factor list cancelled.
        Leftover lines of s-order >= w (w = min guarantee - slack) are
        congruent to 1 on the trusted window and dropped.  Leftover
        lines of s-order <= -w are artifacts of the 1/x rewrite at a
        truncation boundary: un-rewriting them restores the matching
        x-power and unit, which must then cancel exactly.  Any small
        leftover lines trigger an honest cross-multiplied polynomial
        check with series coefficients at window w.
        """
        w = min(self.sprec, other.sprec) - slack
        if w <= 0:
            raise NonterminatingProduct(
                "product-form comparison window exhausted; increase the "
                "truncation buffer"
            )
        xp = self.xpow - other.xpow
        un = self.unit / other.unit
        res: dict = {}
        for m, e in self.f.items():
            cur = res.get(m, 0) + e
            if cur:
                res[m] = cur
            elif m in res:
                del res[m]
        for m, e in other.f.items():
            cur = res.get(m, 0) - e
            if cur:
                res[m] = cur
            elif m in res:
                del res[m]
        small: dict = {}
        for m, e in res.items():
            if m.a2 >= w:
                continue
            if m.a2 <= -w:
                # undo the 1/x rewrite: (1 - x m) came from (1 - (1/x)(1/m))
                un = un.mul_mono((-m.c) ** e, m.a2 * e, m.b * e)
                xp += e
                continue
            small[m] = e
        if not small:
            return xp == 0 and un.eq(_FS_ONE)
        # honest polynomial check: x^xp * un * prod small == 1
        num = [(m, e) for m, e in small.items() if e > 0]
        den = [(m, -e) for m, e in small.items() if e < 0]
        lhs = _poly_in_x(num, w)
        rhs = _poly_in_x(den, w)
        if xp >= 0:
            lhs = {k + xp: v for k, v in lhs.items()}
        else:
            rhs = {k - xp: v for k, v in rhs.items()}
        try:
            us = un.expand(w + max(0, un.a2))
        except InversionOfZero:
            return False
        lhs = {k: v * us for k, v in lhs.items()}
        keys = set(lhs) | set(rhs)
        zero = Scalar.zero(w)
        for k in keys:
            a = lhs.get(k, zero)
            b = rhs.get(k, zero)
            wa = min(a.prec, b.prec, w)
            if not a.truncated(wa) == b.truncated(wa):
                return False
        return True

    def __repr__(self) -> str:
        bits = []
        if self.xpow:
            bits.append(f"x^{self.xpow}")
        if not self.unit.is_one():
            bits.append(repr(self.unit))
        for m in sorted(self.f, key=lambda t: (t.a2, t.b, t.c)):
            e = self.f[m]
            base = f"(1-x*{m_str(m)})"
            bits.append(base if e == 1 else base + f"^{e}")
        inner = " * ".join(bits) if bits else "1"
        sp = "exact" if self.sprec >= PREC_EXACT else str(self.sprec)
        return f"PF({inner}; sprec={sp})"


def _line_series(m: Monomial, e: int, top: int) -> dict:
    """(1 - x m)**e as {x_exp: (c, a2, b)} monomial coefficients."""
    out: dict = {}
    j = 0
    while j <= top:
        if e >= 0 and j > e:
            break
        if e >= 0:
            c = gbinom(e, j) * (-m.c) ** j
        else:
            c = gbinom(-e + j - 1, j) * m.c ** j
        if c:
            out[j] = (c, m.a2 * j, m.b * j)
        j += 1
    return out


def _poly_in_x(factors, coeff_prec: int) -> dict:
    """prod (1 - x m)**e (e > 0) as {x_exp: Scalar}, exact."""
    acc = {0: Scalar.one(PREC_EXACT)}
    for m, e in factors:
        for _ in range(e):
            new: dict = {}
            for k, v in acc.items():
                cur = new.get(k)
                new[k] = v if cur is None else cur + v
                t = v.mul_mono(-m.c, m.a2, m.b)
                cur = new.get(k + 1)
                new[k + 1] = t if cur is None else cur + t
            acc = {k: v for k, v in new.items() if not v.is_zero()}
    return acc
