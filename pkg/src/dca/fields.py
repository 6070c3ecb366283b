"""Normally ordered exponential fields and their two-point structure.

A field term is a normally ordered product of exponential factors.  The
factor with sign eps and argument shift sigma (a monomial) stands for

    p^(-eps/2) * q^(-eps*lam_0) * :exp(-eps sum_{m != 0} lambda_m (w sigma)^-m):

so eps = +1, sigma = 1 is the raising constituent of the generating
field and eps = -1, sigma = p^-1 its lowering partner (the module sees
q^(lam_0) as the identity).  Factors with equal arguments and opposite
signs cancel identically; a term whose factors cancel away completely
is a multiple of the identity operator.

Moving one exponential factor past another produces the scalar

    exp( eps_a eps_b sum_{m>0} kappa_m y^m ),   y = x sigma_b / sigma_a,

with x the ratio of the field arguments; in product form this is an
alternating double family of lines on the p grid (``contraction``).  A
product of fields therefore expands into terms carrying one factored
function per slot pair (``wick_expand``); operator products, residues,
matrix elements and exchange functions are all read off that data.
"""

from __future__ import annotations

from itertools import product as _iproduct
from typing import NamedTuple

from .errors import (
    NonScalarExchange,
    UnsupportedDerivative,
)
from .fock import (
    FockVector,
    degree,
    kappa,
    mults,
    partition,
    partitions_of,
)
from .ring import (
    FactoredScalar,
    Monomial,
    ProductForm,
    Q,
    Scalar,
    m_inv,
    m_mul,
    m_pow,
    mono,
)

MONO_ONE = mono(1, 0, 0)
MONO_P_INV = mono(1, -2, 0)


class ExpFactor(NamedTuple):
    """One exponential factor: sign eps (+1 raising / -1 lowering types),
    argument shift ``arg`` relative to the field variable, and a formal
    derivative order (no closed contraction rule is implemented for
    deriv > 0; operations reject it)."""

    eps: int
    arg: Monomial
    deriv: int = 0


def lam_plus(shift: Monomial = MONO_ONE) -> ExpFactor:
    """The raising-type factor displayed at argument w * shift."""
    return ExpFactor(1, shift)


def lam_minus(shift: Monomial = MONO_ONE) -> ExpFactor:
    """The lowering-type factor displayed at argument w * shift; its
    exponential argument sits at shift * p^-1."""
    return ExpFactor(-1, m_mul(shift, MONO_P_INV))


def no_product(factors) -> tuple:
    """Canonical normally ordered product: cancel equal-argument
    opposite-sign pairs (underived only), sort the rest."""
    pos: dict = {}
    neg: dict = {}
    rest = []
    for f in factors:
        if f.deriv:
            rest.append(f)
        elif f.eps > 0:
            pos[f.arg] = pos.get(f.arg, 0) + 1
        else:
            neg[f.arg] = neg.get(f.arg, 0) + 1
    for arg in list(pos):
        k = min(pos.get(arg, 0), neg.get(arg, 0))
        if k:
            pos[arg] -= k
            neg[arg] -= k
    for arg, c in pos.items():
        rest.extend([ExpFactor(1, arg)] * c)
    for arg, c in neg.items():
        rest.extend([ExpFactor(-1, arg)] * c)
    rest.sort(key=lambda f: (f.arg.a2, f.arg.b, f.arg.c, f.eps, f.deriv))
    return tuple(rest)


def no_is_identity(no: tuple) -> bool:
    return not no


class FieldTerm(NamedTuple):
    coeff: FactoredScalar
    no: tuple


_FIELD_COUNTER = [0]


class Field:
    """A finite sum of coefficient * normally-ordered-product terms.

    Coefficients are exact factored scalars.  Terms with the same
    normally ordered product are merged when the sum stays factored;
    otherwise they are kept side by side and zero tests work on the
    exact multi-term sum.
    """

    __slots__ = ("terms", "name", "warnings", "key")

    def __init__(self, terms, name: str = "", warnings: tuple = ()):
        merged: list[FieldTerm] = []
        for t in terms:
            if t.coeff.is_zero():
                continue
            for i, s in enumerate(merged):
                if s.no == t.no:
                    c = s.coeff.try_add(t.coeff)
                    if c is not None:
                        if c.is_zero():
                            del merged[i]
                        else:
                            merged[i] = FieldTerm(c, s.no)
                        break
            else:
                merged.append(t)
        merged.sort(key=lambda t: t.no)
        self.terms = tuple(merged)
        self.name = name
        self.warnings = warnings
        _FIELD_COUNTER[0] += 1
        self.key = (name, _FIELD_COUNTER[0])

    def is_zero(self) -> bool:
        groups: dict = {}
        for t in self.terms:
            groups.setdefault(t.no, []).append(t.coeff)
        return all(fs_sum_is_zero(cs) for cs in groups.values())

    def scale(self, fs: FactoredScalar) -> "Field":
        return Field([FieldTerm(t.coeff * fs, t.no) for t in self.terms],
                     self.name, self.warnings)

    def __add__(self, other: "Field") -> "Field":
        return Field(list(self.terms) + list(other.terms),
                     self.name, self.warnings + other.warnings)

    def __sub__(self, other: "Field") -> "Field":
        return self + other.scale(FactoredScalar.from_monomial(-1))

    def equals(self, other: "Field") -> bool:
        return (self - other).is_zero()

    def proportional_to(self, other: "Field"):
        """The exact ratio self/other if the fields are proportional,
        else None.  Both must be nonzero."""
        cand = None
        byno: dict = {}
        for t in other.terms:
            byno.setdefault(t.no, []).append(t.coeff)
        for t in self.terms:
            if t.no in byno and len(byno[t.no]) == 1:
                cand = t.coeff / byno[t.no][0]
                break
        if cand is None:
            return None
        return cand if self.equals(other.scale(cand)) else None

    def substitute_q(self, target: str) -> "Field":
        """Termwise classical limit q := 1 or q := p of the coefficients
        (arguments are monomials in s and q; they are substituted too)."""
        out = []
        for t in self.terms:
            c = t.coeff.substitute_q(target)
            if c.is_zero():
                continue
            no = no_product(
                ExpFactor(f.eps, _mono_subst(f.arg, target), f.deriv)
                for f in t.no)
            out.append(FieldTerm(c, no))
        return Field(out, self.name, self.warnings)

    def __repr__(self) -> str:
        if not self.terms:
            return f"Field({self.name or '0'}: 0)"
        bits = []
        for t in self.terms:
            nos = " ".join(
                f"E({f.eps:+d},{_mstr(f.arg)})" + (f"'{f.deriv}" if f.deriv else "")
                for f in t.no) or "Id"
            bits.append(f"[{t.coeff!r}] {nos}")
        return f"Field({self.name}: " + " + ".join(bits) + ")"


def _mstr(m: Monomial) -> str:
    from .ring import m_str
    return m_str(m)


def _mono_subst(m: Monomial, target: str) -> Monomial:
    if target == "p":
        return Monomial(m.c, m.a2 + 2 * m.b, 0)
    return Monomial(m.c, m.a2, 0)


def fs_sum_is_zero(terms) -> bool:
    """Exact zero test for a sum of factored scalars (cross-multiplied
    bivariate polynomial identity)."""
    terms = [t for t in terms if not t.is_zero()]
    if not terms:
        return True
    if len(terms) == 1:
        return False
    from .ring import _bivhead, _bivmul, _bivprod
    nums = []
    dens = []
    for t in terms:
        pos = [(m, e) for m, e in t.f.items() if e > 0]
        neg = [(m, -e) for m, e in t.f.items() if e < 0]
        nums.append(_bivmul(_bivhead(t), _bivprod(pos)))
        dens.append(_bivprod(neg))
    total: dict = {}
    for i, n in enumerate(nums):
        part = dict(n)
        for j, d in enumerate(dens):
            if j != i:
                part = _bivmul(part, d)
        for k, v in part.items():
            w = total.get(k)
            if w is None:
                total[k] = v
            else:
                w = w + v
                if w:
                    total[k] = w
                else:
                    del total[k]
    return not total


def field_T() -> Field:
    """The generating field: raising factor at shift 1 plus lowering
    factor at shift 1 (exponential argument p^-1)."""
    one = FactoredScalar.one()
    return Field([
        FieldTerm(one, no_product([lam_plus()])),
        FieldTerm(one, no_product([lam_minus()])),
    ], name="T")


def field_identity() -> Field:
    return Field([FieldTerm(FactoredScalar.one(), ())], name="Id")


# ---------------------------------------------------------------------------
# contraction and product expansion
# ---------------------------------------------------------------------------


def contraction(a: ExpFactor, b: ExpFactor, cutoff: int) -> ProductForm:
    """Scalar factor from moving factor ``a`` (outer variable z) across
    factor ``b`` (inner variable w), as a product form in x = w/z:

        prod_{j>=0} [ (1-y p^j)(1-y p^{j+1})
                      / ((1-y q p^j)(1-y p^{j+1}/q)) ]^{eps_a eps_b (-1)^j}

    with y = x * arg_b/arg_a.  The double family telescopes to the
    familiar kernels: both signs positive gives 1/f(x).
    """
    if a.deriv or b.deriv:
        raise UnsupportedDerivative(
            "no closed contraction rule for derived exponential factors")
    tau = m_mul(b.arg, m_inv(a.arg))
    ee = a.eps * b.eps
    fac: list = []
    j = 0
    while True:
        sign = ee if j % 2 == 0 else -ee
        lines = (
            (Monomial(tau.c, tau.a2 + 2 * j, tau.b), sign),
            (Monomial(tau.c, tau.a2 + 2 * (j + 1), tau.b), sign),
            (Monomial(tau.c, tau.a2 + 2 * j, tau.b + 1), -sign),
            (Monomial(tau.c, tau.a2 + 2 * (j + 1), tau.b - 1), -sign),
        )
        if all(m.a2 >= cutoff for m, _ in lines):
            break
        for m, e in lines:
            if abs(m.a2) < cutoff:
                fac.append((m, e))
        j += 1
    return ProductForm(0, None, fac, sprec=cutoff)


class PETerm(NamedTuple):
    coeff: FactoredScalar
    cfun: dict          # (i, j) i<j -> ProductForm in x_ij = v_j / v_i
    nos: tuple          # per-slot normally ordered products


class ProductExpansion(NamedTuple):
    terms: tuple
    nslots: int
    cutoff: int


def wick_expand(fields, cutoff: int) -> ProductExpansion:
    """Expand a product of fields (one slot per field, outermost first)
    into terms carrying one contraction kernel per slot pair."""
    fields = list(fields)
    n = len(fields)
    out = []
    for combo in _iproduct(*[f.terms for f in fields]):
        coeff = FactoredScalar.one()
        for t in combo:
            coeff = coeff * t.coeff
        if coeff.is_zero():
            continue
        cf = {}
        for i in range(n):
            for j in range(i + 1, n):
                pf = ProductForm.one(cutoff)
                for fa in combo[i].no:
                    for fb in combo[j].no:
                        pf = pf * contraction(fa, fb, cutoff)
                cf[(i, j)] = pf
        out.append(PETerm(coeff, cf, tuple(t.no for t in combo)))
    return ProductExpansion(tuple(out), n, cutoff)


def scale_pair(pe: ProductExpansion, pair: tuple, g: ProductForm) -> ProductExpansion:
    """Multiply the (i, j) kernel of every term by the same function."""
    out = []
    for t in pe.terms:
        cf = dict(t.cfun)
        cf[pair] = cf[pair] * g
        out.append(PETerm(t.coeff, cf, t.nos))
    return ProductExpansion(tuple(out), pe.nslots, pe.cutoff)


def pole_gammas(pe: ProductExpansion, pair: tuple = (0, 1)) -> list:
    """Candidate pole locations z_i = z_j * gamma of the (i, j) kernels:
    the lines carried with negative exponent, over all terms."""
    seen = set()
    for t in pe.terms:
        for m, e in t.cfun[pair].f.items():
            if e < 0:
                seen.add(m)
    return sorted(seen, key=lambda m: (m.a2, m.b, m.c))


def ope_residue(pe: ProductExpansion, gamma: Monomial) -> Field:
    """Residue of a two-slot product at z = w * gamma against dz/z:
    per term, [(1 - x gamma) * kernel]|_{x = 1/gamma} with the outer
    slot's factors folded to shifts of the inner variable."""
    if pe.nslots != 2:
        raise ValueError("ope_residue expects a two-slot expansion")
    loc = m_inv(gamma)
    terms = []
    any_pole = False
    for t in pe.terms:
        val, status = t.cfun[(0, 1)].residue_at(loc)
        if status == "ok":
            any_pole = True
        if val.is_zero():
            continue
        folded = no_product(
            [ExpFactor(f.eps, m_mul(f.arg, gamma), f.deriv) for f in t.nos[0]]
            + list(t.nos[1]))
        terms.append(FieldTerm(t.coeff * val, folded))
    warnings = () if any_pole else ("no-pole",)
    return Field(terms, warnings=warnings)


# ---------------------------------------------------------------------------
# mode action on the Fock module
# ---------------------------------------------------------------------------


def _collapse_coeffs(no: tuple):
    """Mode-m exponential coefficient of the collapsed product:
    c_m = sum_i (-eps_i) arg_i^{-m} (m != 0), plus the scalar prefactor
    p^{-sum eps / 2}."""
    for f in no:
        if f.deriv:
            raise UnsupportedDerivative(
                "no mode action for derived exponential factors")
    eps_sum = sum(f.eps for f in no)

    def c(m: int, prec: int) -> Scalar:
        acc = Scalar.zero(prec)
        for f in no:
            g = m_pow(f.arg, -m)
            acc = acc + Scalar.monomial(-f.eps * g.c, g.a2, g.b, prec)
        return acc

    return c, -eps_sum


def mode_apply_basis(field: Field, n: int, mu: tuple, prec: int,
                     memo: dict | None = None) -> FockVector:
    """Action of the n-th Fourier mode on a basis state, memoized.

    Every term is an exponential in the oscillators, so its action on a
    basis state peels one part at a time: either the peeled oscillator
    commutes through and reattaches, or it is annihilated against the
    matching exponential coefficient, shifting the mode index."""
    if memo is not None:
        hit = memo.get((field.key, n, mu, prec))
        if hit is not None:
            return hit
    local = {} if memo is None else memo
    total: dict = {}
    for ti in range(len(field.terms)):
        part = _term_mode_basis(field, ti, n, mu, prec, local)
        for nu, w in part.c.items():
            cur = total.get(nu)
            total[nu] = w if cur is None else cur + w
    vec = FockVector(total)
    if memo is not None:
        memo[(field.key, n, mu, prec)] = vec
    return vec


def _term_mode_basis(field: Field, ti: int, n: int, mu: tuple, prec: int,
                     memo: dict) -> FockVector:
    """Single-term mode action by the peel-one-part recurrence."""
    key = (field.key, ti, n, mu, prec)
    hit = memo.get(key)
    if hit is not None:
        return hit
    t = field.terms[ti]
    if not mu:
        # pure creation onto the vacuum
        cfun, pref_a2 = _collapse_coeffs(t.no)
        base = t.coeff.expand(prec - pref_a2).mul_mono(1, pref_a2, 0)
        total: dict = {}
        if not base.is_zero():
            for rho in partitions_of(-n):
                w = base
                for m, cnt in mults(rho).items():
                    g = cfun(-m, prec)
                    piece = g
                    for _ in range(cnt - 1):
                        piece = piece * g
                    w = w * piece.mul_mono(Q(1, _fact(cnt)), 0, 0)
                if not w.is_zero():
                    total[rho] = w
        vec = FockVector(total)
    else:
        k, rest = mu[0], mu[1:]
        att = _term_mode_basis(field, ti, n, rest, prec, memo)
        ann = _term_mode_basis(field, ti, n - k, rest, prec, memo)
        total = {partition(sig + (k,)): w for sig, w in att.c.items()}
        if ann.c:
            skey = (field.key, ti, k, "step", prec)
            step = memo.get(skey)
            if step is None:
                cfun, _ = _collapse_coeffs(t.no)
                step = cfun(k, prec) * kappa(k, prec)
                memo[skey] = step
            for sig, w in ann.c.items():
                w = w * step
                cur = total.get(sig)
                total[sig] = w if cur is None else cur + w
        vec = FockVector(total)
    memo[key] = vec
    return vec


def _fact(n: int) -> int:
    from math import factorial
    return factorial(n)


def mode_apply(field: Field, n: int, vec: FockVector, prec: int,
               memo: dict | None = None,
               retain: int | None = None) -> FockVector:
    """Action of the n-th Fourier mode (field = sum_n field_n w^-n) on a
    vector, by linearity from the memoized basis action.

    ``retain`` caps the retained s-orders of the result; the basis
    coefficients are pre-truncated so the products never compute the
    capped-away range in the first place."""
    out: dict = {}
    for mu, coeff in vec.c.items():
        basis = mode_apply_basis(field, n, mu, prec, memo)
        vs = coeff.valuation()
        for nu, b in basis.c.items():
            if retain is not None:
                b = b.truncated(retain - vs)
            w = b * coeff
            cur = out.get(nu)
            out[nu] = w if cur is None else cur + w
    return FockVector(out)


# ---------------------------------------------------------------------------
# matrix elements and exchange
# ---------------------------------------------------------------------------


def matrix_element_series(A: Field, B: Field, out_part: tuple, in_part: tuple,
                          nlo: int, nhi: int, prec: int,
                          memo: dict | None = None) -> tuple[int, dict]:
    """Matrix elements of A(z)B(w) between basis states.

    Returns (t, {n: Scalar}) where t = deg(in) - deg(out) and the n-th
    entry is the coefficient functional applied to A_n B_{t-n} (state):
    the two-variable matrix element is w^-t * sum_n a_n x^n, x = w/z.
    """
    from .fock import pair
    t = degree(in_part) - degree(out_part)
    base = FockVector.basis(in_part, prec)
    out = {}
    for nn in range(nlo, nhi + 1):
        v = mode_apply(B, t - nn, base, prec, memo)
        w = mode_apply(A, nn, v, prec, memo)
        out[nn] = pair(out_part, w, prec)
    return t, out


def exchange_function(A: Field, B: Field, cutoff: int) -> ProductForm:
    """The scalar S with A(z)B(w) = S(w/z) B(w)A(z), if one exists.

    Every term pair must propose the same function; a mismatch raises
    NonScalarExchange with the offending pair in the message.
    """
    ab = wick_expand([A, B], cutoff)
    ba = wick_expand([B, A], cutoff)
    la, lb = len(A.terms), len(B.terms)
    cand = None
    cand_src = None
    for ia in range(la):
        for ib in range(lb):
            k_ab = ia * lb + ib
            k_ba = ib * la + ia
            c_ab = ab.terms[k_ab].cfun[(0, 1)]
            c_ba = ba.terms[k_ba].cfun[(0, 1)]
            s = c_ab / c_ba.invert_x()
            if cand is None:
                cand = s
                cand_src = (ia, ib)
            elif not cand.equal(s):
                raise NonScalarExchange(
                    f"term pair {(ia, ib)} proposes a different exchange "
                    f"function than {cand_src}: not a scalar exchange")
    if cand is None:
        raise NonScalarExchange("empty product; no exchange function")
    return cand
