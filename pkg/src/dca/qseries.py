"""Named structure series as factored functions of x.

All series here are infinite products over the grid p**2 (p = s**2),
truncated to the lines whose monomial s-order is below a caller-chosen
cutoff; the ``ProductForm`` carries that guarantee in ``sprec``.

``f_pf``      the scalar kernel whose inverse multiplies the fully
              normally ordered term of a two-point product; equal to
              exp(sum_m (1-q^m)(1-p^m q^-m)/(m(1+p^m)) x^m) / (1-x).
``theta_pf``  a Jacobi triple-product style factor with both ascending
              and descending lines (the descending ones are stored
              rewritten through the 1/x identity).
``S_TT_pf``   the two-point exchange function of the generating field,
              a ratio of six thetas.
``F1_pf``     splitting kernel for the (degree 1, degree 2) pair.
``F2_pf``     splitting kernel for the (degree 2, degree 2) pair.
``g_ratio``   the exact rational (1-mq)(1-mp/q)/((1-m)(1-mp)), the
              value of f(x)f(xp) after total telescoping.
``g_pf``      the same ratio with x left symbolic; a finite product,
              exact to all orders.
``alpha_minus_pf``/``alpha_plus_pf``
              generating functions of the quadratic-expansion weights
              (the two one-sided branches of f against the 1-x p q^2
              line).
"""

from .errors import UnknownSeries
from .ring import (
    PREC_EXACT,
    FactoredScalar,
    Monomial,
    ProductForm,
    m_inv,
    mono,
)


def _family(fac: list, c, a2: int, b: int, e: int, cutoff: int) -> None:
    """Append the ascending line family c*s^(a2+4n)*q^b, n >= 0, keeping
    lines with |s-order| < cutoff."""
    n = 0
    while a2 + 4 * n < cutoff:
        if abs(a2 + 4 * n) < cutoff:
            fac.append((mono(c, a2 + 4 * n, b), e))
        n += 1


def pochhammer_pf(m0: Monomial, cutoff: int, e: int = 1) -> ProductForm:
    """(x*m0; p^2)_infinity ** e as a ProductForm."""
    fac: list = []
    _family(fac, m0.c, m0.a2, m0.b, e, cutoff)
    return ProductForm(0, None, fac, sprec=cutoff)


def theta_pf(m0: Monomial, cutoff: int) -> ProductForm:
    """Triple-product factor with argument x*m0 on the p^2 grid:

        prod_{n>0} (1 - x m0 p^{2(n-1)}) (1 - (x m0)^{-1} p^{2n}) (1 - p^{2n})

    The 1/x lines are rewritten as (1 - y/x) = (-y/x)(1 - x/y), the
    monomial parts accumulating in xpow and the unit.
    """
    xpow = 0
    unit = FactoredScalar.one()
    fac: list = []
    _family(fac, m0.c, m0.a2, m0.b, 1, cutoff)
    inv0 = m_inv(m0)
    n = 1
    while inv0.a2 + 4 * n < cutoff:
        g = Monomial(inv0.c, inv0.a2 + 4 * n, inv0.b)
        if abs(g.a2) < cutoff:
            xpow -= 1
            unit = unit.mul_mono(-g.c, g.a2, g.b)
            fac.append((m_inv(g), 1))
        n += 1
    ufac = []
    n = 1
    while 4 * n < cutoff:
        ufac.append((mono(1, 4 * n, 0), 1))
        n += 1
    unit = unit * FactoredScalar(1, 0, 0, ufac)
    return ProductForm(xpow, unit, fac, sprec=cutoff)


def f_pf(cutoff: int) -> ProductForm:
    """The scalar kernel

        f(x) = (1-x)^-1 (xq; p^2)(xp/q; p^2) / ((xpq; p^2)(xp^2/q; p^2)).
    """
    fac: list = [(mono(1, 0, 0), -1)]
    _family(fac, 1, 0, 1, 1, cutoff)     # xq
    _family(fac, 1, 2, -1, 1, cutoff)    # xp/q
    _family(fac, 1, 2, 1, -1, cutoff)    # xpq
    _family(fac, 1, 4, -1, -1, cutoff)   # xp^2/q
    return ProductForm(0, None, fac, sprec=cutoff)


def S_TT_pf(cutoff: int) -> ProductForm:
    """Exchange function of the generating field with itself:

        S(x) = th(xp) th(x/q) th(xq/p) / (th(x/p) th(xq) th(xp/q))

    with th the p^2-grid triple product.  The pure (p^2; p^2) units of
    the six thetas cancel exactly in the quotient.
    """
    num = [mono(1, 2, 0), mono(1, 0, -1), mono(1, -2, 1)]
    den = [mono(1, -2, 0), mono(1, 0, 1), mono(1, 2, -1)]
    out = ProductForm.one(cutoff)
    for m in num:
        out = out * theta_pf(m, cutoff)
    for m in den:
        out = out * theta_pf(m, cutoff).inv()
    return out


def F1_pf(cutoff: int) -> ProductForm:
    """Splitting kernel for the (degree 1, degree 2) product:

        F1(x) = (xp, xp^2 q, xp/q, xq^2; p^2) / (x, xpq, xp^2/q, xpq^2; p^2).
    """
    fac: list = []
    _family(fac, 1, 2, 0, 1, cutoff)     # xp
    _family(fac, 1, 4, 1, 1, cutoff)     # xp^2 q
    _family(fac, 1, 2, -1, 1, cutoff)    # xp/q
    _family(fac, 1, 0, 2, 1, cutoff)     # xq^2
    _family(fac, 1, 0, 0, -1, cutoff)    # x
    _family(fac, 1, 2, 1, -1, cutoff)    # xpq
    _family(fac, 1, 4, -1, -1, cutoff)   # xp^2/q
    _family(fac, 1, 2, 2, -1, cutoff)    # xpq^2
    return ProductForm(0, None, fac, sprec=cutoff)


def F2_pf(cutoff: int) -> ProductForm:
    """Splitting kernel for the (degree 2, degree 2) product:

        F2(x) = (1-x)^-1 (xp^2 q, xp/q, xp/q, xq, xq^2, xp/q^2; p^2)
                        / (xpq, xpq, x/q, xpq^2, xp^2/q^2, xp^2/q; p^2).
    """
    fac: list = [(mono(1, 0, 0), -1)]
    _family(fac, 1, 4, 1, 1, cutoff)     # xp^2 q
    _family(fac, 1, 2, -1, 2, cutoff)    # xp/q twice
    _family(fac, 1, 0, 1, 1, cutoff)     # xq
    _family(fac, 1, 0, 2, 1, cutoff)     # xq^2
    _family(fac, 1, 2, -2, 1, cutoff)    # xp/q^2
    _family(fac, 1, 2, 1, -2, cutoff)    # xpq twice
    _family(fac, 1, 0, -1, -1, cutoff)   # x/q
    _family(fac, 1, 2, 2, -1, cutoff)    # xpq^2
    _family(fac, 1, 4, -2, -1, cutoff)   # xp^2/q^2
    _family(fac, 1, 4, -1, -1, cutoff)   # xp^2/q
    return ProductForm(0, None, fac, sprec=cutoff)


def g_ratio(m: Monomial) -> FactoredScalar:
    """(1 - mq)(1 - mp/q) / ((1 - m)(1 - mp)): the total telescoping of
    f(x) f(xp) evaluated at x = m."""
    return FactoredScalar(1, 0, 0, [
        (Monomial(m.c, m.a2, m.b + 1), 1),
        (Monomial(m.c, m.a2 + 2, m.b - 1), 1),
        (m, -1),
        (Monomial(m.c, m.a2 + 2, m.b), -1),
    ])


def g_pf(cutoff: int) -> ProductForm:
    """``g_ratio`` with x symbolic: (1-xq)(1-xp/q)/((1-x)(1-xp)).

    A finite product, hence exact to all s-orders; the cutoff argument
    is accepted for uniformity with the infinite-product builders and
    ignored."""
    return ProductForm(0, None, (
        (mono(1, 0, 1), 1),
        (mono(1, 2, -1), 1),
        (mono(1, 0, 0), -1),
        (mono(1, 2, 0), -1),
    ), PREC_EXACT)


def _alpha_line() -> ProductForm:
    return ProductForm(0, None, ((mono(1, 2, 2), -1),), PREC_EXACT)


def alpha_minus_pf(cutoff: int) -> ProductForm:
    """Generating function of the non-positive quadratic-expansion
    weights: the x^l coefficient is the weight of index -l, l >= 0."""
    return f_pf(cutoff) * _alpha_line()


def alpha_plus_pf(cutoff: int) -> ProductForm:
    """Generating function of the positive quadratic-expansion weights:
    in the large-x expansion the x^-i coefficient is the weight of
    index i (consumers drop the duplicated i = 0 term)."""
    return f_pf(cutoff).invert_x() * _alpha_line()


_SERIES = {
    "f": f_pf,
    "g": g_pf,
    "S_TT": S_TT_pf,
    "F1": F1_pf,
    "F2": F2_pf,
    "alpha+": alpha_plus_pf,
    "alpha-": alpha_minus_pf,
}


def structure_series(name: str, cutoff: int) -> ProductForm:
    """Look up a named structure series at the given truncation cutoff."""
    try:
        builder = _SERIES[name]
    except KeyError:
        raise UnknownSeries(
            f"no structure series named {name!r}; "
            f"known: {', '.join(sorted(_SERIES))}"
        ) from None
    return builder(cutoff)
