"""Shared oracle helpers for the test suite.

These are independent constructions (exponential of the bracket
generating series, hand-built closed forms) used to check the engine's
product-form machinery; they deliberately avoid the code paths they
test.
"""

from dca.ring import Q, Scalar


def exp_x_series(a: dict, top: int, prec: int) -> dict:
    """exp(sum_{m>=1} a[m] x^m) through x^top, Scalar coefficients,
    via the derivative recursion E_l = (1/l) sum_k k a_k E_{l-k}."""
    E = {0: Scalar.one(prec)}
    for l in range(1, top + 1):
        acc = Scalar.zero(prec)
        for k in range(1, l + 1):
            if k in a and (l - k) in E:
                acc = acc + (a[k] * E[l - k]).mul_mono(Q(k, l), 0, 0)
        E[l] = acc
    return E


def bracket_log_coeffs(top: int, prec: int) -> dict:
    """a_m = (1-q^m)(1-p^m q^-m)/(m (1+p^m)) as Scalars: the positive
    log coefficients of the kernel f."""
    out = {}
    for m in range(1, top + 1):
        one = Scalar.one(prec)
        num = (one - Scalar.monomial(1, 0, m, prec)) * \
              (one - Scalar.monomial(1, 2 * m, -m, prec))
        den = one + Scalar.monomial(1, 2 * m, 0, prec)
        out[m] = (num * den.inv()).mul_mono(Q(1, m), 0, 0)
    return out
