"""Bosonic Fock module over the deformed oscillator algebra.

One oscillator lambda_m per nonzero integer m with central bracket

    [lambda_m, lambda_-m] = kappa_m  (m > 0),
    kappa_m = -(1 - q^m)(1 - p^m q^-m) / (m (1 + p^m)),

all other brackets zero, and lambda_0 acting trivially on the vacuum
module.  Basis states are indexed by partitions: the state for
mu = (mu_1 >= mu_2 >= ...) is prod_i lambda_{-mu_i} applied to the
vacuum, of degree |mu|.  Vectors carry truncated-series coefficients;
the pairing used throughout is the basis-coefficient functional (norms
cancel identically in every identity this engine checks, so none are
attached).
"""

from __future__ import annotations

from functools import lru_cache
from itertools import product as _iproduct

from .ring import FactoredScalar, Q, Scalar, mono

#: A partition is a descending tuple of positive part sizes.
Partition = tuple

VACUUM: Partition = ()


def partition(parts) -> Partition:
    """Normalize an iterable of positive parts to descending order."""
    t = tuple(sorted(parts, reverse=True))
    if any(p <= 0 for p in t):
        raise ValueError(f"partition parts must be positive: {t}")
    return t


def degree(mu: Partition) -> int:
    return sum(mu)


def mults(mu: Partition) -> dict:
    out: dict = {}
    for part in mu:
        out[part] = out.get(part, 0) + 1
    return out


@lru_cache(maxsize=None)
def partitions_of(n: int, max_part: int | None = None) -> tuple:
    """All partitions of n (descending tuples), largest part capped."""
    if n < 0:
        return ()
    if n == 0:
        return (VACUUM,)
    cap = n if max_part is None else min(max_part, n)
    out = []
    for first in range(cap, 0, -1):
        for rest in partitions_of(n - first, first):
            out.append((first,) + rest)
    return tuple(out)


def sub_multisets(mu: Partition):
    """All sub-multisets of mu as dicts {part: count}, vacuum included."""
    ms = mults(mu)
    parts = sorted(ms)
    for counts in _iproduct(*[range(ms[p] + 1) for p in parts]):
        yield {p: c for p, c in zip(parts, counts) if c}


def remove_parts(mu: Partition, nu: dict) -> Partition:
    """mu with the sub-multiset nu removed (caller guarantees nu <= mu)."""
    left = mults(mu)
    for p, c in nu.items():
        left[p] -= c
    out = []
    for p, c in left.items():
        out.extend([p] * c)
    return tuple(sorted(out, reverse=True))


def kappa_exact(m: int) -> FactoredScalar:
    """The central bracket value kappa_m, exact:

        kappa_m = -(1/m) (1 - q^m)(1 - s^{2m} q^{-m}) / (1 + s^{2m}).
    """
    if m <= 0:
        raise ValueError("kappa is defined for positive mode index")
    return FactoredScalar(Q(-1, m), 0, 0, [
        (mono(1, 0, m), 1),
        (mono(1, 2 * m, -m), 1),
        (mono(-1, 2 * m, 0), -1),
    ])


def kappa(m: int, prec: int) -> Scalar:
    """kappa_m expanded to the working window."""
    return kappa_exact(m).expand(prec)


class FockVector:
    """A finite linear combination of partition basis states with
    ``Scalar`` coefficients.  Zero coefficients are dropped eagerly."""

    __slots__ = ("c",)

    def __init__(self, c: dict | None = None):
        self.c = {mu: v for mu, v in (c or {}).items() if not v.is_zero()}

    @staticmethod
    def vacuum(prec: int) -> "FockVector":
        return FockVector({VACUUM: Scalar.one(prec)})

    @staticmethod
    def basis(mu: Partition, prec: int) -> "FockVector":
        return FockVector({partition(mu): Scalar.one(prec)})

    def coeff(self, mu: Partition) -> Scalar | None:
        return self.c.get(mu)

    def is_zero(self) -> bool:
        return not self.c

    def __add__(self, other: "FockVector") -> "FockVector":
        out = dict(self.c)
        for mu, v in other.c.items():
            w = out.get(mu)
            out[mu] = v if w is None else w + v
        return FockVector(out)

    def __neg__(self) -> "FockVector":
        return FockVector({mu: -v for mu, v in self.c.items()})

    def __sub__(self, other: "FockVector") -> "FockVector":
        return self + (-other)

    def scale(self, s: Scalar) -> "FockVector":
        return FockVector({mu: v * s for mu, v in self.c.items()})

    def scale_mono(self, c, a2: int = 0, b: int = 0) -> "FockVector":
        return FockVector(
            {mu: v.mul_mono(c, a2, b) for mu, v in self.c.items()})

    def degrees(self) -> set:
        return {degree(mu) for mu in self.c}

    def __repr__(self) -> str:
        if not self.c:
            return "FockVector(0)"
        bits = [f"{mu}: {v!r}" for mu, v in sorted(self.c.items())]
        return "FockVector({" + ", ".join(bits) + "})"


def pair(mu: Partition, vec: FockVector, prec: int) -> Scalar:
    """Basis-coefficient functional: the coefficient of the state mu."""
    v = vec.c.get(partition(mu))
    return v if v is not None else Scalar.zero(prec)
