"""Exception types shared across the engine.

Every error raised on purpose by this package derives from DcaError, so
callers (and the command line driver) can distinguish a mathematically
meaningful failure from a plain bug.
"""


class DcaError(Exception):
    """Base class for all engine errors."""


class InversionOfZero(DcaError):
    """Attempt to invert a series or rational object that is exactly zero
    (or indistinguishable from zero at the working precision)."""


class PoleAtSubstitution(DcaError):
    """A substitution (for example q := p or q := 1) hit a pole: more
    vanishing factors in the denominator than in the numerator."""


class NonterminatingProduct(DcaError):
    """An infinite product/sum failed to terminate within the requested
    truncation window; usually means a precision parameter is too small."""


class UnsupportedDerivative(DcaError):
    """An operation received an exponential factor carrying a formal
    derivative, which the closed-form contraction rules do not cover."""


class HigherOrderPole(DcaError):
    """A residue was requested at a pole of order greater than one; the
    simple-pole extraction rule does not apply."""


class NonScalarExchange(DcaError):
    """The candidate exchange function differs between term pairs, so the
    two-point exchange is not given by a single scalar function."""


class RecursionMismatch(DcaError):
    """A quantity computed two independent ways (closed form versus
    recursion, or direct versus folded) failed to agree."""


class SpecInconsistent(DcaError):
    """A user-supplied relation description is internally inconsistent,
    e.g. its splitting pair does not reproduce the exchange function."""


class UnknownSeries(DcaError):
    """Request for a named structure series this engine does not define."""


class UnknownField(DcaError):
    """Request for a named field preset this engine does not define."""
