"""Exact engine for a deformed chiral algebra realized in free fields.

Subpackages, cheapest layer first:

- ``ring``      layered coefficient arithmetic (q-rationals, s-series,
                factored scalars, factored functions of x)
- ``qseries``   named structure series, theta/Pochhammer product forms,
                delta-function supports
- ``fock``      bosonic Fock module: partitions, states, mode actions
- ``fields``    normally ordered exponential fields, contractions,
                operator-product expansion, residues, exchange functions
- ``relations`` end-to-end verifiers for the algebra's identities
- ``serialize`` canonical JSON forms and the on-disk series cache
- ``cli``       the ``dca`` command line driver
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    DcaError,
    HigherOrderPole,
    InversionOfZero,
    NonScalarExchange,
    NonterminatingProduct,
    PoleAtSubstitution,
    RecursionMismatch,
    SpecInconsistent,
    UnknownField,
    UnknownSeries,
    UnsupportedDerivative,
)
