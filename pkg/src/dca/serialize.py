"""Canonical JSON forms for engine objects, plus the on-disk field cache.

Every encoder produces data built only from sorted, plain JSON types so
that encoding is deterministic: identical objects give identical byte
strings under ``json.dumps(..., sort_keys=True)``.  Decoders invert the
encoders exactly; encode-decode-encode is the identity on payloads.

Rationals are written as ``"numerator/denominator"`` strings, rational
functions of q as two coefficient arrays (with a base exponent each),
series as a contiguous coefficient array starting at ``lower``, and
factored quantities by their factor lists.
"""

from __future__ import annotations

import json
import os
import re
import tempfile

from .errors import DcaError
from .fields import ExpFactor, Field, FieldTerm
from .fock import FockVector, partition
from .ring import (
    FactoredScalar,
    Monomial,
    ProductForm,
    Q,
    QRat,
    Scalar,
)


class MalformedPayload(DcaError):
    """A JSON payload does not match the expected canonical schema."""


# ---------------------------------------------------------------------------
# rationals
# ---------------------------------------------------------------------------


def rat_to_json(c) -> str:
    c = Q(c)
    return f"{c.numerator}/{c.denominator}"


def rat_from_json(s: str):
    try:
        return Q(s)
    except (ValueError, ZeroDivisionError) as exc:
        raise MalformedPayload(f"bad rational {s!r}") from exc


def _poly_to_json(a: dict) -> list:
    """A Laurent polynomial in q as [base exponent, [coefficients]]."""
    if not a:
        return [0, []]
    lo = min(a)
    hi = max(a)
    return [lo, [rat_to_json(a.get(k, Q(0))) for k in range(lo, hi + 1)]]


def _poly_from_json(data: list) -> dict:
    lo, cs = data
    out = {}
    for i, s in enumerate(cs):
        c = rat_from_json(s)
        if c:
            out[lo + i] = c
    return out


def qrat_to_json(r: QRat) -> dict:
    return {"num": _poly_to_json(r.n), "den": _poly_to_json(r.d)}


def qrat_from_json(data: dict) -> QRat:
    den = _poly_from_json(data["den"])
    if not den:
        raise MalformedPayload("rational function with zero denominator")
    return QRat(_poly_from_json(data["num"]), den)


# ---------------------------------------------------------------------------
# scalars
# ---------------------------------------------------------------------------


def scalar_to_json(s: Scalar) -> dict:
    if not s.c:
        return {"lower": 0, "prec": s.prec, "coeffs": []}
    lo = min(s.c)
    hi = max(s.c)
    zero = QRat.const(0)
    return {
        "lower": lo,
        "prec": s.prec,
        "coeffs": [qrat_to_json(s.c.get(k, zero)) for k in range(lo, hi + 1)],
    }


def scalar_from_json(data: dict) -> Scalar:
    lo = data["lower"]
    out = {}
    for i, payload in enumerate(data["coeffs"]):
        r = qrat_from_json(payload)
        if not r.is_zero():
            out[lo + i] = r
    return Scalar(out, data["prec"])


def monomial_to_json(m: Monomial) -> dict:
    return {"c": rat_to_json(m.c), "a2": m.a2, "b": m.b}


def monomial_from_json(data: dict) -> Monomial:
    return Monomial(rat_from_json(data["c"]), data["a2"], data["b"])


def fs_to_json(fs: FactoredScalar) -> dict:
    factors = [
        {"c": rat_to_json(m.c), "a2": m.a2, "b": m.b, "e": e}
        for m, e in sorted(fs.f.items(), key=lambda kv: (kv[0].a2, kv[0].b,
                                                         kv[0].c, kv[1]))
    ]
    return {"c": rat_to_json(fs.c), "a2": fs.a2, "b": fs.b,
            "factors": factors}


def fs_from_json(data: dict) -> FactoredScalar:
    return FactoredScalar(
        rat_from_json(data["c"]), data["a2"], data["b"],
        [(Monomial(rat_from_json(f["c"]), f["a2"], f["b"]), f["e"])
         for f in data["factors"]],
    )


def pf_to_json(pf: ProductForm) -> dict:
    factors = [
        {"c": rat_to_json(m.c), "a2": m.a2, "b": m.b, "e": e}
        for m, e in sorted(pf.f.items(), key=lambda kv: (kv[0].a2, kv[0].b,
                                                         kv[0].c, kv[1]))
    ]
    return {"xpow": pf.xpow, "unit": fs_to_json(pf.unit),
            "factors": factors, "prec": pf.sprec}


def pf_from_json(data: dict) -> ProductForm:
    return ProductForm(
        data["xpow"], fs_from_json(data["unit"]),
        [(Monomial(rat_from_json(f["c"]), f["a2"], f["b"]), f["e"])
         for f in data["factors"]],
        data["prec"],
    )


# ---------------------------------------------------------------------------
# the Fock module
# ---------------------------------------------------------------------------


def partition_to_json(mu: tuple) -> list:
    return list(mu)


def partition_from_json(data: list) -> tuple:
    return partition(data)


def vector_to_json(vec: FockVector) -> dict:
    return {
        "basis": [
            [list(mu), scalar_to_json(vec.c[mu])]
            for mu in sorted(vec.c)
        ]
    }


def vector_from_json(data: dict) -> FockVector:
    out = {}
    for parts, payload in data["basis"]:
        out[partition(parts)] = scalar_from_json(payload)
    return FockVector(out)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


def field_to_json(field: Field, prec: int) -> dict:
    """A field as a term list.

    Each term records the exponential factors (inverse flag, shift
    monomial, derivative order), the exact factored coefficient under
    ``prefactor``, and its expanded series view under ``coefficient``
    for direct inspection at the given window.
    """
    terms = []
    for t in field.terms:
        terms.append({
            "coefficient": scalar_to_json(t.coeff.expand(prec)),
            "factors": [
                {"inverse": f.eps < 0,
                 "shift": monomial_to_json(f.arg),
                 "derivOrder": f.deriv}
                for f in t.no
            ],
            "prefactor": fs_to_json(t.coeff),
        })
    return {"name": field.name, "warnings": sorted(field.warnings),
            "terms": terms}


def field_from_json(data: dict) -> Field:
    terms = []
    for t in data["terms"]:
        no = tuple(
            ExpFactor(-1 if f["inverse"] else 1,
                      monomial_from_json(f["shift"]),
                      f.get("derivOrder", 0))
            for f in t["factors"]
        )
        terms.append(FieldTerm(fs_from_json(t["prefactor"]), no))
    return Field(terms, data.get("name", ""),
                 tuple(data.get("warnings", ())))


# ---------------------------------------------------------------------------
# the cache
# ---------------------------------------------------------------------------

_SAFE = re.compile(r"[^A-Za-z0-9._-]")


def default_cache_dir() -> str:
    env = os.environ.get("DCA_CACHE_DIR")
    if env:
        return env
    return os.path.join(os.path.expanduser("~"), ".cache", "dca")


def cache_path(cdir: str, name: str, p_order: int, buffer: int) -> str:
    """Cache file for a named object at a (p_order, buffer) truncation.
    Payloads from one truncation are never reused at another."""
    safe = _SAFE.sub("_", name)
    return os.path.join(cdir, f"{safe}__K{p_order}_B{buffer}.json")


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def cache_write(path: str, obj) -> None:
    """Write atomically: a temp file in the target directory is renamed
    into place, so readers never observe partial payloads."""
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(dumps_canonical(obj))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cache_read(path: str):
    with open(path) as fh:
        return json.load(fh)
