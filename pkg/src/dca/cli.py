"""Command line driver.

Subcommands
-----------
``series``    print a named structure function's product form and its
              expansion table.
``contract``  print the pairwise contraction kernels of two fields.
``ope``       classify the pole lines of a two-field product and write
              the residue field at each pole to the cache.
``fuse``      build the iterated-residue tower in one direction and
              write the fields to the cache.
``verify``    run one of the named verification sweeps and emit its
              report (exit 0 verified / 1 failed / 2 error).
``limit``     print the classical limit of a preset field.
``cache``     inspect or clear the on-disk cache.

All output is deterministic for a fixed invocation: factors, table rows
and JSON keys are canonically ordered, and wall time is the only field
that varies between runs of a verification.
"""

import argparse
import os
import sys

from . import serialize
from .errors import DcaError
from .fields import wick_expand, ope_residue, pole_gammas
from .qseries import structure_series
from .relations import (  # noqa: F401  (RunConfig re-exported on purpose)
    RunConfig,
    RunContext,
    classical_limit,
    fusion_tower,
    verify_exchange,
    verify_limits,
    verify_relation,
    verify_skao,
    verify_triple_residue,
    verify_ttilde,
    verify_closure,
)
from .ring import m_str, mono

SERIES_NAMES = ("F1", "F2", "S_TT", "alpha+", "alpha-", "f", "g")
FIELD_HELP = "T, T2q, T2pq, Ttilde, Omega, Tn:q:k or Tn:pq:k"
RELATIONS = ("F1", "F2-ttilde", "alt", "closure", "exchange", "limits",
             "odin", "skao", "triple")


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--p-order", type=int, default=6, metavar="K",
                   help="comparison window: series agree through p**K")
    p.add_argument("--buffer", type=int, default=4, metavar="B",
                   help="extra line-family margin beyond the window")
    p.add_argument("--degree", type=int, default=4, metavar="D",
                   help="maximal degree of swept basis states")
    p.add_argument("--mode-window", type=int, default=4, metavar="M",
                   help="swept mode indices run over [-M, M]")
    p.add_argument("--x-order", type=int, default=16, metavar="X",
                   help="expansion order in the ratio variable")
    p.add_argument("--format", choices=("text", "json"), default="text",
                   help="output format")
    p.add_argument("--cache-dir", default=None, metavar="DIR",
                   help="cache directory (default: $DCA_CACHE_DIR or "
                        "~/.cache/dca)")


def _config(args) -> RunConfig:
    # the sweep bounds only drive `verify`; elsewhere they are zeroed so
    # that a small --x-order never trips the sweep-consistency invariant
    sweeping = args.command == "verify"
    return RunConfig(
        p_order=args.p_order,
        buffer=args.buffer,
        degree=args.degree if sweeping else 0,
        mode_window=args.mode_window if sweeping else 0,
        x_order=args.x_order,
        out_format=args.format,
        cache_dir=args.cache_dir or serialize.default_cache_dir(),
    )


def _field_context(config: RunConfig) -> RunContext:
    """Context for cacheable field construction.

    The line cutoff must depend only on (p_order, buffer) so that a
    cache entry keyed by them is reproducible from any invocation."""
    return RunContext(config, cut=config.cutoff)


def _emit(text: str) -> None:
    sys.stdout.write(text + "\n")


def _emit_json(obj) -> None:
    _emit(serialize.dumps_canonical(obj))


# ---------------------------------------------------------------------------
# text rendering
# ---------------------------------------------------------------------------


def _poly_text(d: dict) -> str:
    """A sparse q-Laurent polynomial, ascending exponents."""
    if not d:
        return "0"
    bits = []
    for e in sorted(d):
        c = d[e]
        if e == 0:
            t = str(c)
        else:
            base = "q" if e == 1 else f"q^{e}"
            if c == 1:
                t = base
            elif c == -1:
                t = "-" + base
            else:
                t = f"{c}*{base}"
        bits.append(t)
    out = bits[0]
    for t in bits[1:]:
        out += (" - " + t[1:]) if t.startswith("-") else (" + " + t)
    return out


def _qrat_text(r) -> str:
    num = _poly_text(r.n)
    if len(r.d) == 1 and 0 in r.d and r.d[0] == 1:
        return num
    return f"({num})/({_poly_text(r.d)})"


def _scalar_text(s) -> str:
    """A truncated s-series with q-rational coefficients; even s-orders
    are displayed as powers of p."""
    if not s.c:
        return "0"
    bits = []
    for k in sorted(s.c):
        ct = _qrat_text(s.c[k])
        if k == 0:
            bits.append(ct)
            continue
        if k % 2 == 0:
            base = "p" if k == 2 else f"p^{k // 2}"
        else:
            base = "s" if k == 1 else f"s^{k}"
        if ("+" in ct or " - " in ct or ct.startswith("(")
                or "*" in ct or "/" in ct):
            bits.append(f"{base}*({ct})")
        elif ct == "1":
            bits.append(base)
        elif ct == "-1":
            bits.append("-" + base)
        else:
            bits.append(f"{base}*{ct}")
    out = bits[0]
    for t in bits[1:]:
        out += (" - " + t[1:]) if t.startswith("-") else (" + " + t)
    return out


def _no_text(no: tuple) -> str:
    if not no:
        return "Id"
    return " ".join(
        f"E({f.eps:+d},{m_str(f.arg)})" + (f"'{f.deriv}" if f.deriv else "")
        for f in no)


def _factors_json(no: tuple) -> list:
    return [{"inverse": f.eps < 0,
             "shift": serialize.monomial_to_json(f.arg),
             "derivOrder": f.deriv} for f in no]


# ---------------------------------------------------------------------------
# series
# ---------------------------------------------------------------------------


def cmd_series(args, config: RunConfig) -> int:
    pf = structure_series(args.name, config.cutoff)
    direction = "1/x" if args.name == "alpha+" else "x"
    table = pf.expand(config.x_order, config.window, direction)
    if config.out_format == "json":
        _emit_json({
            "name": args.name,
            "cutoff": config.cutoff,
            "direction": direction,
            "window": config.window,
            "productForm": serialize.pf_to_json(pf),
            "expansion": {str(l): serialize.scalar_to_json(v)
                          for l, v in table.items()},
        })
        return 0
    _emit(f"series {args.name}  cutoff={config.cutoff}"
          f"  window=O(s^{config.window})")
    _emit(repr(pf))
    _emit("")
    for l in sorted(table):
        label = f"x^-{l}" if direction == "1/x" and l else f"x^{l}"
        _emit(f"  {label}: {_scalar_text(table[l])}")
    return 0


# ---------------------------------------------------------------------------
# contract / ope
# ---------------------------------------------------------------------------


def cmd_contract(args, config: RunConfig) -> int:
    ctx = _field_context(config)
    A = ctx.field(args.field_a)
    B = ctx.field(args.field_b)
    pe = wick_expand([A, B], ctx.cut)
    if config.out_format == "json":
        _emit_json({
            "fieldA": args.field_a,
            "fieldB": args.field_b,
            "cutoff": ctx.cut,
            "terms": [{
                "coefficient": serialize.fs_to_json(t.coeff),
                "slots": [_factors_json(no) for no in t.nos],
                "kernel": serialize.pf_to_json(t.cfun[(0, 1)]),
            } for t in pe.terms],
        })
        return 0
    _emit(f"contract {args.field_a} {args.field_b}  cutoff={ctx.cut}")
    for i, t in enumerate(pe.terms):
        _emit(f"  term {i}: coeff {t.coeff!r}")
        _emit(f"    slots: {' | '.join(_no_text(no) for no in t.nos)}")
        _emit(f"    kernel: {t.cfun[(0, 1)]!r}")
    return 0


def _gamma_tag(gamma) -> str:
    bits = []
    if gamma.c != 1:
        bits.append(str(gamma.c))
    bits.extend([str(gamma.a2), str(gamma.b)])
    return "_".join(bits)


def cmd_ope(args, config: RunConfig) -> int:
    ctx = _field_context(config)
    A = ctx.field(args.field_a)
    B = ctx.field(args.field_b)
    pe = wick_expand([A, B], ctx.cut)
    poles = pole_gammas(pe)
    entries = []
    for gamma in poles:
        res = ope_residue(pe, gamma)
        name = f"ope_{args.field_a}_{args.field_b}_res_{_gamma_tag(gamma)}"
        path = serialize.cache_path(config.cache_dir, name,
                                    config.p_order, config.buffer)
        serialize.cache_write(path, serialize.field_to_json(
            res, config.window))
        entries.append((gamma, res, path))
    if config.out_format == "json":
        _emit_json({
            "fieldA": args.field_a,
            "fieldB": args.field_b,
            "cutoff": ctx.cut,
            "poles": [{
                "gamma": serialize.monomial_to_json(g),
                "exponents": [g.a2, g.b],
                "residue": serialize.field_to_json(r, config.window),
                "cachePath": p,
            } for g, r, p in entries],
        })
        return 0
    _emit(f"ope {args.field_a} {args.field_b}  cutoff={ctx.cut}")
    if not entries:
        _emit("  no poles")
        return 0
    for g, r, p in entries:
        pair = f"({g.a2}, {g.b})" if g.c == 1 else \
            f"({g.c}, {g.a2}, {g.b})"
        _emit(f"  pole {pair}: z = w*{m_str(g)}  "
              f"residue terms={len(r.terms)}  -> {p}")
    return 0


# ---------------------------------------------------------------------------
# fuse
# ---------------------------------------------------------------------------


def cmd_fuse(args, config: RunConfig) -> int:
    direction = "q" if args.direction == "q" else "p/q"
    ctx = _field_context(config)
    tower = fusion_tower(args.steps, direction, config, ctx)
    paths = []
    for k, F in enumerate(tower.fields, start=1):
        name = f"fuse_{args.direction}_{k}"
        path = serialize.cache_path(config.cache_dir, name,
                                    config.p_order, config.buffer)
        serialize.cache_write(path, serialize.field_to_json(
            F, config.window))
        paths.append(path)
    if config.out_format == "json":
        _emit_json({
            "direction": args.direction,
            "steps": args.steps,
            "fields": [serialize.field_to_json(F, config.window)
                       for F in tower.fields],
            "prefactors": [serialize.fs_to_json(fs)
                           for fs in tower.prefactors],
            "coeffs": {f"{n}:{i}": serialize.fs_to_json(c)
                       for (n, i), c in tower.coeffs.items()},
            "cachePaths": paths,
        })
        return 0
    _emit(f"fuse {args.direction}  steps={args.steps}")
    for k, F in enumerate(tower.fields, start=1):
        _emit(f"  step {k}: terms={len(F.terms)}  -> {paths[k - 1]}")
        if k >= 2:
            _emit(f"    prefactor: {tower.prefactors[k - 1]!r}")
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _combine_reports(name, r1, r2):
    from .relations import VerificationReport
    if "error" in (r1.status, r2.status):
        status = "error"
    elif r1.verified and r2.verified:
        status = "verified"
    else:
        status = "failed"
    return VerificationReport(
        relation=name,
        params=dict(r1.params),
        status=status,
        checks=r1.checks + r2.checks,
        witness=r1.witness or r2.witness,
        wall_time_ms=r1.wall_time_ms + r2.wall_time_ms,
        flags=list(r1.flags) + list(r2.flags),
    )


def run_verify(relation: str, config: RunConfig):
    """Dispatch one named verification; returns its report."""
    if relation == "skao":
        return verify_skao(config)
    if relation in ("odin", "alt", "F1"):
        return verify_relation(relation, config)
    if relation == "F2-ttilde":
        r1 = verify_relation("F2", config)
        r2 = verify_ttilde(config)
        return _combine_reports("F2-ttilde", r1, r2)
    if relation == "exchange":
        return verify_exchange(config)
    if relation == "triple":
        return verify_triple_residue(mono(1, 0, 1), mono(1, 0, 1), "1",
                                     config)
    if relation == "closure":
        return verify_closure(config)
    if relation == "limits":
        return verify_limits(config)
    raise DcaError(f"no verification named {relation!r}; "
                   f"known: {', '.join(RELATIONS)}")


def cmd_verify(args, config: RunConfig) -> int:
    report = run_verify(args.relation, config)
    if config.out_format == "json":
        _emit_json(report.to_dict())
    else:
        _emit(f"relation: {report.relation}")
        _emit(f"status: {report.status}")
        _emit(f"checks: {report.checks}")
        _emit("params: " + " ".join(
            f"{k}={v}" for k, v in sorted(report.params.items())))
        for fl in report.flags:
            _emit(f"flag: {fl}")
        if report.witness is not None:
            _emit("witness: " + serialize.dumps_canonical(report.witness))
        _emit(f"wall_time_ms: {report.wall_time_ms}")
    if report.status == "verified":
        return 0
    if report.status == "failed":
        return 1
    return 2


# ---------------------------------------------------------------------------
# limit
# ---------------------------------------------------------------------------


def cmd_limit(args, config: RunConfig) -> int:
    ctx = _field_context(config)
    F = ctx.field(args.field)
    target = "p" if args.target in ("p", "q:=p") else "1"
    L = classical_limit(F, target)
    if config.out_format == "json":
        _emit_json({
            "field": args.field,
            "target": target,
            "limit": serialize.field_to_json(L, config.window),
        })
        return 0
    _emit(f"limit {args.field}  q := {target}")
    for t in L.terms:
        _emit(f"  [{t.coeff!r}] {_no_text(t.no)}")
    return 0


# ---------------------------------------------------------------------------
# cache
# ---------------------------------------------------------------------------


def cmd_cache(args, config: RunConfig) -> int:
    cdir = config.cache_dir
    if args.action == "path":
        if config.out_format == "json":
            _emit_json({"cacheDir": cdir})
        else:
            _emit(cdir)
        return 0
    entries = []
    if os.path.isdir(cdir):
        entries = sorted(e for e in os.listdir(cdir) if e.endswith(".json"))
    if args.action == "list":
        if config.out_format == "json":
            _emit_json({"cacheDir": cdir, "entries": entries})
        else:
            _emit(f"cache {cdir}: {len(entries)} entries")
            for e in entries:
                _emit(f"  {e}")
        return 0
    # clear
    for e in entries:
        os.unlink(os.path.join(cdir, e))
    if config.out_format == "json":
        _emit_json({"cacheDir": cdir, "removed": len(entries)})
    else:
        _emit(f"removed {len(entries)} entries from {cdir}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="dca",
        description="Exact engine for a deformed chiral algebra: "
                    "series, operator products, fusion and verification.")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("series", help="print a structure function")
    p.add_argument("name", choices=SERIES_NAMES)
    _add_common(p)
    p.set_defaults(func=cmd_series)

    p = sub.add_parser("contract", help="pairwise contraction kernels")
    p.add_argument("field_a", help=FIELD_HELP)
    p.add_argument("field_b", help=FIELD_HELP)
    _add_common(p)
    p.set_defaults(func=cmd_contract)

    p = sub.add_parser("ope", help="pole lines and residue fields")
    p.add_argument("field_a", help=FIELD_HELP)
    p.add_argument("field_b", help=FIELD_HELP)
    _add_common(p)
    p.set_defaults(func=cmd_ope)

    p = sub.add_parser("fuse", help="iterated-residue tower")
    p.add_argument("direction", choices=("q", "pq"))
    p.add_argument("--steps", type=int, default=3)
    _add_common(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("verify", help="run a verification sweep")
    p.add_argument("relation", choices=RELATIONS)
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("limit", help="classical limit of a field")
    p.add_argument("field", help=FIELD_HELP)
    p.add_argument("target", choices=("p", "1"))
    _add_common(p)
    p.set_defaults(func=cmd_limit)

    p = sub.add_parser("cache", help="inspect or clear the cache")
    p.add_argument("action", choices=("path", "list", "clear"))
    _add_common(p)
    p.set_defaults(func=cmd_cache)

    return top


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _config(args)
        return args.func(args, config)
    except DcaError as exc:
        if getattr(args, "format", "text") == "json":
            _emit_json({"status": "error",
                        "errorType": type(exc).__name__,
                        "error": str(exc)})
        else:
            _emit(f"error: {exc}")
        return 2
    except (ValueError, OSError) as exc:
        if getattr(args, "format", "text") == "json":
            _emit_json({"status": "error",
                        "errorType": type(exc).__name__,
                        "error": str(exc)})
        else:
            _emit(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
