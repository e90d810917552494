"""Command line entry point ``projgm``.

Subcommands: ``feasible``, ``bounds``, ``compare`` and ``sample``. Exit
codes: 0 success, 2 input error, 3 negative feasibility verdict, 4 solver
failure. Reports are JSON with a fixed key order; wall-clock times are only
included with ``--timings`` so that repeated runs are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import keshavarz
from .core import InfeasibleBasis, InfeasiblePoint, SolverFailure, validate
from .lower import LowerOptions, lower_bound
from .optima import check_feasibility, kappa_c, kkt_point, sample_optima
from .oracle import GridSpec, GridTooLarge, grid_distance
from .problem_io import ProblemFormatError, load, sha256
from .upper import SearchOptions, upper_bound

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_INPUT", "EXIT_NEGATIVE", "EXIT_SOLVER"]

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NEGATIVE = 3
EXIT_SOLVER = 4
REPORT_FORMAT = "pgm-report/1"
COMPARE_COLUMNS = ["sample_index", "d_lmi", "d_projgm", "d_keshavarz", "d_oracle", "rank1_flag"]


class InputError(Exception):
    pass


def _num(v):
    """JSON-safe float: non-finite values become ``null``."""
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _vec(v):
    return [_num(t) for t in np.asarray(v, dtype=float).ravel()]


def _sqrt(v):
    return None if v is None else math.sqrt(max(v, 0.0))


def _load(path):
    try:
        instance, raw = load(path)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except ProblemFormatError as exc:
        raise InputError(str(exc)) from exc
    violations = validate(instance)
    if violations:
        raise InputError("; ".join(str(v) for v in violations))
    return instance, raw


def _header(command, instance, raw, flags):
    P = instance.polytope
    return {
        "format": REPORT_FORMAT,
        "command": command,
        "input_sha256": sha256(raw),
        "mode": instance.mode.value,
        "n": instance.n,
        "m": instance.m,
        "q": P.q if P is not None else 0,
        "r": P.r if P is not None else 0,
        "flags": flags,
    }


def _emit(text: str, output):
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def _json(report) -> str:
    return json.dumps(report, indent=2, allow_nan=False) + "\n"


def _search_options(args) -> SearchOptions:
    return SearchOptions(multistarts=args.multistarts, seed=args.seed, grid_resolution=args.grid_resolution)


def _lower_options(args) -> LowerOptions:
    return LowerOptions(tol=args.tol, mu_bound=args.mu_bound)


def _run_upper(instance, args):
    try:
        up = upper_bound(instance, _search_options(args))
    except SolverFailure as exc:
        return None, {"status": "failed", "message": str(exc), **_clean(exc.diagnostics)}
    return up, {"status": "ok", "converged_starts": up.converged_starts, **_clean(up.stats)}


def _run_lower(instance, args):
    try:
        low = lower_bound(instance, _lower_options(args))
    except InfeasibleBasis as exc:
        return None, {"status": "infeasible_basis", "message": str(exc)}
    except SolverFailure as exc:
        return None, {"status": "failed", "message": str(exc), **_clean(exc.diagnostics)}
    stats = _clean(low.stats)
    stats["solver_status"] = stats.pop("status")
    return low, {"status": "ok", **stats}


def _clean(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out[k] = _clean(v)
        elif isinstance(v, (bool, str)) or v is None:
            out[k] = v
        elif isinstance(v, (int, np.integer)):
            out[k] = int(v)
        else:
            out[k] = _num(v)
    return out


# ----------------------------------------------------------------- feasible


def cmd_feasible(args) -> int:
    instance, raw = _load(args.input)
    flags = {"tol": args.tol}
    report = _header("feasible", instance, raw, flags)
    t0 = time.perf_counter()
    try:
        res = check_feasibility(instance, tol=args.tol)
    except InfeasiblePoint as exc:
        report["results"] = {
            "exactly_optimal": False,
            "reason": f"y is outside the polytope: {exc}",
            "alpha": None,
            "mu": None,
            "lambda": None,
            "residual": None,
            "scale": None,
        }
        code = EXIT_NEGATIVE
    except SolverFailure as exc:
        report["results"] = {"status": "failed", "message": str(exc)}
        _emit(_json(report), args.output)
        return EXIT_SOLVER
    else:
        report["results"] = {
            "exactly_optimal": res.exactly_optimal,
            "reason": None,
            "alpha": _vec(res.alpha.alpha),
            "mu": _vec(res.mu) if res.mu is not None else None,
            "lambda": _vec(res.lam) if res.lam is not None else None,
            "residual": _num(res.residual),
            "scale": _num(res.scale),
        }
        code = EXIT_OK if res.exactly_optimal else EXIT_NEGATIVE
    if args.timings:
        report["timings"] = {"feasibility": time.perf_counter() - t0}
    _emit(_json(report), args.output)
    return code


# ------------------------------------------------------------------- bounds


def cmd_bounds(args) -> int:
    instance, raw = _load(args.input)
    flags = {
        "tol": args.tol,
        "multistarts": args.multistarts,
        "seed": args.seed,
        "grid_resolution": args.grid_resolution,
        "mu_bound": args.mu_bound,
    }
    report = _header("bounds", instance, raw, flags)
    t0 = time.perf_counter()
    up, up_diag = _run_upper(instance, args)
    t1 = time.perf_counter()
    low, low_diag = _run_lower(instance, args)
    t2 = time.perf_counter()
    p_up = up.p_up if up is not None else None
    p_low = low.p_low if low is not None else None
    cert = low.certificate if low is not None else None
    certified = bool(cert.certified) if cert is not None else False
    results = {
        "p_low": _num(p_low),
        "p_up": _num(p_up),
        "sqrt_p_low": _num(_sqrt(p_low)),
        "sqrt_p_up": _num(_sqrt(p_up)),
        "sandwich_ok": (p_low <= p_up + 1e-6 * (1.0 + p_up)) if up and low else None,
        "alpha_up": _vec(up.alpha.alpha) if up else None,
        "x_up": _vec(up.x) if up else None,
        "rank1_certified": certified,
        "singular_ratio": _num(cert.singular_ratio) if cert is not None else None,
        "extracted": {"x": _vec(cert.extracted_x), "alpha": _vec(cert.extracted_alpha.alpha)}
        if certified
        else None,
    }
    report["results"] = results
    report["diagnostics"] = {"upper": up_diag, "lower": low_diag}
    if args.timings:
        report["timings"] = {"upper": t1 - t0, "lower": t2 - t1}
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["p_low", "p_up", "sqrt_p_low", "sqrt_p_up", "rank1_certified", "upper_status", "lower_status"]
        w.writerow(cols)
        w.writerow(
            [
                _fmt(results["p_low"]),
                _fmt(results["p_up"]),
                _fmt(results["sqrt_p_low"]),
                _fmt(results["sqrt_p_up"]),
                int(certified),
                up_diag["status"],
                low_diag["status"],
            ]
        )
        _emit(buf.getvalue(), args.output)
    else:
        _emit(_json(report), args.output)
    return EXIT_OK if up is not None and low is not None else EXIT_SOLVER


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


# ------------------------------------------------------------------ compare


def noisy_points(y, sigma: float, samples: int, seed: int) -> np.ndarray:
    """``y + sigma * z_i`` with ``z`` from ``numpy.random.default_rng(seed).standard_normal``.

    The generator is numpy's PCG64 bit generator with its ziggurat normal
    sampler, drawn as one ``(samples, n)`` array in row-major order.
    """
    z = np.random.default_rng(seed).standard_normal((samples, np.asarray(y).size))
    return np.asarray(y, dtype=float)[None, :] + sigma * z


def cmd_compare(args) -> int:
    instance, raw = _load(args.input)
    flags = {
        "tol": args.tol,
        "multistarts": args.multistarts,
        "seed": args.seed,
        "grid_resolution": args.grid_resolution,
        "mu_bound": args.mu_bound,
        "noise_sigma": args.noise_sigma,
        "samples": args.samples,
        "oracle": args.oracle,
    }
    report = _header("compare", instance, raw, flags)
    use_oracle = args.oracle and instance.m <= 6
    rows = []
    failures = []
    t0 = time.perf_counter()
    for i, y in enumerate(noisy_points(instance.y, args.noise_sigma, args.samples, args.seed)):
        point = instance.with_y(y)
        row = {"sample_index": i, "y": _vec(y)}
        try:
            up = upper_bound(point, _search_options(args))
            low = lower_bound(point, _lower_options(args))
            base = keshavarz(point)
            row.update(
                d_lmi=math.sqrt(low.p_low),
                d_projgm=math.sqrt(up.p_up),
                d_keshavarz=math.sqrt(base.distance_sq),
                d_oracle=math.sqrt(grid_distance(point, GridSpec()).p_grid) if use_oracle else None,
                rank1_flag=bool(low.certificate.certified),
            )
        except (SolverFailure, InfeasibleBasis, GridTooLarge) as exc:
            failures.append({"sample_index": i, "error": type(exc).__name__, "message": str(exc)})
            print(f"sample {i}: {type(exc).__name__}: {exc}", file=sys.stderr)
            continue
        rows.append(row)
    elapsed = time.perf_counter() - t0

    def mean(key):
        vals = [r[key] for r in rows if r[key] is not None]
        return float(np.mean(vals)) if vals else None

    means = {k: _num(mean(k)) for k in ("d_lmi", "d_projgm", "d_keshavarz", "d_oracle")}
    tol = 1e-6
    ordering = {
        "lmi_le_projgm": _le(means["d_lmi"], means["d_projgm"], tol),
        "keshavarz_ge_projgm": _le(means["d_projgm"], means["d_keshavarz"], tol),
        "lmi_le_oracle": _le(means["d_lmi"], means["d_oracle"], tol),
        "projgm_ge_oracle_minus_tol": _le(means["d_oracle"], means["d_projgm"], 1e-3),
    }
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COMPARE_COLUMNS)
        for r in rows:
            w.writerow(
                [
                    r["sample_index"],
                    _fmt(r["d_lmi"]),
                    _fmt(r["d_projgm"]),
                    _fmt(r["d_keshavarz"]),
                    _fmt(r["d_oracle"]),
                    int(r["rank1_flag"]),
                ]
            )
        _emit(buf.getvalue(), args.output)
    else:
        report["results"] = {
            "samples": args.samples,
            "succeeded": len(rows),
            "failed": len(failures),
            "means": means,
            "ordering": ordering,
            "points": [
                {k: (_num(v) if isinstance(v, float) else v) for k, v in r.items()} for r in rows
            ],
        }
        report["diagnostics"] = {"failures": failures, "oracle_used": bool(use_oracle)}
        if args.timings:
            report["timings"] = {"total": elapsed}
        _emit(_json(report), args.output)
    return EXIT_OK if rows or args.samples == 0 else EXIT_SOLVER


def _le(a, b, tol):
    if a is None or b is None:
        return None
    return bool(a <= b + tol)


# ------------------------------------------------------------------- sample


def cmd_sample(args) -> int:
    """Point cloud of optima: the basis vertices first, then Dirichlet draws.

    With ``--segments K`` the pairwise vertex-to-vertex weight paths are
    appended, each sampled at ``K`` evenly spaced points.
    """
    instance, raw = _load(args.input)
    m = instance.m
    if args.count < 1:
        raise InputError("--count must be >= 1")
    alphas = np.eye(m)[: args.count]
    extra = args.count - len(alphas)
    if extra > 0:
        alphas = np.vstack([alphas, np.random.default_rng(args.seed).dirichlet(np.ones(m), size=extra)])
    if args.segments:
        t = np.linspace(0.0, 1.0, args.segments)[:, None]
        E = np.eye(m)
        paths = [t * E[i] + (1 - t) * E[j] for i in range(m) for j in range(i + 1, m)]
        if paths:
            alphas = np.vstack([alphas] + paths)
    try:
        pairs = sample_optima(instance, len(alphas), args.seed, alphas=alphas)
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"alpha_{j + 1}" for j in range(m)] + [f"x_{i + 1}" for i in range(instance.n)] + ["residual"])
    for a, x in pairs:
        if instance.constrained:
            point, _ = kappa_c(instance, a)
            res = kkt_point(instance, x, a, point.mu, point.lam).residual
        else:
            res = kkt_point(instance, x, a).residual
        w.writerow([repr(float(v)) for v in a.alpha] + [repr(float(v)) for v in x] + [repr(float(res))])
    _emit(buf.getvalue(), args.output)
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="projgm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, tol_default, tol_help):
        p.add_argument("input", help="problem file (format pgm/1)")
        p.add_argument("--output", "-o", help="write the report here instead of stdout")
        p.add_argument("--tol", type=float, default=tol_default, help=tol_help)
        p.add_argument("--timings", action="store_true", help="include wall-clock times in the report")

    def search(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--multistarts", type=int, default=16)
        p.add_argument("--grid-resolution", type=float, default=0.05, help="simplex grid spacing (constrained mode)")
        p.add_argument("--mu-bound", type=float, default=None, help="cap on the multiplier second moments")
        p.add_argument("--format", choices=["json", "csv"], default="json")

    p = sub.add_parser("feasible", help="is y an exact optimum of some combined cost?")
    common(p, 1e-7, "exactness tolerance (relative to the problem scale)")
    p.set_defaults(func=cmd_feasible)

    p = sub.add_parser("bounds", help="bracket the squared distance from y to the optima set")
    common(p, 1e-8, "conic solver tolerance for the lower bound")
    search(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("compare", help="compare distance estimates on noisy copies of y")
    common(p, 1e-8, "conic solver tolerance for the lower bound")
    search(p)
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--oracle", action="store_true", help="also run the brute-force grid oracle (m <= 6)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sample", help="sample points of the optima set as CSV")
    p.add_argument("input", help="problem file (format pgm/1)")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--segments", type=int, default=0, help="points per pairwise vertex path")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
