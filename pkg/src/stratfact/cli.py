"""Command-line entry point: ``stratfact assign|analyze|simulate|region``.

Exit status is 0 on success, 2 on validation errors and 3 on numerical
singularity.  Errors are written to stderr as one JSON object.
"""

import argparse
import csv
import hashlib
import json
import logging
import sys

import numpy as np

from . import __version__
from .dataset import ingest_csv, summarize
from .design import AssignmentPlan, assign_treatments, build_design
from .errors import DataError, DomainError, PreconditionError, SingularMatrixError
from .estimators import METHODS, estimate
from .inference import result_dict, wald_region
from .simulation import generate_scenario, run_monte_carlo, write_draws_csv

log = logging.getLogger("stratfact")

EXIT_OK, EXIT_VALIDATION, EXIT_SINGULAR = 0, 2, 3


class UsageError(DomainError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _alpha(text):
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {text}")
    return value


def _seed(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _int_list(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _float_list(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _methods(text):
    if text == "all":
        return list(METHODS)
    names = [t.strip() for t in text.split(",") if t.strip()]
    for name in names:
        if name not in METHODS:
            raise argparse.ArgumentTypeError(f"unknown method {name!r}; expected {', '.join(METHODS)} or all")
    return names


def build_parser():
    parser = _Parser(prog="stratfact", description="Stratified 2^K factorial experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("assign", help="draw a stratified random assignment")
    p.add_argument("--strata", required=True, help="CSV with stratum_id, n, n_arm1..n_armQ")
    p.add_argument("--seed", required=True, type=_seed)
    p.add_argument("--out", help="output CSV (default stdout)")

    for name, helptext in (("analyze", "estimate factorial effects"),
                           ("region", "joint Wald confidence region")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", required=True)
        p.add_argument("--k", required=True, type=int)
        p.add_argument("--alpha", type=_alpha, default=0.05)
        p.add_argument("--out", help="output JSON (default stdout)")
        p.add_argument("--covariates", type=lambda s: [c for c in s.split(",") if c],
                       help="comma-separated covariate columns (default: all other columns)")
        if name == "analyze":
            p.add_argument("--method", type=_methods, default=["unadj"],
                           help="unadj, adj, cond, inter, a comma list, or all")
        else:
            p.add_argument("--method", choices=METHODS, default="unadj")
            p.add_argument("--effects", type=_int_list, help="1-based effect indices (default: all)")
            p.add_argument("--point", type=_float_list, help="point to test for membership")

    p = sub.add_parser("simulate", help="Monte Carlo study of a simulation scenario")
    p.add_argument("--case", required=True, type=int, choices=(1, 2, 3, 4))
    p.add_argument("--reps", type=int, default=10000)
    p.add_argument("--seed", required=True, type=_seed)
    p.add_argument("--m", type=int, help="number of strata")
    p.add_argument("--nm", type=int, help="units per stratum")
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--method", type=_methods, default=list(METHODS))
    p.add_argument("--out", help="output JSON (default stdout)")
    p.add_argument("--emit-draws", help="CSV of per-replication estimates")
    return parser


def _write_text(text, dest):
    if dest is None:
        sys.stdout.write(text)
    else:
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _dump(obj):
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def _file_digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _config(args):
    cfg = {k: v for k, v in vars(args).items() if k != "verbose"}
    cfg["version"] = __version__
    return cfg


# -- commands ----------------------------------------------------------------

def read_strata(path):
    """Parse a strata CSV into an :class:`AssignmentPlan` (seed 0)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError("empty strata file")
    header = [h.strip() for h in rows[0]]
    for col in ("stratum_id", "n"):
        if col not in header:
            raise DataError(f"missing required column {col!r}", column=col)
    arm_cols = []
    while f"n_arm{len(arm_cols) + 1}" in header:
        arm_cols.append(f"n_arm{len(arm_cols) + 1}")
    Q = len(arm_cols)
    if Q < 2 or Q & (Q - 1):
        raise DataError(f"expected n_arm1..n_armQ with Q a power of two >= 2, found {Q} arm columns")
    pos = {h: i for i, h in enumerate(header)}
    ids, sizes, counts = [], [], []
    for r, row in enumerate(rows[1:], start=1):
        if not any(c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, found {len(row)}", row=r)
        ids.append(row[pos["stratum_id"]].strip())
        vals = []
        for col in ["n"] + arm_cols:
            text = row[pos[col]].strip()
            try:
                vals.append(int(text))
            except ValueError:
                raise DataError(f"non-integer value {text!r}", row=r, column=col) from None
        sizes.append(vals[0])
        counts.append(vals[1:])
    if not ids:
        raise DataError("no strata rows")
    return ids, sizes, np.array(counts, dtype=int)


def cmd_assign(args):
    ids, sizes, counts = read_strata(args.strata)
    plan = AssignmentPlan.from_counts(counts, args.seed, stratum_ids=ids, sizes=sizes)
    arms = assign_treatments(plan)
    sid = np.repeat(np.array(ids, dtype=object), plan.counts.sum(axis=1))
    lines = ["unit_id,stratum_id,arm"]
    lines += [f"{i + 1},{s},{int(a) + 1}" for i, (s, a) in enumerate(zip(sid, arms))]
    _write_text("\n".join(lines) + "\n", args.out)


def _load(args):
    design = build_design(args.k)
    data = ingest_csv(args.data, design, covariate_cols=args.covariates)
    log.info("read %d units in %d strata with %d covariates", data.n, data.M, data.p)
    return design, data


def cmd_analyze(args):
    design, data = _load(args)
    summ = summarize(data)
    results = []
    for method in args.method:
        est = estimate(summ, method, design)
        results.append(result_dict(est, args.alpha))
    cfg = _config(args)
    cfg["data_sha256"] = _file_digest(args.data)
    _write_text(_dump({"config": cfg, "results": results}), args.out)


def cmd_region(args):
    design, data = _load(args)
    est = estimate(summarize(data), args.method, design)
    effects = None
    if args.effects:
        bad = [f for f in args.effects if not 1 <= f <= design.F]
        if bad:
            raise DomainError(f"effect indices must lie in 1..{design.F}, got {bad}")
        effects = [f - 1 for f in args.effects]
    reg = wald_region(est, args.alpha, effects)
    out = {
        "method": est.method,
        "effects": [f + 1 for f in reg.effects],
        "labels": reg.labels,
        "center": reg.center.tolist(),
        "vcov": reg.vcov.tolist(),
        "threshold": reg.threshold,
        "precision": reg.precision.tolist(),
    }
    if reg.area is not None:
        out["area"] = reg.area
    else:
        out["log_volume"] = reg.log_volume
    if args.point is not None:
        if len(args.point) != reg.dim:
            raise DomainError(f"--point needs {reg.dim} values, got {len(args.point)}")
        out["point"] = args.point
        out["quadratic_form"] = reg.quadratic_form(args.point)
        out["contains"] = reg.contains(args.point)
    cfg = _config(args)
    cfg["data_sha256"] = _file_digest(args.data)
    _write_text(_dump({"config": cfg, "region": out}), args.out)


def cmd_simulate(args):
    if args.reps < 1:
        raise DomainError("reps must be at least 1")
    pop = generate_scenario(args.case, args.seed, M=args.m, n_m=args.nm)
    log.info("case %d population: n=%d, M=%d", args.case, pop.n, pop.M)
    table, draws = run_monte_carlo(pop, args.method, args.reps, args.alpha, args.seed, keep_draws=True)
    if args.emit_draws:
        write_draws_csv(draws, pop.design.effect_labels, args.emit_draws)
    population = {
        "case": args.case,
        "n": pop.n,
        "M": pop.M,
        "counts": pop.counts.tolist(),
        "tau": pop.tau.tolist(),
        "noise_var": pop.meta.get("noise_var"),
    }
    _write_text(_dump({"config": _config(args), "population": population, "metrics": table.to_dict()}), args.out)


COMMANDS = {"assign": cmd_assign, "analyze": cmd_analyze, "simulate": cmd_simulate, "region": cmd_region}


def _fail(code, exc):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("row", "column", "pivot"):
        if getattr(exc, attr, None) is not None:
            payload[attr] = getattr(exc, attr)
    if getattr(exc, "cells", None):
        payload["cells"] = [list(c) for c in exc.cells]
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                            format="%(levelname)s %(message)s")
        COMMANDS[args.command](args)
    except SingularMatrixError as exc:
        return _fail(EXIT_SINGULAR, exc)
    except (DomainError, DataError, PreconditionError, OSError, ValueError) as exc:
        return _fail(EXIT_VALIDATION, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
