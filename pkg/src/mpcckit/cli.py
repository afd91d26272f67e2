"""Command line interface.

Subcommands: ``solve`` (one homotopy run), ``classify`` (stationarity
labels at a point), ``bcheck`` (B-stationarity verdict), ``bench``
(problem x method grid), ``profile`` (performance profile CSV from a
record file).

Exit codes: 0 on SOLVED / completed, 2 on a solve failure, 1 on usage or
schema errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .harness import (FailureReason, MethodSpec, RunRecord, SchemaError,
                      classify_failure, corpus, export_corpus, file_to_entry,
                      load_problem, parse_method, performance_profile,
                      read_records, run_batch, write_records)
from .homotopy import HomotopyOptions, run_homotopy
from .model import Point, comp_residual, feasibility_residual, index_sets
from .nlp import SolverOptions
from .relaxations import KIND_NAMES, MODE_NAMES
from .stationarity import StationarityOptions, check_b_stationarity, classify_point


class _Parser(argparse.ArgumentParser):
    # usage errors exit with code 1 (argparse's default is 2)
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _csv_floats(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",") if t.strip() != ""])
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}")


def _add_solver_flags(p):
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--acceptable-tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=3000)
    p.add_argument("--max-wall-time", type=float, default=float("inf"),
                   help="per-NLP wall time budget in seconds")


def _add_homotopy_flags(p):
    p.add_argument("--kind", choices=KIND_NAMES, default="scholtes")
    p.add_argument("--mode", choices=MODE_NAMES, default="standard")
    p.add_argument("--sigma0", type=float, default=1.0)
    p.add_argument("--kappa", type=float, default=0.1)
    p.add_argument("--eta", type=float, default=1.5)
    p.add_argument("--update", choices=("linear", "min-power"), default="linear")
    p.add_argument("--comp-tol", type=float, default=1e-7)
    p.add_argument("--max-time", type=float, default=3600.0,
                   help="total homotopy wall-time budget in seconds")


def _homotopy_opts(args) -> HomotopyOptions:
    return HomotopyOptions(
        sigma0=args.sigma0,
        kappa=args.kappa,
        eta=args.eta,
        update_rule="MIN_POWER" if args.update == "min-power" else "LINEAR",
        comp_tol=args.comp_tol,
        total_time_budget=args.max_time,
        solver=SolverOptions(tol=args.tol, acceptable_tol=args.acceptable_tol,
                             max_iter=args.max_iter,
                             max_wall_time=args.max_wall_time),
    )


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mpcckit",
                 description="MPCC relaxation-homotopy toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run one relaxation homotopy")
    p_solve.add_argument("--problem", required=True)
    _add_homotopy_flags(p_solve)
    _add_solver_flags(p_solve)
    p_solve.add_argument("--x0", type=_csv_floats, default=None,
                         help="comma-separated start point")

    p_cls = sub.add_parser("classify", help="stationarity labels at a point")
    p_cls.add_argument("--problem", required=True)
    p_cls.add_argument("--point", type=_csv_floats, required=True)
    p_cls.add_argument("--comp-tol", type=float, default=1e-7)

    p_bch = sub.add_parser("bcheck", help="B-stationarity verdict at a point")
    p_bch.add_argument("--problem", required=True)
    p_bch.add_argument("--point", type=_csv_floats, required=True)
    p_bch.add_argument("--comp-tol", type=float, default=1e-7)

    p_bench = sub.add_parser("bench", help="run a problem x method grid")
    p_bench.add_argument("--problems", required=True,
                         help="directory of problem files, or 'builtin'")
    p_bench.add_argument("--methods", required=True,
                         help="comma-separated kind[/mode] list")
    p_bench.add_argument("--jobs", type=int, default=1)
    p_bench.add_argument("--out", required=True, help="output directory")
    p_bench.add_argument("--max-time", type=float, default=60.0,
                         help="per-cell homotopy budget in seconds")
    p_bench.add_argument("--comp-tol", type=float, default=1e-7)

    p_prof = sub.add_parser("profile", help="performance profile from records")
    p_prof.add_argument("--records", required=True)
    p_prof.add_argument("--out", required=True)

    p_exp = sub.add_parser("export-corpus",
                           help="write the built-in corpus as problem files")
    p_exp.add_argument("--out", required=True)
    return ap


def _load(path_text):
    try:
        return load_problem(path_text)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(1)
    except OSError as exc:
        print(f"error: cannot read {path_text}: {exc}", file=sys.stderr)
        raise SystemExit(1)


def _cmd_solve(args) -> int:
    prob, meta = _load(args.problem)
    x0 = args.x0 if args.x0 is not None else meta.x0
    if x0 is None:
        x0 = np.zeros(prob.n)
    if x0.size != prob.n:
        print(f"error: x0 has length {x0.size}, expected {prob.n}", file=sys.stderr)
        return 1
    spec = parse_method(f"{args.kind}/{args.mode}", _homotopy_opts(args))
    result = run_homotopy(prob, spec.kind, spec.mode, Point(x0), spec.opts)
    best = meta.best_known_objective if meta.is_ocp else None
    reason = classify_failure(result, best)
    out = {
        "problem": prob.name,
        "method": spec.method_id,
        "status": result.status,
        "failure_reason": reason,
        "objective": result.objective,
        "comp_residual": result.comp_residual,
        "feas_residual": result.feas_residual,
        "stages": result.n_stages,
        "nlp_wall_time": result.nlp_wall_time,
        "point": [float(v) for v in result.point.w],
    }
    print(json.dumps(out, indent=1))
    return 0 if reason == FailureReason.SOLVED else 2


def _cmd_classify(args) -> int:
    prob, _ = _load(args.problem)
    if args.point.size != prob.n:
        print(f"error: point has length {args.point.size}, expected {prob.n}",
              file=sys.stderr)
        return 1
    pt = Point(args.point)
    report = classify_point(prob, pt, StationarityOptions(comp_tol=args.comp_tol))
    out = {
        "problem": prob.name,
        "strongest": report.strongest,
        "labels": sorted(report.labels),
        "nu": [float(v) for v in report.nu],
        "xi": [float(v) for v in report.xi],
        "biactive": list(report.index_sets.i_zero_zero),
        "b_stationary": report.b_stationary,
        "descent_direction": None if report.descent_direction is None
                             else [float(v) for v in report.descent_direction],
        "repair_steps": report.active_set_repair_steps,
        "comp_residual": comp_residual(prob, pt),
        "feas_residual": feasibility_residual(prob, pt),
    }
    print(json.dumps(out, indent=1))
    return 0


def _cmd_bcheck(args) -> int:
    prob, _ = _load(args.problem)
    if args.point.size != prob.n:
        print(f"error: point has length {args.point.size}, expected {prob.n}",
              file=sys.stderr)
        return 1
    pt = Point(args.point)
    opts = StationarityOptions(comp_tol=args.comp_tol)
    sets = index_sets(prob, pt, opts.active_threshold())
    verdict, d = check_b_stationarity(prob, pt, sets, opts)
    out = {
        "problem": prob.name,
        "b_stationary": verdict,
        "descent_direction": None if d is None else [float(v) for v in d],
    }
    print(json.dumps(out, indent=1))
    return 0


def _cmd_bench(args) -> int:
    opts = HomotopyOptions(comp_tol=args.comp_tol,
                           total_time_budget=args.max_time)
    try:
        methods = [parse_method(tok, opts)
                   for tok in args.methods.split(",") if tok.strip()]
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not methods:
        print("error: no methods given", file=sys.stderr)
        return 1
    if args.problems == "builtin":
        entries = corpus()
    else:
        pdir = Path(args.problems)
        files = sorted(pdir.glob("*.json"))
        if not files:
            print(f"error: no problem files in {pdir}", file=sys.stderr)
            return 1
        try:
            entries = [file_to_entry(f) for f in files]
        except SchemaError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    records = run_batch(entries, methods, parallelism=args.jobs)
    rec_path = outdir / "records.jsonl"
    write_records(records, rec_path)
    solved = sum(1 for r in records if r.solved)
    print(f"{len(records)} cells, {solved} solved -> {rec_path}")
    table = performance_profile(records)
    prof_path = outdir / "profile.csv"
    table.write_csv(prof_path)
    print(f"profile -> {prof_path}")
    return 0


def _cmd_profile(args) -> int:
    try:
        records = read_records(args.records)
    except OSError as exc:
        print(f"error: cannot read {args.records}: {exc}", file=sys.stderr)
        return 1
    if not records:
        print("error: record file is empty", file=sys.stderr)
        return 1
    table = performance_profile(records)
    table.write_csv(args.out)
    print(f"profile -> {args.out}")
    return 0


def _cmd_export(args) -> int:
    paths = export_corpus(args.out)
    print(f"wrote {len(paths)} problem files to {args.out}")
    return 0


_COMMANDS = {
    "solve": _cmd_solve,
    "classify": _cmd_classify,
    "bcheck": _cmd_bcheck,
    "bench": _cmd_bench,
    "profile": _cmd_profile,
    "export-corpus": _cmd_export,
}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
