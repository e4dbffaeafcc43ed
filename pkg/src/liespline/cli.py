"""Command-line interface: ``liespline {bench,fit,calib-sim,check,matrices}``.

Exit codes: 0 success, 1 invalid arguments or input, 2 experiment or check failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

from .blending import MAX_ORDER, MIN_ORDER, format_matrices
from .checks import SUITES, run_suites
from .experiments import CalibConfig, SimConfig, calibration_experiment, resolve_seed, run_sim
from .optimizer import JACOBIAN_MODES, Problem, SolveOptions, solve
from .spline import FORMULATIONS

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2
BENCH_HEADER = ["group", "k", "config", "formulation", "seconds", "iterations", "speedup"]
SIM_KNOT_TOL = 1e-6
FORMULATION_KNOT_TOL = 1e-8
CALIB_AGREEMENT_TOL = 1e-4
CALIB_NOISELESS_TOL = 1e-6


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="root seed (falls back to $LIE_SPLINE_SEED, then 0)")
    p.add_argument("--out", default="-", help="output path, '-' for stdout")
    p.add_argument("--no-timing", action="store_true",
                   help="zero all wall-clock fields so output is byte-reproducible")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="liespline", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("bench", help="timed fits on simulated data, both formulations")
    _common(b)
    b.add_argument("--group", choices=["so3", "se3", "all"], default="all", type=str.lower)
    b.add_argument("--k", type=int, nargs="+", default=[4, 5, 6])
    b.add_argument("--config", choices=["vel", "acc", "all"], default="all")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--noise", type=float, default=0.0,
                   help="std of Gaussian noise added to measurements")
    b.add_argument("--jacobians", choices=JACOBIAN_MODES, default="forward")
    b.add_argument("--format", choices=["csv", "json"], default="csv")

    f = sub.add_parser("fit", help="solve a problem given as JSON")
    _common(f)
    f.add_argument("--problem", required=True, help="problem JSON file")
    f.add_argument("--formulation", choices=FORMULATIONS, default="recursive")
    f.add_argument("--jacobians", choices=JACOBIAN_MODES, default="forward")
    f.add_argument("--max-iterations", type=int, default=50)

    c = sub.add_parser("calib-sim", help="synthetic camera-IMU calibration")
    _common(c)
    c.add_argument("--duration", type=float, default=CalibConfig.duration)
    c.add_argument("--noise", type=float, default=1.0,
                   help="noise scale relative to the nominal sensor sigmas (0 = exact data)")
    c.add_argument("--skip-noiseless", action="store_true",
                   help="skip the exact-data recovery runs")

    k = sub.add_parser("check", help="run property and oracle suites")
    _common(k)
    k.add_argument("--all", action="store_true")
    for name in SUITES:
        k.add_argument(f"--{name}", action="store_true")

    m = sub.add_parser("matrices", help="print blending matrices")
    m.add_argument("--k", type=int, required=True)
    m.add_argument("--out", default="-")
    return parser


def _write(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _fail(report: dict) -> int:
    sys.stderr.write(_dump({"status": "failed", **report}))
    return EXIT_FAILED


# --------------------------------------------------------------------------- subcommands

def cmd_bench(args) -> int:
    if args.jacobians == "analytic" and args.group != "so3":
        raise UsageError("--jacobians analytic requires --group so3")
    if args.repeats < 1:
        raise UsageError("--repeats must be at least 1")
    bad_k = [k for k in args.k if not MIN_ORDER <= k <= MAX_ORDER]
    if bad_k:
        raise UsageError(f"--k values must be in [{MIN_ORDER}, {MAX_ORDER}]")
    seed = resolve_seed(args.seed)
    groups = ["SO3", "SE3"] if args.group == "all" else [args.group.upper()]
    derivs = {"vel": ["velocity"], "acc": ["acceleration"],
              "all": ["velocity", "acceleration"]}[args.config]
    timing = not args.no_timing
    rows, records, failures = [], [], []
    for g in groups:
        for d in derivs:
            for k in args.k:
                cfg = SimConfig(group=g, k=k, deriv=d, seed=seed, repeats=args.repeats,
                                jacobian_mode=args.jacobians, noise=args.noise)
                res = run_sim(cfg)
                for form in ("recursive", "baseline"):
                    rep = res.reports[form]
                    secs = res.seconds[form] if timing else 0.0
                    rows.append([g, k, d[:3], form, f"{secs:.6f}", rep.iterations,
                                 f"{res.speedup if timing else 0.0:.4f}"])
                records.append(res.to_json(timing))
                problems = []
                if not res.iterations_equal:
                    problems.append("iteration counts differ between formulations")
                if res.formulation_knot_diff > FORMULATION_KNOT_TOL:
                    problems.append("final knots differ between formulations")
                if not all(r.converged for r in res.reports.values()):
                    problems.append("solver did not converge")
                if args.noise == 0 and res.knot_error > SIM_KNOT_TOL:
                    problems.append("knots not recovered from exact data")
                if problems:
                    failures.append({"config": cfg.tag, "problems": problems})
    if args.format == "json":
        text = _dump({"seed": seed, "results": records})
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        w.writerows(rows)
        text = buf.getvalue()
    _write(args.out, text)
    return _fail({"failures": failures}) if failures else EXIT_OK


def cmd_fit(args) -> int:
    try:
        with open(args.problem, encoding="utf-8") as fh:
            problem = Problem.from_json(json.load(fh))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"invalid problem file: {exc}") from exc
    if args.jacobians == "analytic" and problem.representation == "se3":
        raise UsageError("--jacobians analytic requires an SO(3) or split problem")
    report = solve(problem, args.formulation, args.jacobians,
                   SolveOptions(max_iterations=args.max_iterations))
    out = report.to_json()
    if args.no_timing:
        out["iteration_seconds"] = [0.0] * len(out["iteration_seconds"])
        out["total_seconds"] = 0.0
    _write(args.out, _dump({"report": out, "solution": report.problem.to_json()}))
    if not report.converged:
        return _fail({"message": report.message})
    return EXIT_OK


def cmd_calib(args) -> int:
    if args.duration <= 0:
        raise UsageError("--duration must be positive")
    if args.noise < 0:
        raise UsageError("--noise must be non-negative")
    seed = resolve_seed(args.seed)
    cfg = CalibConfig(duration=args.duration, noise=args.noise, seed=seed)
    exp = calibration_experiment(cfg, check_noiseless=not args.skip_noiseless)
    out = {"seed": seed, "config": vars(cfg).copy(), **exp.to_json(not args.no_timing)}
    problems = []
    if not all(r.report.converged for r in exp.results):
        problems.append("solver did not converge")
    if out["max_split_vs_se3"] > CALIB_AGREEMENT_TOL:
        problems.append("split and SE(3) estimates disagree")
    for rep, err in out["noiseless_max_error"].items():
        if err > CALIB_NOISELESS_TOL:
            problems.append(f"{rep}: parameters not recovered from exact data")
    out["passed"] = not problems
    _write(args.out, _dump(out))
    return _fail({"problems": problems}) if problems else EXIT_OK


def cmd_check(args) -> int:
    names = [n for n in SUITES if args.all or getattr(args, n)]
    if not names:
        raise UsageError("select at least one suite or --all")
    results = run_suites(names, seed=resolve_seed(args.seed))
    text = "\n".join(r.line() for r in results) + "\n"
    if args.out != "-":
        _write(args.out, _dump([r.to_json() for r in results]))
    sys.stdout.write(text)
    failed = [r.to_json() for r in results if not r.passed]
    return _fail({"failures": failed}) if failed else EXIT_OK


def cmd_matrices(args) -> int:
    try:
        text = format_matrices(args.k)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _write(args.out, text + "\n")
    return EXIT_OK


COMMANDS = {"bench": cmd_bench, "fit": cmd_fit, "calib-sim": cmd_calib, "check": cmd_check,
            "matrices": cmd_matrices}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
