"""Command-line front end: ``linkedcox fit | simulate | report``.

Exit codes
----------
0  success
1  usage error
2  malformed input (CSV parse error, invalid value, bad report file)
3  singular design, separation, empty risk set
4  no convergence
5  degenerate simulation scenario (too many failed replications)

Only the requested payload is written to stdout; progress and error
messages go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from .dataset import ChangePointSpec, read_cohort, save_csv
from .errors import InvalidInput, LinkedCoxError
from .estimators import Method, fit_method
from .montecarlo import SimReport, default_workers, emit_table, run_replications
from .simgen import ScenarioConfig, simulate

EXIT_USAGE = 1

_SCENARIOS = {"td-changepoint": "TdChangePoint", "motivating": "MotivatingSquared",
              "gap": "GapScenario"}
_MECHANISMS = {"lcar": "LCAR", "clar": "CLAR", "lnar-t": "LNAR_T", "lnar-c2": "LNAR_C2"}
_METHODS = {"oracle": Method.ORACLE, "cc": Method.CC, "ccplus": Method.CCPLUS,
            "nlac": Method.NLAC, "iplw": Method.IPLW}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with exit code 1 for usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _columns(text):
    if text is None:
        return None
    cols = tuple(c.strip() for c in text.split(",") if c.strip())
    if not cols:
        raise UsageError("empty column list")
    return cols


def _floats(text):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"not a comma-separated list of numbers: {text!r}") from None


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def build_parser():
    p = _Parser(prog="linkedcox", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="fit one estimator to a subject CSV; prints a JSON report")
    f.add_argument("csv", type=Path)
    f.add_argument("--method", required=True, choices=sorted(_METHODS))
    f.add_argument("--covariates", help="comma-separated model columns (default: all z1_*)")
    f.add_argument("--change-points", help="comma-separated times where the effect of "
                   "--treatment-col changes, e.g. 6.5,7.5")
    f.add_argument("--treatment-col", default="z1_1")
    f.add_argument("--linkage-covariates", help="comma-separated columns for the linkage model")
    f.add_argument("--floor", type=float, default=0.01, help="positivity floor for IPLW weights")
    f.add_argument("--truncate", action="store_true", help="clip linkage probabilities at --floor")

    s = sub.add_parser("simulate", help="run a Monte-Carlo study or export one simulated dataset")
    s.add_argument("--scenario", required=True, choices=sorted(_SCENARIOS))
    s.add_argument("--mechanism", default="clar", choices=sorted(_MECHANISMS))
    s.add_argument("--analysis", default="correct", choices=["correct", "misspecified"])
    s.add_argument("--n", type=_positive_int, default=2000)
    s.add_argument("--reps", type=_positive_int)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--remedy", default="on", choices=["on", "off", "naive"])
    s.add_argument("--methods", default="oracle,cc,ccplus,nlac,iplw")
    s.add_argument("--threads", type=_positive_int, default=None)
    s.add_argument("--out", type=Path, help="SimReport JSON path")
    s.add_argument("--refresh-target", action="store_true", help="recompute a cached target")
    s.add_argument("--export", type=Path, help="write the dataset of one replication as CSV "
                   "instead of running a study")
    s.add_argument("--replication", type=int, default=0, help="replication index for --export")
    s.add_argument("--latent", action="store_true", help="include simulation-only columns in --export")

    r = sub.add_parser("report", help="render a SimReport as a table")
    r.add_argument("reports", type=Path, nargs="+")
    r.add_argument("--format", default="md", choices=["md", "csv"])
    return p


def _config(args):
    return ScenarioConfig(
        scenario=_SCENARIOS[args.scenario],
        n=args.n,
        mechanism=_MECHANISMS[args.mechanism],
        analysis=args.analysis,
        seed=args.seed,
        remedy=args.remedy,
    )


def cmd_fit(args, out):
    cohort = read_cohort(args.csv)
    columns = _columns(args.covariates)
    spec = None
    if args.change_points:
        names = columns if columns is not None else cohort.covariate_names
        if args.treatment_col not in names:
            raise InvalidInput(f"--treatment-col {args.treatment_col!r} is not a model column")
        spec = ChangePointSpec(_floats(args.change_points), list(names).index(args.treatment_col))
    kw = dict(columns=columns)
    method = _METHODS[args.method]
    if method is Method.IPLW:
        kw.update(linkage_covariates=_columns(args.linkage_covariates), floor=args.floor,
                  truncate=args.truncate)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = fit_method(method, cohort, spec, **kw)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out.write(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_simulate(args, out):
    config = _config(args)
    if args.export is not None:
        data = simulate(config, args.replication)
        save_csv(args.export, data, latent=args.latent)
        print(f"wrote {data.n} subjects to {args.export}", file=sys.stderr)
        return 0
    if args.reps is None:
        raise UsageError("--reps is required unless --export is given")
    if args.out is None:
        raise UsageError("--out is required for a simulation study")
    methods = [_METHODS[m] for m in (_columns(args.methods) or ()) if m in _METHODS]
    unknown = [m for m in _columns(args.methods) if m not in _METHODS]
    if unknown:
        raise UsageError(f"unknown method(s): {', '.join(unknown)}")
    workers = args.threads or default_workers()
    print(f"running {args.reps} replications on {workers} worker(s)", file=sys.stderr)
    report = run_replications(config, methods, args.reps, workers=workers,
                              target_kwargs=dict(refresh=args.refresh_target))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(report.to_json())
    out.write(emit_table(report, "md"))
    return 0


def cmd_report(args, out):
    reports = []
    for path in args.reports:
        try:
            text = path.read_text()
        except OSError as exc:
            raise InvalidInput(f"cannot read {path}: {exc}") from None
        reports.append(SimReport.from_json(text))
    out.write(emit_table(reports, args.format))
    return 0


_COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"linkedcox: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LinkedCoxError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        for attr in ("row", "column"):
            if getattr(exc, attr, None) is not None:
                err[attr] = getattr(exc, attr)
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
