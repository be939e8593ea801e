"""Command-line interface: ``mile simulate | fit | summarize | infer``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Set MILE_LOG to error, warn, info or debug for diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings

import numpy as np

from .core import DataError, read_dataset_csv
from .harness import (
    METHODS,
    ConfigError,
    ExperimentConfig,
    RecordsFormatError,
    fit_method,
    format_summary,
    param_names,
    read_records_csv,
    run_experiment,
    summarize,
    write_records_csv,
    write_summary_csv,
)
from .inference import (
    InferenceError,
    StationarityWarning,
    conditional_param_cov,
    jackknife_cov,
    observed_information,
)
from .models import BetaBernoulliProblem, LogCauchyProblem, bb_fit_mile, lc_fit_mile
from .optim import BcaConfig
from .rand import make_generator

log = logging.getLogger("mile")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


def _setup_logging():
    name = os.environ.get("MILE_LOG", "warn").strip().lower()
    level = _LOG_LEVELS.get(name)
    logging.basicConfig(level=level or logging.WARNING, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    if level is None:
        log.warning("MILE_LOG=%r not recognised; using warn", name)


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {v}")
    return v


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="mile", description=__doc__.splitlines()[0], formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, metavar="{simulate,fit,summarize,infer}")
    models = tuple(METHODS)

    p = sub.add_parser("simulate", help="run a Monte Carlo experiment", formatter_class=fmt)
    p.add_argument("--model", required=True, choices=models, help="simulation model")
    p.add_argument("--method", action="append", default=None,
                   help="fitting method (repeatable; mile, em or mom); default: every method of the model")
    p.add_argument("--n", type=_positive_int, default=200, help="individuals per dataset")
    p.add_argument("--m", type=_positive_int, default=None,
                   help="observations per individual (default 1000; 1 for gmm; 200 for bsr)")
    p.add_argument("--reps", type=_positive_int, default=200, help="Monte Carlo replicates")
    p.add_argument("--seed", type=_seed, default=0, help="master seed")
    p.add_argument("--true-params", nargs="+", default=[], metavar="K=V",
                   help="true parameters, e.g. theta=5 or mu=-3,0,3 (defaults per model)")
    p.add_argument("--workers", type=_positive_int, default=os.cpu_count() or 1,
                   help="parallel worker processes; output does not depend on it")
    p.add_argument("--out", required=True, help="replicate CSV to write")
    p.add_argument("--summary-out", default=None, help="optional summary CSV")
    p.add_argument("--timing", action="store_true", default=False,
                   help="store wall times in the CSV (makes reruns differ in that column)")

    p = sub.add_parser("fit", help="fit one dataset", formatter_class=fmt)
    p.add_argument("--model", required=True, choices=models, help="model of the dataset")
    p.add_argument("--data", required=True, help="dataset CSV (individual_id,obs_index|t,value)")
    p.add_argument("--method", default="mile", choices=("mile", "em", "mom"), help="fitting method")
    p.add_argument("--seed", type=_seed, default=0, help="seed for stochastic optimizers")
    p.add_argument("--k", type=_positive_int, default=3, help="mixture components (gmm only)")
    p.add_argument("--out", default=None, help="output file (.json or .csv); default: JSON on stdout")

    p = sub.add_parser("summarize", help="summarize a replicate CSV", formatter_class=fmt)
    p.add_argument("--records", required=True, help="replicate CSV written by simulate")
    p.add_argument("--out", default=None, help="optional summary CSV")

    p = sub.add_parser("infer", help="covariance estimates for a fitted dataset", formatter_class=fmt)
    p.add_argument("--model", required=True, choices=("beta-bernoulli", "log-cauchy"),
                   help="model of the dataset (twice-differentiable models only)")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--fit", required=True, help="JSON fit result written by `mile fit`")
    p.add_argument("--jackknife", action="store_true", default=False, help="delete-one-individual jackknife covariance")
    p.add_argument("--information", action="store_true", default=False,
                   help="Schur-complement and given-Z covariances from the observed information")
    p.add_argument("--out", default=None, help="output CSV; default: stdout")
    return parser


# ------------------------------------------------------------ subcommands


def _cmd_simulate(args):
    methods = tuple(args.method) if args.method else METHODS[args.model]
    M = args.m if args.m is not None else {"gmm": 1, "bsr": 200}.get(args.model, 1000)
    cfg = ExperimentConfig(
        args.model, methods, args.true_params, args.n, M, args.reps, args.seed, args.workers,
    )
    log.debug("experiment: %s", cfg)
    records = run_experiment(cfg)
    log.info("%d records written to %s", len(records), args.out)
    write_records_csv(records, args.out, include_timing=args.timing, n_params=len(cfg.param_names))
    rows = summarize(records, cfg.param_names)
    if args.summary_out:
        write_summary_csv(rows, args.summary_out)
    print(format_summary(rows))
    return 0


def _write_fit(payload, path, names):
    if path is None:
        json.dump(payload, sys.stdout, indent=2)
        sys.stdout.write("\n")
        return
    if path.endswith(".csv"):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "name", "value"])
            for n in names:
                w.writerow(["theta", n, format(payload["theta"][n], ".17g")])
            for i, z in enumerate(payload["z"] or []):
                w.writerow(["z", i, z if isinstance(z, int) else format(z, ".17g")])
            w.writerow(["loglik", "", "" if payload["loglik"] is None else format(payload["loglik"], ".17g")])
            w.writerow(["converged", "", str(payload["converged"]).lower()])
        return
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _read_data(model, path):
    data = read_dataset_csv(path)
    if model == "bsr" and data.timestamps is None:
        raise UsageError(f"{path}: bsr data needs a t column (individual_id,t,value)")
    if model == "gmm" and data.obs_per_individual != 1:
        raise UsageError(f"{path}: gmm data needs exactly one observation per individual")
    return data


def _cmd_fit(args):
    if args.method not in METHODS[args.model]:
        raise UsageError(f"{args.method} not available for {args.model}")
    if args.model == "gmm" and args.k < 2:
        raise UsageError("--k must be >= 2")
    data = _read_data(args.model, args.data)
    log.debug("fitting %s/%s to %d x %d data", args.model, args.method, data.n_individuals, data.obs_per_individual)
    names = param_names(args.model, args.k)
    res = fit_method(args.model, args.method, data, make_generator(args.seed, 1), args.k)
    z = None
    if res.z is not None:
        z = [int(v) for v in res.z] if args.model == "gmm" else [None if not np.isfinite(v) else float(v) for v in res.z]
    payload = {
        "model": args.model,
        "method": args.method,
        "theta": {n: float(v) for n, v in zip(names, res.theta)},
        "z": z,
        "loglik": res.loglik,
        "converged": bool(res.converged),
        "iterations": int(res.iterations),
    }
    _write_fit(payload, args.out, names)
    return 0


def _cmd_summarize(args):
    records = read_records_csv(args.records)
    if not records:
        raise UsageError(f"{args.records}: no records")
    rows = summarize(records)
    if args.out:
        write_summary_csv(rows, args.out)
    print(format_summary(rows))
    return 0


def _load_fit(path, model, data):
    try:
        with open(path, encoding="utf-8") as fh:
            fit = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"{path}: cannot read fit result: {exc}") from None
    if fit.get("model") != model:
        raise UsageError(f"{path}: fit is for model {fit.get('model')!r}, not {model!r}")
    theta = np.array(list(fit["theta"].values()), dtype=float)
    z = fit.get("z")
    if z is None or len(z) != data.n_individuals:
        raise UsageError(f"{path}: fit has no latent vector matching the data ({data.n_individuals} individuals)")
    return theta, np.array(z, dtype=float)


def _matrix_rows(label, names, C):
    rows = [[label] + list(names)]
    for n, row in zip(names, C):
        rows.append([n] + [format(v, ".17g") for v in row])
    return rows


def _cmd_infer(args):
    if not (args.jackknife or args.information):
        raise UsageError("choose at least one of --jackknife and --information")
    data = _read_data(args.model, args.data)
    theta, z = _load_fit(args.fit, args.model, data)
    names = param_names(args.model)
    out = []
    if args.information:
        problem = BetaBernoulliProblem() if args.model == "beta-bernoulli" else LogCauchyProblem()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", StationarityWarning)
            blocks = observed_information(problem, theta, z, data)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        schur, given = conditional_param_cov(blocks)
        out += _matrix_rows("schur_cov", names, schur) + [[]]
        out += _matrix_rows("given_z_cov", names, given) + [[]]
    if args.jackknife:
        p = len(names)
        if data.n_individuals < p + 2:
            raise UsageError(f"--jackknife needs at least {p + 2} individuals, data has {data.n_individuals}")
        if args.model == "beta-bernoulli":
            def fit_fn(d, t0):
                return bb_fit_mile(d, 1.0 if t0 is None else float(t0[0]), BcaConfig()).theta
        else:
            def fit_fn(d, t0):
                return lc_fit_mile(d).theta
        out += _matrix_rows("jackknife_cov", names, jackknife_cov(fit_fn, data)) + [[]]
    out = out[:-1]
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(out)
    else:
        csv.writer(sys.stdout, lineterminator="\n").writerows(out)
    return 0


_COMMANDS = {"simulate": _cmd_simulate, "fit": _cmd_fit, "summarize": _cmd_summarize, "infer": _cmd_infer}


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    try:
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigError, DataError, RecordsFormatError) as exc:
        print(f"mile {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (InferenceError, RuntimeError, ValueError, OSError) as exc:
        print(f"mile {args.command}: failed: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
