"""Command-line interface.

Commands
--------
simulate   run a Monte-Carlo sweep and write ``metrics.csv``
estimate   fit a CSV dataset batch by batch and compose the fits
stream     the same, through the online state, with optional snapshots
check      fast identity checks

Exit codes: 0 success, 1 failed check, 2 input or configuration error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .composition import bc_ge, dc_expression, majority_vote_support, naive_average
from .config import load_config
from .data_model import partition_contiguous, read_dataset_csv
from .errors import ConfigError, GbcdcError, InputError, NumericError
from .local_estimators import fit_lasso, fit_ols, fit_ridge, select_lambda_cv
from .selfcheck import FAULTS, run_checks
from .simharness import StrictModeError, run_experiment
from .streaming import StreamState, stream_finalize, stream_init, stream_update

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


def _diag(level: str, exit_code: int, err: BaseException | str) -> None:
    record = {"level": level, "exit": exit_code}
    if isinstance(err, BaseException):
        record.update(type=type(err).__name__, message=str(err))
    else:
        record["message"] = err
    print(json.dumps(record), file=sys.stderr)


def _threads(value: int | None) -> int:
    if value is not None:
        return max(1, value)
    env = os.environ.get("GBCDC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"GBCDC_THREADS: expected an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ConfigError(f"--out: cannot create {out}: {err.strerror}") from None
    return out


def _dataset_path(name: str):
    if name.startswith("bundled:"):
        return resources.files("gbcdc") / "data" / f"{name.split(':', 1)[1]}.csv"
    return name


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.override, args.seed)
    out = _out_dir(args.out)
    threads = _threads(args.threads)
    started = time.time()
    try:
        table = run_experiment(cfg, threads=threads, strict=args.strict)
    except StrictModeError as err:
        _diag("error", EXIT_NUMERIC, err)
        return EXIT_NUMERIC
    (out / "metrics.csv").write_text(table.to_csv())
    charts = []
    if args.charts:
        from .charts import write_charts

        charts = [p.name for p in write_charts(table, out, cfg.name)]
    manifest = {
        "command": "simulate",
        "config": cfg.to_dict(),
        "threads": threads,
        "started_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "elapsed_seconds": round(time.time() - started, 3),
        "versions": {"gbcdc": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "artifacts": ["metrics.csv", *charts],
    }
    (out / "run-manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {out / 'metrics.csv'} ({len(table.rows)} rows)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# estimate / stream
# ---------------------------------------------------------------------------


def _local_fits(args, data, partition):
    batches = list(data.batches(partition))
    kind = args.estimator
    if kind == "ols":
        lam = 0.0
    elif args.lam == "cv":
        lam = select_lambda_cv(batches[0].x, batches[0].y, kind, args.cv_folds,
                               seed=args.seed, rule=args.cv_rule)
    else:
        try:
            lam = float(args.lam)
        except ValueError:
            raise ConfigError(f"--lambda: expected a number or 'cv', got {args.lam!r}") from None
    fit = {"ridge": lambda b: fit_ridge(b.x, b.y, lam),
           "lasso": lambda b: fit_lasso(b.x, b.y, lam),
           "ols": lambda b: fit_ols(b.x, b.y)}[kind]
    return [fit(b) for b in batches], lam


def _parse_support(text):
    if text is None:
        return None
    try:
        return tuple(sorted(int(k) - 1 for k in text.split(",") if k.strip()))
    except ValueError:
        raise ConfigError(f"--support: expected comma-separated integers, got {text!r}") from None


def _write_result(result, out: Path, extra: dict) -> None:
    (out / "result.csv").write_text(result.to_csv())
    payload = result.to_dict()
    payload.update(extra)
    (out / "result.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(f"method={result.method} N={result.n_batches}")
    for k, t, v in zip(result.components, result.theta_tilde, result.var_hat):
        print(f"  theta[{k + 1}] = {t:.10g}  (var_hat {v:.4g})")


def cmd_estimate(args) -> int:
    data = read_dataset_csv(_dataset_path(args.dataset))
    partition = partition_contiguous(data.n, args.N, strict=not args.lenient)
    fits, lam = _local_fits(args, data, partition)
    support = _parse_support(args.support)
    if args.estimator == "lasso" and support is None:
        support = majority_vote_support(fits, args.threshold)
    if args.method == "naive":
        result = naive_average(fits, support)
    elif args.method == "dc_expression":
        result = dc_expression(fits, support=support)
    else:
        result = bc_ge(fits, support=support)
    _write_result(result, _out_dir(args.out), {"lambda": lam, "estimator": args.estimator})
    return EXIT_OK


def cmd_stream(args) -> int:
    data = read_dataset_csv(_dataset_path(args.dataset))
    partition = partition_contiguous(data.n, args.N, strict=not args.lenient)
    fits, lam = _local_fits(args, data, partition)
    support = _parse_support(args.support)
    if args.estimator == "lasso" and support is None:
        raise ConfigError("--support: a LASSO stream needs the support fixed in advance")
    if args.resume_from:
        try:
            state = StreamState.from_json(Path(args.resume_from).read_text())
        except OSError as err:
            raise ConfigError(f"--resume-from: {err.strerror}") from None
    else:
        p = data.p if support is None else len(support)
        q = data.p if args.estimator != "lasso" else p
        state = stream_init(p, q, support)
    snap = _out_dir(args.snapshot_dir) if args.snapshot_dir else None
    stop = len(fits) if args.stop_after is None else min(args.stop_after, len(fits))
    for j in range(state.count, stop):
        state = stream_update(state, fits[j])
        if snap is not None:
            (snap / f"state-{j + 1:04d}.json").write_text(state.to_json())
    out = _out_dir(args.out)
    (out / "state.json").write_text(state.to_json())
    if stop < len(fits):
        print(f"stopped after {state.count} of {len(fits)} batches; state in {out / 'state.json'}")
        return EXIT_OK
    result = stream_finalize(state)
    _write_result(result, out, {"lambda": lam, "estimator": args.estimator})
    return EXIT_OK


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------


def cmd_check(args) -> int:
    fault = args.inject_fault or os.environ.get("GBCDC_INJECT_FAULT") or None
    if fault is not None and fault not in FAULTS:
        raise ConfigError(f"--inject-fault: choose from {FAULTS}")
    results = run_checks(seed=args.seed or 0, fault=fault)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name}: worst {r.worst:.3g} (tol {r.tolerance:.0e})")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _fit_options(p):
    p.add_argument("dataset", help="CSV file (last column is the response) or bundled:<name>")
    p.add_argument("--N", type=int, required=True, help="number of batches")
    p.add_argument("--estimator", choices=("ridge", "lasso", "ols"), default="ridge")
    p.add_argument("--lambda", dest="lam", default="cv",
                   help="penalty level, or 'cv' for cross-validation on the first batch")
    p.add_argument("--cv-folds", type=int, default=5)
    p.add_argument("--cv-rule", choices=("min", "1se"), default="1se")
    p.add_argument("--support", help="comma-separated 1-based coordinates to compose")
    p.add_argument("--threshold", type=float, default=0.5, help="LASSO majority-vote threshold")
    p.add_argument("--lenient", action="store_true",
                   help="allow N not dividing n (remainder goes to the last batch)")
    p.add_argument("--seed", type=int, default=0, help="seed of the CV folds")
    p.add_argument("--out", default=".", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gbcdc", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"gbcdc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte-Carlo sweep")
    sim.add_argument("--config", required=True,
                     help="TOML/JSON config file or bundled name (e.g. exp1-desk)")
    sim.add_argument("--out", default="results", help="output directory")
    sim.add_argument("--seed", type=int, help="override the configured seed")
    sim.add_argument("--threads", type=int, help="worker threads (default: GBCDC_THREADS or all cores)")
    sim.add_argument("--charts", action="store_true", help="also write bias.svg and mse.svg")
    sim.add_argument("--strict", action="store_true", help="exit 3 on the first numeric failure")
    sim.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config key (repeatable)")
    sim.set_defaults(func=cmd_simulate)

    est = sub.add_parser("estimate", help="compose local fits of a CSV dataset")
    _fit_options(est)
    est.add_argument("--method", choices=("bc_ge", "naive", "dc_expression"), default="bc_ge")
    est.set_defaults(func=cmd_estimate)

    stm = sub.add_parser("stream", help="compose through the online state")
    _fit_options(stm)
    stm.add_argument("--snapshot-dir", help="write a state snapshot after every batch")
    stm.add_argument("--resume-from", help="snapshot to continue from")
    stm.add_argument("--stop-after", type=int, help="stop after this many batches in total")
    stm.set_defaults(func=cmd_stream)

    chk = sub.add_parser("check", help="run the fast identity checks")
    chk.add_argument("--seed", type=int, default=0)
    chk.add_argument("--inject-fault", choices=FAULTS, help=argparse.SUPPRESS)
    chk.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as err:
        _diag("error", EXIT_INPUT, err)
        return EXIT_INPUT
    except NumericError as err:
        _diag("error", EXIT_NUMERIC, err)
        return EXIT_NUMERIC
    except GbcdcError as err:
        _diag("error", EXIT_NUMERIC, err)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
