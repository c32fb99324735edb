"""Command line interface.

Three subcommands: ``simulate`` runs one of the Monte Carlo studies and
writes tables plus per-run records, ``fit`` applies any estimator to a
CSV dataset, and ``truth`` evaluates the counterfactual truth oracle.
A ``key = value`` config file can prefill any simulate option; explicit
flags win over the file.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .classic import bma_fit, fma_fit, ms_fit, ols_fit
from .gformula import ALWAYS, THRESHOLD
from .harness import DESK_SCALE, FULL_SCALE, StudyConfig, run_study
from .models import read_dataset
from .optimal import jma_fit, lae_fit, mma_fit
from .rng import make_rng
from .simdata import simulate_longitudinal
from .superlearner import SL_LEARNERS, SL_PLUS_LEARNERS, fit_super_learner

FIT_METHODS = ("ols", "ms", "fma", "bma", "mma", "jma", "lae", "sl", "sl+")


def _read_config(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SystemExit(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _resolve(flag, config, key, default, cast):
    if flag is not None:
        return flag
    if key in config:
        raw = config[key]
        if cast is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return cast(raw)
    return default


def _cmd_simulate(args) -> int:
    config = _read_config(args.config) if args.config else {}
    study = _resolve(args.study, config, "study", None, str)
    if study is None:
        raise SystemExit("simulate: --study is required (flag or config file)")
    full = _resolve(args.full_scale or None, config, "full_scale", False, bool)
    scale = FULL_SCALE if full else DESK_SCALE
    runs_default, n_default = scale[study]
    cfg = StudyConfig(
        study=study,
        runs=_resolve(args.runs, config, "runs", runs_default, int),
        n=_resolve(args.n, config, "n", n_default, int),
        seed=_resolve(args.seed, config, "seed", 20240, int),
        workers=_resolve(args.workers, config, "workers", 1, int),
        out_dir=_resolve(args.out, config, "out", "modelavg_out", str),
        truth_n=_resolve(args.truth_n, config, "truth_n", 1_000_000, int),
    )
    table = run_study(cfg)
    print(f"study {cfg.study}: {cfg.runs} runs at n={cfg.n}, seed={cfg.seed}")
    print(f"tables and run records written to {cfg.out_dir}/")
    for block in table.blocks:
        print(f"  block {block.title}: {len(block.rows)} rows")
    return 0


def _write_fit_csv(path, rows, header):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _cmd_fit(args) -> int:
    data = read_dataset(args.data, response=args.response)
    method = args.method.lower()
    if method in ("sl", "sl+"):
        learners = SL_LEARNERS if method == "sl" else SL_PLUS_LEARNERS
        fit = fit_super_learner(data, learners, seed=args.seed)
        Z = fit.level_one.predictions
        rows = []
        for j, (spec, w) in enumerate(zip(fit.learners, fit.meta_weights)):
            cv_mse = float(np.mean((Z[:, j] - data.y) ** 2))
            rows.append([spec.name, repr(float(w)), repr(cv_mse)])
        _write_fit_csv(args.out, rows, ["learner", "weight", "cv_mse"])
        print(f"{method} fit on {data.n} rows; weights written to {args.out}")
        for row in rows:
            print(f"  {row[0]:24s} weight={float(row[1]):.4f}")
        return 0

    fitter = {
        "ols": ols_fit, "ms": ms_fit, "fma": fma_fit, "bma": bma_fit,
        "mma": mma_fit, "jma": jma_fit,
        "lae": lambda d, level: lae_fit(d, seed=args.seed, level=level),
    }[method]
    fit = fitter(data, level=args.level)
    rows = [
        [name, repr(float(est)), repr(float(se)), repr(float(lo)), repr(float(hi))]
        for name, est, se, lo, hi in zip(
            fit.names, fit.coefficients, fit.std_errors, fit.ci_lower, fit.ci_upper
        )
    ]
    _write_fit_csv(args.out, rows, ["term", "estimate", "std_error", "ci_lower", "ci_upper"])
    print(f"{fit.method} fit on {data.n} rows, {data.p} covariates; written to {args.out}")
    return 0


def _cmd_truth(args) -> int:
    rule = ALWAYS if args.rule == "always" else THRESHOLD
    # Same draws as truth_oracle; simulating here too exposes the MC error.
    panel = simulate_longitudinal(args.n, 6, make_rng(args.seed), intervention=rule)
    outcome = panel.y[:, 6]
    se = float(outcome.std(ddof=1) / np.sqrt(args.n))
    print(f"rule={args.rule} n={args.n} seed={args.seed}")
    print(f"mean counterfactual outcome at t=6: {outcome.mean():.4f} (mc se {se:.4f})")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="modelavg",
        description="Model averaging estimators and the three-study Monte Carlo harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one Monte Carlo study")
    sim.add_argument("--study", choices=("linear", "forecast", "causal"))
    sim.add_argument("--runs", type=int)
    sim.add_argument("--n", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--workers", type=int)
    sim.add_argument("--out")
    sim.add_argument("--truth-n", type=int, dest="truth_n")
    sim.add_argument("--full-scale", action="store_true", dest="full_scale")
    sim.add_argument("--config", help="key = value file mirroring the flags")
    sim.set_defaults(func=_cmd_simulate)

    fit = sub.add_parser("fit", help="fit one estimator to a CSV dataset")
    fit.add_argument("--method", choices=FIT_METHODS, required=True)
    fit.add_argument("--data", required=True)
    fit.add_argument("--response", help="response column name (default: first column)")
    fit.add_argument("--out", required=True)
    fit.add_argument("--level", type=float, default=0.95)
    fit.add_argument("--seed", type=int, default=0)
    fit.set_defaults(func=_cmd_fit)

    truth = sub.add_parser("truth", help="Monte Carlo counterfactual truth")
    truth.add_argument("--rule", choices=("always", "threshold"), required=True)
    truth.add_argument("--n", type=int, default=1_000_000)
    truth.add_argument("--seed", type=int, default=0)
    truth.set_defaults(func=_cmd_truth)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
