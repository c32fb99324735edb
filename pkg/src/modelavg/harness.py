"""Seeded parallel Monte Carlo execution of the three simulation studies.

Each run owns the counter-based stream matching its run index, so
results are independent of scheduling and worker count; per-run records
are persisted as line-delimited JSON before aggregation, which makes
interrupted studies resumable. Aggregation is a deterministic fold over
run index order and tables are emitted byte-identically.
"""

from __future__ import annotations

import json
import math
import multiprocessing
import os
import platform
from dataclasses import dataclass

import numpy as np

from . import __version__
from .classic import AveragedFit, criterion_weights, ms_fit, ols_fit
from .classic import _assemble, _coefficient_tables, bayes_variance, buckland_se
from .gformula import ALWAYS, THRESHOLD, sequential_gformula, truth_oracle
from .models import enumerate_all_subsets, fit_candidates
from .optimal import mma_fit
from .rng import child_seed, make_rng
from .simdata import LINEAR_COEFFICIENTS, gen_forecast_study, gen_linear_study, simulate_longitudinal
from .superlearner import (
    CAUSAL_LEARNERS,
    CAUSAL_PLUS_LEARNERS,
    SL_LEARNERS,
    SL_PLUS_LEARNERS,
    fit_super_learner,
    sl_predict,
)

__all__ = [
    "MetricsTable",
    "StudyConfig",
    "TableBlock",
    "emit_table",
    "run_study",
    "run_study1",
    "run_study2",
    "run_study3",
    "write_outputs",
]

STUDY1_METHODS = ("OLS", "MS", "FMA", "BMA", "MMA")
STUDY2_METHODS = ("OLS", "MS", "FMA", "BMA", "MMA", "SL", "SL+")
CAUSAL_COMBOS = (
    ("always", "without_oma"),
    ("always", "with_oma"),
    ("threshold", "without_oma"),
    ("threshold", "with_oma"),
)

DESK_SCALE = {"linear": (1000, 500), "forecast": (500, 500), "causal": (100, 1000)}
FULL_SCALE = {"linear": (5000, 500), "forecast": (5000, 500), "causal": (1000, 1000)}

RESOLVED_DECISIONS = (
    "baseline treatment: a0 = 0 under every regime; intervention rules apply from t = 1",
    "threshold rule: treat when l1 < 350 or l2 < 0.15 or l3 < -2, persistent once started",
    "z-variable truncation tails: lower draws from U(-10, -3), upper from U(3, 10)",
    "noise arguments N(mu, s) are read as standard deviations throughout",
    "candidate sets: FMA/BMA all subsets, MMA/JMA nested in column order",
    "study-2 test set: a fresh independent draw of size n per run",
    "super learner: 10 folds, NNLS meta weights normalized then refined by simplex QP",
    "stepwise selection: bidirectional by AIC starting from the full model",
)


@dataclass(frozen=True)
class StudyConfig:
    """Resolved configuration of one study execution."""

    study: str
    runs: int
    n: int
    seed: int = 20240
    workers: int = 1
    out_dir: str | None = None
    level: float = 0.95
    folds: int = 10
    truth_n: int = 1_000_000

    def __post_init__(self):
        if self.study not in ("linear", "forecast", "causal"):
            raise ValueError(f"unknown study {self.study!r}")
        if self.runs < 1:
            raise ValueError("at least one run required")
        if self.n < 10:
            raise ValueError("n must be at least 10")

    def cache_key(self) -> str:
        # Deliberately excludes runs/workers/out_dir: a cache stays valid
        # when a study is extended or re-run with another worker count.
        return json.dumps(
            {
                "study": self.study,
                "n": self.n,
                "seed": self.seed,
                "level": self.level,
                "folds": self.folds,
                "truth_n": self.truth_n if self.study == "causal" else None,
                "format": 1,
            },
            sort_keys=True,
        )


@dataclass(frozen=True)
class TableBlock:
    title: str
    columns: tuple[str, ...]
    rows: tuple[tuple[str, tuple], ...]


@dataclass(frozen=True)
class MetricsTable:
    study: str
    blocks: tuple[TableBlock, ...]


# ---------------------------------------------------------------------------
# Per-run workers (module level so they pickle for the process pool)


def _fma_bma_pair(data, level):
    """FMA and BMA from one shared all-subsets candidate fit."""
    models = fit_candidates(data, enumerate_all_subsets(data.p))
    B, V = _coefficient_tables(models, data.p)
    out = []
    for method in ("FMA", "BMA"):
        crit = [m.aic if method == "FMA" else m.bic for m in models]
        w = criterion_weights(crit)
        coef = w @ B
        if method == "FMA":
            ses = np.array([buckland_se(B[:, j], V[:, j], w) for j in range(data.p + 1)])
        else:
            ses = np.sqrt([bayes_variance(B[:, j], V[:, j], w) for j in range(data.p + 1)])
        out.append(_assemble(method, w, coef, ses, level, data.names))
    return out


def _classical_fits(data, level):
    """The five classical estimators with per-method failure capture."""
    fits: dict[str, AveragedFit] = {}
    errors: dict[str, str] = {}
    try:
        fits["FMA"], fits["BMA"] = _fma_bma_pair(data, level)
    except Exception as exc:
        errors["FMA"] = errors["BMA"] = str(exc)
    for name, call in (
        ("OLS", lambda: ols_fit(data, level)),
        ("MS", lambda: ms_fit(data, level)),
        ("MMA", lambda: mma_fit(data, level=level)),
    ):
        try:
            fits[name] = call()
        except Exception as exc:
            errors[name] = str(exc)
    return fits, errors


def _linear_run(args):
    run, n, seed, level = args
    data, mu = gen_linear_study(n, make_rng(seed, run))
    true_beta = LINEAR_COEFFICIENTS
    record = {"run": run}
    fits, errors = _classical_fits(data, level)
    for name, message in errors.items():
        record[name] = {"error": message}
    for name, fit in fits.items():
        hits = (fit.ci_lower[1:] <= true_beta) & (true_beta <= fit.ci_upper[1:])
        record[name] = {
            "coef": [float(v) for v in fit.coefficients[1:]],
            "se": [float(v) for v in fit.std_errors[1:]],
            "hit": [int(h) for h in hits],
            "mse": float(np.mean((fit.predict(data.X) - mu) ** 2)),
        }
    return record


def _forecast_run(args):
    run, n, seed, level, folds = args
    rng = make_rng(seed, run)
    train, _ = gen_forecast_study(n, rng)
    test, _ = gen_forecast_study(n, rng)
    record = {"run": run}

    def mspe(pred):
        return float(np.mean((pred - test.y) ** 2))

    fits, errors = _classical_fits(train, level)
    for name, message in errors.items():
        record[name] = {"error": message}
    for name, fit in fits.items():
        record[name] = {"mspe": mspe(fit.predict(test.X))}
    for name, learners, tag in (("SL", SL_LEARNERS, 0), ("SL+", SL_PLUS_LEARNERS, 1)):
        try:
            fit = fit_super_learner(train, learners, k=folds, seed=child_seed(seed, run, tag))
            record[name] = {
                "mspe": mspe(sl_predict(fit, test.X)),
                "weights": {spec.name: float(w)
                            for spec, w in zip(fit.learners, fit.meta_weights)},
            }
        except Exception as exc:
            record[name] = {"error": str(exc)}
    return record


def _causal_run(args):
    run, n, seed, folds = args
    panel = simulate_longitudinal(n, 6, make_rng(seed, run))
    record = {"run": run}
    for combo_idx, (rule_name, set_name) in enumerate(CAUSAL_COMBOS):
        rule = ALWAYS if rule_name == "always" else THRESHOLD
        learners = CAUSAL_LEARNERS if set_name == "without_oma" else CAUSAL_PLUS_LEARNERS
        key = f"{rule_name}_{set_name}"
        try:
            res = sequential_gformula(
                panel, rule, learners, k=folds, seed=child_seed(seed, run, combo_idx)
            )
            record[key] = {
                "psi": res.psi_hat,
                "weights": [stage["weights"] for stage in res.per_time],
            }
        except Exception as exc:
            record[key] = {"error": str(exc)}
    return record


# ---------------------------------------------------------------------------
# Execution with resumable per-run persistence


def _execute_runs(worker, arg_for_run, cfg: StudyConfig):
    cache_path = None
    records: dict[int, dict] = {}
    header = {"config": cfg.cache_key()}
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        cache_path = os.path.join(cfg.out_dir, f"runs_{cfg.study}.ndjson")
        if os.path.exists(cache_path):
            lines = []
            torn = False
            with open(cache_path) as fh:
                for raw in fh:
                    if not raw.strip():
                        continue
                    try:
                        lines.append(json.loads(raw))
                    except json.JSONDecodeError:
                        torn = True  # tail left by an interrupted run
                        break
            if lines:
                if lines[0] != header:
                    raise RuntimeError(
                        f"{cache_path} was produced by a different configuration; "
                        "remove it or choose another output directory"
                    )
                for rec in lines[1:]:
                    records[rec["run"]] = rec
            if torn:
                # rewrite the valid prefix so appends stay well formed
                with open(cache_path, "w") as fh:
                    for obj in lines:
                        fh.write(json.dumps(obj, sort_keys=True) + "\n")

    todo = [r for r in range(cfg.runs) if r not in records]
    out_fh = None
    if cache_path:
        fresh = not os.path.exists(cache_path) or os.path.getsize(cache_path) == 0
        out_fh = open(cache_path, "a")
        if fresh:
            out_fh.write(json.dumps(header, sort_keys=True) + "\n")

    def store(rec):
        records[rec["run"]] = rec
        if out_fh:
            out_fh.write(json.dumps(rec, sort_keys=True) + "\n")
            out_fh.flush()

    try:
        if cfg.workers > 1 and todo:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(processes=cfg.workers) as pool:
                for rec in pool.imap(worker, [arg_for_run(r) for r in todo], chunksize=1):
                    store(rec)
        else:
            for r in todo:
                store(worker(arg_for_run(r)))
    finally:
        if out_fh:
            out_fh.close()
    return [records[r] for r in range(cfg.runs)]


def _fmt(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".10g")


def _fmt_md(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".4g")


def emit_table(table: MetricsTable, fmt: str, path) -> None:
    """Write a metrics table as RFC-4180-style CSV or a markdown document.

    Output is a pure function of the table contents: emitting the same
    table twice gives byte-identical files.
    """
    if fmt not in ("csv", "markdown"):
        raise ValueError(f"unknown format {fmt!r}")
    columns: list[str] = []
    for block in table.blocks:
        for col in block.columns:
            if col not in columns:
                columns.append(col)
    lines = []
    if fmt == "csv":
        lines.append(",".join(["block", "label", *columns]))
        for block in table.blocks:
            for label, values in block.rows:
                cells = dict(zip(block.columns, values))
                lines.append(",".join(
                    [block.title, label, *(_fmt(cells.get(c, "")) for c in columns)]
                ))
    else:
        lines.append(f"# {table.study}")
        for block in table.blocks:
            lines.append("")
            lines.append(f"## {block.title}")
            lines.append("")
            lines.append("| |" + "|".join(block.columns) + "|")
            lines.append("|---|" + "|".join("---" for _ in block.columns) + "|")
            for label, values in block.rows:
                lines.append(f"|{label}|" + "|".join(_fmt_md(v) for v in values) + "|")
    with open(path, "w", newline="") as fh:
        fh.write("\r\n".join(lines) + "\r\n" if fmt == "csv" else "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Aggregation


def _ok(records, name):
    return [rec[name] for rec in records if "error" not in rec.get(name, {"error": 1})]


def run_study1(cfg: StudyConfig) -> MetricsTable:
    """Linear association study: point estimates, SEs, coverage, MSE."""
    records = _execute_runs(_linear_run, lambda r: (r, cfg.n, cfg.seed, cfg.level), cfg)
    coef_cols = tuple(f"b{j}" for j in range(1, 11))
    point_rows, se_rows, cover_rows = [], [], []
    mse_vals, valid_vals = [], []
    for name in STUDY1_METHODS:
        cells = _ok(records, name)
        valid_vals.append(len(cells))
        if not cells:
            point_rows.append((name, tuple("" for _ in coef_cols)))
            se_rows.append((f"{name} est", tuple("" for _ in coef_cols)))
            se_rows.append((f"{name} sim", tuple("" for _ in coef_cols)))
            cover_rows.append((name, tuple("" for _ in coef_cols)))
            mse_vals.append("")
            continue
        coefs = np.array([c["coef"] for c in cells])
        ses = np.array([c["se"] for c in cells])
        hits = np.array([c["hit"] for c in cells])
        point_rows.append((name, tuple(coefs.mean(axis=0))))
        se_rows.append((f"{name} est", tuple(ses.mean(axis=0))))
        se_rows.append((f"{name} sim", tuple(coefs.std(axis=0, ddof=1))))
        cover_rows.append((name, tuple(hits.sum(axis=0) / len(cells) * 100.0)))
        mse_vals.append(float(np.mean([c["mse"] for c in cells])))
    blocks = (
        TableBlock("point_estimates", coef_cols, tuple(point_rows)),
        TableBlock("standard_errors", coef_cols, tuple(se_rows)),
        TableBlock("coverage_percent", coef_cols, tuple(cover_rows)),
        TableBlock("mse_vs_true_mean", STUDY1_METHODS, (("MSE", tuple(mse_vals)),)),
        TableBlock("valid_runs", STUDY1_METHODS, (("runs", tuple(valid_vals)),)),
    )
    return MetricsTable("linear", blocks)


def run_study2(cfg: StudyConfig) -> MetricsTable:
    """Forecasting study: out-of-sample MSPE and super learner weights."""
    records = _execute_runs(
        _forecast_run, lambda r: (r, cfg.n, cfg.seed, cfg.level, cfg.folds), cfg
    )
    mspe_row, se_row, sd_row, valid_row = [], [], [], []
    for name in STUDY2_METHODS:
        cells = _ok(records, name)
        valid_row.append(len(cells))
        if not cells:
            mspe_row.append(""); se_row.append(""); sd_row.append("")
            continue
        vals = np.array([c["mspe"] for c in cells])
        mspe_row.append(vals.mean())
        sd = vals.std(ddof=1) if len(vals) > 1 else 0.0
        se_row.append(sd / math.sqrt(len(vals)))
        sd_row.append(sd)
    weight_rows = []
    learner_names = [spec.name for spec in SL_PLUS_LEARNERS]
    for lname in learner_names:
        row = []
        for sl_name, registry in (("SL", SL_LEARNERS), ("SL+", SL_PLUS_LEARNERS)):
            if lname not in {s.name for s in registry}:
                row.append("")
                continue
            cells = _ok(records, sl_name)
            row.append(float(np.mean([c["weights"][lname] for c in cells])) if cells else "")
        weight_rows.append((lname, tuple(row)))
    blocks = (
        TableBlock(
            "predictive_performance",
            STUDY2_METHODS,
            (
                ("MSPE", tuple(mspe_row)),
                ("se_of_mean", tuple(se_row)),
                ("sd_across_runs", tuple(sd_row)),
            ),
        ),
        TableBlock("learner_weights", ("SL", "SL+"), tuple(weight_rows)),
        TableBlock("valid_runs", STUDY2_METHODS, (("runs", tuple(valid_row)),)),
    )
    return MetricsTable("forecast", blocks)


def run_study3(cfg: StudyConfig) -> MetricsTable:
    """Causal study: bias of the sequential g-formula against the truth oracle."""
    records = _execute_runs(
        _causal_run, lambda r: (r, cfg.n, cfg.seed, cfg.folds), cfg
    )
    truths = {
        "always": truth_oracle(ALWAYS, cfg.truth_n, seed=cfg.seed + 1),
        "threshold": truth_oracle(THRESHOLD, cfg.truth_n, seed=cfg.seed + 2),
    }
    bias_rows = []
    for rule_name, set_name in CAUSAL_COMBOS:
        key = f"{rule_name}_{set_name}"
        cells = _ok(records, key)
        truth = truths[rule_name]
        if not cells:
            bias_rows.append((key, (truth, "", "", "", 0)))
            continue
        psis = np.array([c["psi"] for c in cells])
        mc_se = psis.std(ddof=1) / math.sqrt(len(psis)) if len(psis) > 1 else 0.0
        bias_rows.append(
            (key, (truth, psis.mean(), psis.mean() - truth, mc_se, len(cells)))
        )
    t_cols = tuple(f"t{t}" for t in range(7))
    weight_blocks = []
    for rule_name in ("always", "threshold"):
        key = f"{rule_name}_with_oma"
        cells = _ok(records, key)
        rows = []
        for spec in CAUSAL_PLUS_LEARNERS:
            if cells:
                per_t = tuple(
                    float(np.mean([c["weights"][t][spec.name] for c in cells]))
                    for t in range(7)
                )
            else:
                per_t = tuple("" for _ in range(7))
            rows.append((spec.name, per_t))
        weight_blocks.append(TableBlock(f"learner_weights_{rule_name}", t_cols, tuple(rows)))
    blocks = (
        TableBlock(
            "bias",
            ("truth", "mean_estimate", "bias", "mc_se", "valid_runs"),
            tuple(bias_rows),
        ),
        *weight_blocks,
    )
    return MetricsTable("causal", blocks)


def run_study(cfg: StudyConfig) -> MetricsTable:
    runner = {"linear": run_study1, "forecast": run_study2, "causal": run_study3}[cfg.study]
    table = runner(cfg)
    if cfg.out_dir:
        write_outputs(table, cfg)
    return table


def write_outputs(table: MetricsTable, cfg: StudyConfig) -> None:
    """Emit table_<study>.csv/.md and meta.txt into the output directory."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    emit_table(table, "csv", os.path.join(cfg.out_dir, f"table_{cfg.study}.csv"))
    emit_table(table, "markdown", os.path.join(cfg.out_dir, f"table_{cfg.study}.md"))
    meta = [
        f"modelavg version: {__version__}",
        f"python: {platform.python_version()}",
        f"numpy: {np.__version__}",
        f"study: {cfg.study}",
        f"runs: {cfg.runs}",
        f"n: {cfg.n}",
        f"seed: {cfg.seed}",
        f"level: {cfg.level}",
        f"folds: {cfg.folds}",
    ]
    if cfg.study == "causal":
        meta.append(f"truth_n: {cfg.truth_n}")
    meta.append("resolved design decisions:")
    meta.extend(f"  - {line}" for line in RESOLVED_DECISIONS)
    with open(os.path.join(cfg.out_dir, "meta.txt"), "w") as fh:
        fh.write("\n".join(meta) + "\n")
