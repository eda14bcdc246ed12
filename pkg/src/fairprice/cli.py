"""Command-line front end.

Subcommands: ``synth`` (write a synthetic portfolio), ``fit`` (train one
model and report its metrics), ``sweep`` (grid of architecture x lambda x
seed, one tidy CSV row per run plus trade-off figures), ``hgr`` (dependence
estimate between two columns of a CSV).

Every command is deterministic given its inputs and seeds. Each run writes a
``manifest.json`` describing the command, configuration, input hashes and
output files; the wall-clock entry is the only field that varies between
identical runs. Data outputs are written atomically (temp file + rename).
"""

import argparse
import csv
import hashlib
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .data import (
    SchemaConfig,
    generate_frequency_synthetic,
    generate_synthetic,
    load_csv,
    save_csv,
    split,
    synthetic_schema,
)
from .dependence import HgrConfig, hgr_nn, hgr_witsenhausen, rdc
from .fairmetrics import report_csv_header, report_csv_row, report_to_json
from .fairtrain import FairTrainConfig, train_dp, train_eo
from .models import TaskSpec
from .numkit import Rng
from .pricing import (
    PricingConfig,
    build_autoencoder,
    fit_two_stage,
    model_to_dict,
    save_model,
)
from .report import MetricConfig, evaluate_model
from . import figures

MANIFEST_FORMAT = "fairprice-manifest"
MANIFEST_VERSION = 1

SWEEP_COLUMNS = [
    "arch", "lambda", "seed", "acc", "mse", "gini", "edr", "p_rule", "di",
    "fair_quant", "fair_quant_eo", "hgr_nn", "hgr_rdc", "hgr_c_s",
    "hgr_yhat_c", "hgr_yhat_g", "status",
]

ERROR_CODES = {
    ValueError: "invalid_input",
    FileNotFoundError: "missing_file",
    FloatingPointError: "numerical_failure",
    RuntimeError: "fit_failed",
}


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_json(path, doc):
    _atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir, command, args_doc, seeds, inputs, outputs, started):
    doc = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "command": command,
        "args": args_doc,
        "seeds": seeds,
        "inputs_sha256": {os.path.basename(p): _sha256(p) for p in inputs},
        "outputs": sorted(outputs),
        "wall_clock_s": round(time.time() - started, 3),
    }
    _atomic_write_json(os.path.join(out_dir, "manifest.json"), doc)


def _resolve(workdir, path):
    if path is None:
        return None
    return path if os.path.isabs(path) else os.path.join(workdir, path)


def _ensure_out_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise CliError("unwritable_path", f"cannot create output directory {path}: {exc}")
    return path


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args):
    started = time.time()
    out_dir = _ensure_out_dir(args.out)
    if args.kind == "binary":
        pf = generate_synthetic(args.n, args.seed, spatial_sensitive=args.spatial)
        schema = synthetic_schema(spatial_sensitive=args.spatial)
    else:
        pf = generate_frequency_synthetic(args.n, args.seed)
        schema = SchemaConfig(
            roles={
                "experience": "policy",
                "region_wealth": "geo",
                "engine_power": "car",
                "gender": "sensitive",
                "claim_count": "target",
            },
            task="frequency",
        )
    data_path = os.path.join(out_dir, "data.csv")
    schema_path = os.path.join(out_dir, "schema.json")
    tmp_path = data_path + ".build"
    save_csv(pf, tmp_path)
    os.replace(tmp_path, data_path)
    _atomic_write_json(schema_path, schema.to_json())
    _write_manifest(
        out_dir, "synth",
        {"n": args.n, "seed": args.seed, "kind": args.kind, "spatial": args.spatial},
        [args.seed], [data_path], ["data.csv", "schema.json"], started,
    )
    print(json.dumps({"written": [data_path, schema_path]}))
    return 0


# ---------------------------------------------------------------------------
# fit / sweep shared pipeline
# ---------------------------------------------------------------------------


def _load_portfolio(data_path, schema_path):
    schema = SchemaConfig.load(schema_path)
    return load_csv(data_path, schema), schema


def _task_from(schema: SchemaConfig, task_flag, portfolio):
    name = task_flag or schema.task
    exposure_used = portfolio.exposure is not None and name == "frequency"
    return TaskSpec(name, exposure_used)


def run_experiment(data_path, schema_path, arch, task_flag, penalty, objective,
                   lam, seed, train_frac=0.8, epochs=None, batch_size=None,
                   metric_cfg=None):
    """Load, split, train one model, evaluate on the held-out split.

    The shared path behind both ``fit`` and each ``sweep`` cell, so a sweep
    row and a single fit with the same settings are the same computation.
    """
    portfolio, schema = _load_portfolio(data_path, schema_path)
    task = _task_from(schema, task_flag, portfolio)
    train, test = split(portfolio, train_frac, seed)
    pricing_cfg = PricingConfig(seed=seed, geo_coord_names=schema.geo_coords or None)
    if epochs:
        pricing_cfg.epochs = epochs
    if batch_size:
        pricing_cfg.batch_size = batch_size

    fair_cfg = FairTrainConfig(
        penalty=penalty, objective=objective, lam=lam, seed=seed,
        epochs=pricing_cfg.epochs, batch_size=pricing_cfg.batch_size,
    )
    if arch == "two-stage":
        model = fit_two_stage(train, task, pricing_cfg)
        trace = (
            train_eo(model, train, fair_cfg)
            if objective == "eo"
            else train_dp(model, train, fair_cfg)
        )
    elif arch == "autoencoder":
        model = build_autoencoder(train, task, pricing_cfg, seed)
        trace = (
            train_eo(model, train, fair_cfg)
            if objective == "eo"
            else train_dp(model, train, fair_cfg)
        )
    else:
        raise CliError("invalid_input", f"unknown architecture {arch!r}")

    report = evaluate_model(model, test, metric_cfg or MetricConfig())
    return model, trace, report, test


def cmd_fit(args):
    started = time.time()
    out_dir = _ensure_out_dir(args.out)
    model, trace, report, test = run_experiment(
        args.data, args.schema, args.arch, args.task, args.penalty,
        args.objective, getattr(args, "lambda"), args.seed,
        epochs=args.epochs, batch_size=args.batch_size,
    )
    outputs = []

    model_path = os.path.join(out_dir, "model.json")
    _atomic_write_text(model_path, json.dumps(model_to_dict(model)))
    outputs.append("model.json")

    trace_path = os.path.join(out_dir, "trace.csv")
    trace.save_csv(trace_path + ".build")
    os.replace(trace_path + ".build", trace_path)
    outputs.append("trace.csv")

    report_doc = report_to_json(report)
    report_doc["manifest"] = "manifest.json"
    _atomic_write_json(os.path.join(out_dir, "report.json"), report_doc)
    outputs.append("report.json")

    report_csv = os.path.join(out_dir, "report.csv")
    with open(report_csv + ".build", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(report_csv_header())
        writer.writerow(report_csv_row(report))
    os.replace(report_csv + ".build", report_csv)
    outputs.append("report.csv")

    if not args.no_figures:
        from .pricing import predict

        pred = predict(model, test)
        if test.s.shape[1] == 1 and set(np.unique(test.s[:, 0])).issubset({0.0, 1.0}):
            fig_path = os.path.join(out_dir, "prediction_distribution.png")
            figures.prediction_distribution(pred, test.s[:, 0], fig_path)
            outputs.append("prediction_distribution.png")
        figures.training_trace(trace.rows, os.path.join(out_dir, "training_trace.png"))
        outputs.append("training_trace.png")

    _write_manifest(
        out_dir, "fit",
        {
            "data": os.path.basename(args.data), "schema": os.path.basename(args.schema),
            "arch": args.arch, "task": args.task, "penalty": args.penalty,
            "objective": args.objective, "lambda": getattr(args, "lambda"),
            "seed": args.seed, "epochs": args.epochs, "batch_size": args.batch_size,
        },
        [args.seed], [args.data, args.schema], outputs, started,
    )
    print(json.dumps({"out": out_dir, "outputs": sorted(outputs)}))
    return 0


def _sweep_cell(params):
    """One (arch, lambda, seed) run; returns a tidy CSV row dict."""
    arch, lam, seed, data, schema, task, penalty, objective, epochs, batch_size, lean = params
    row = {"arch": arch, "lambda": lam, "seed": seed, "status": "ok"}
    try:
        metric_cfg = MetricConfig()
        if lean:
            metric_cfg.compute_hgr = False
        _, _, report, _ = run_experiment(
            data, schema, arch, task, penalty, objective, lam, seed,
            epochs=epochs, batch_size=batch_size, metric_cfg=metric_cfg,
        )
        row.update(
            {
                "acc": report.accuracy, "mse": report.mse, "gini": report.gini,
                "edr": report.edr, "p_rule": report.p_rule,
                "di": report.disparate_impact, "fair_quant": report.fair_quant,
                "fair_quant_eo": report.fair_quant_eo, "hgr_nn": report.hgr_nn,
                "hgr_rdc": report.hgr_rdc, "hgr_c_s": report.hgr_component_car_s,
                "hgr_yhat_c": report.hgr_pred_car, "hgr_yhat_g": report.hgr_pred_geo,
            }
        )
    except Exception as exc:  # a failed cell must not sink the sweep
        row["status"] = f"error: {exc}"
    return row


def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def cmd_sweep(args):
    started = time.time()
    out_dir = _ensure_out_dir(args.out)
    lambdas = [float(v) for v in args.lambdas.split(",") if v != ""]
    seeds = [int(v) for v in args.seeds.split(",") if v != ""]
    archs = [a.strip() for a in args.arch.split(",") if a.strip()]
    for arch in archs:
        if arch not in ("two-stage", "autoencoder"):
            raise CliError("invalid_input", f"unknown architecture {arch!r}")

    cells = [
        (arch, lam, seed, args.data, args.schema, args.task, args.penalty,
         args.objective, args.epochs, args.batch_size, args.lean_metrics)
        for arch in archs
        for lam in lambdas
        for seed in seeds
    ]
    workers = args.workers
    env_cap = os.environ.get("FAIRPRICE_THREADS")
    if env_cap:
        workers = min(workers, max(1, int(env_cap)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]

    order = {
        (arch, lam, seed): i
        for i, (arch, lam, seed) in enumerate(
            (arch, lam, seed) for arch in archs for lam in lambdas for seed in seeds
        )
    }
    rows.sort(key=lambda r: order[(r["arch"], r["lambda"], r["seed"])])

    sweep_path = os.path.join(out_dir, "sweep.csv")
    with open(sweep_path + ".build", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(row.get(c)) for c in SWEEP_COLUMNS])
    os.replace(sweep_path + ".build", sweep_path)
    outputs = ["sweep.csv"]

    failures = [r for r in rows if r["status"] != "ok"]
    for failure in failures:
        print(
            json.dumps({"warning": "cell_failed", "cell": {k: failure[k] for k in ("arch", "lambda", "seed")}, "detail": failure["status"]}),
            file=sys.stderr,
        )

    if not args.no_figures:
        task_kind = args.task or SchemaConfig.load(args.schema).task
        figures.sweep_tradeoff(rows, os.path.join(out_dir, "sweep_tradeoff.png"), task_kind)
        outputs.append("sweep_tradeoff.png")

    _write_manifest(
        out_dir, "sweep",
        {
            "data": os.path.basename(args.data), "schema": os.path.basename(args.schema),
            "arch": archs, "lambdas": lambdas, "seeds": seeds, "task": args.task,
            "penalty": args.penalty, "objective": args.objective,
            "epochs": args.epochs, "batch_size": args.batch_size,
            "failed_cells": len(failures),
        },
        seeds, [args.data, args.schema], outputs, started,
    )
    print(json.dumps({"out": out_dir, "rows": len(rows), "failed": len(failures)}))
    return 0


# ---------------------------------------------------------------------------
# hgr
# ---------------------------------------------------------------------------


def cmd_hgr(args):
    from .data import read_table

    table = read_table(args.data)
    cols = [c.strip() for c in args.cols.split(",")]
    if len(cols) != 2:
        raise CliError("invalid_input", "--cols expects exactly two column names: u,v")
    for col in cols:
        if col not in table:
            raise CliError("invalid_input", f"column {col!r} not in {args.data}")

    def parse(col):
        try:
            return np.array([float(v) for v in table[col]])
        except ValueError:
            raise CliError("invalid_input", f"column {col!r} has non-numeric cells")

    u, v = parse(cols[0]), parse(cols[1])
    if args.estimator == "nn":
        est = hgr_nn(u, v, HgrConfig(seed=args.seed))
    elif args.estimator == "witsenhausen":
        est = hgr_witsenhausen(u, v, bins=args.bins)
    else:
        est = rdc(u, v, rng=Rng(args.seed))
    print(
        json.dumps(
            {
                "estimator": est.estimator,
                "value": est.value,
                "columns": cols,
                "n": int(u.size),
                "diagnostics": {k: v for k, v in est.diagnostics.items() if not isinstance(v, np.ndarray)},
            }
        )
    )
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fairprice",
        description="Fairness-constrained insurance pricing toolkit",
    )
    parser.add_argument("--workdir", default=".", help="base directory for relative paths")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic portfolio CSV + schema")
    p_synth.add_argument("--n", type=int, required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--kind", choices=["binary", "frequency"], default="binary")
    p_synth.add_argument("--spatial", action="store_true",
                         help="use latitude/longitude as the sensitive attributes")
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_fit = sub.add_parser("fit", help="fit one model and report fairness/performance")
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--schema", required=True)
    p_fit.add_argument("--arch", choices=["two-stage", "autoencoder"], required=True)
    p_fit.add_argument("--task", choices=["binary", "frequency", "severity"], default=None)
    p_fit.add_argument("--penalty", choices=["none", "corr", "simple", "hgr"], default="none")
    p_fit.add_argument("--objective", choices=["dp", "eo"], default="dp")
    p_fit.add_argument("--lambda", type=float, default=0.0)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--epochs", type=int, default=None)
    p_fit.add_argument("--batch-size", type=int, default=None)
    p_fit.add_argument("--no-figures", action="store_true")
    p_fit.add_argument("--out", required=True)
    p_fit.set_defaults(func=cmd_fit)

    p_sweep = sub.add_parser("sweep", help="grid of (arch x lambda x seed) runs")
    p_sweep.add_argument("--data", required=True)
    p_sweep.add_argument("--schema", required=True)
    p_sweep.add_argument("--arch", default="two-stage,autoencoder",
                         help="comma-separated architectures")
    p_sweep.add_argument("--lambdas", required=True, help="comma-separated penalty weights")
    p_sweep.add_argument("--seeds", required=True, help="comma-separated seeds")
    p_sweep.add_argument("--task", choices=["binary", "frequency", "severity"], default=None)
    p_sweep.add_argument("--penalty", choices=["none", "corr", "simple", "hgr"], default="hgr")
    p_sweep.add_argument("--objective", choices=["dp", "eo"], default="dp")
    p_sweep.add_argument("--epochs", type=int, default=None)
    p_sweep.add_argument("--batch-size", type=int, default=None)
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.add_argument("--lean-metrics", action="store_true",
                         help="skip the dependence-estimator columns")
    p_sweep.add_argument("--no-figures", action="store_true")
    p_sweep.add_argument("--out", required=True)
    p_sweep.set_defaults(func=cmd_sweep)

    p_hgr = sub.add_parser("hgr", help="dependence estimate between two CSV columns")
    p_hgr.add_argument("--data", required=True)
    p_hgr.add_argument("--cols", required=True, help="two column names: u,v")
    p_hgr.add_argument("--estimator", choices=["nn", "witsenhausen", "rdc"], default="nn")
    p_hgr.add_argument("--bins", type=int, default=12)
    p_hgr.add_argument("--seed", type=int, default=0)
    p_hgr.set_defaults(func=cmd_hgr)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for attr in ("data", "schema", "out"):
        if hasattr(args, attr):
            setattr(args, attr, _resolve(args.workdir, getattr(args, attr)))
    try:
        return args.func(args)
    except CliError as exc:
        print(json.dumps({"error": {"code": exc.code, "message": str(exc)}}), file=sys.stderr)
        return 1
    except Exception as exc:
        code = ERROR_CODES.get(type(exc), "internal")
        print(json.dumps({"error": {"code": code, "message": str(exc)}}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
