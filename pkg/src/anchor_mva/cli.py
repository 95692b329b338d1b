"""``anchor-mva`` command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or input.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checks
from . import config as cfgmod
from .baselines import GdConfig
from .benchmark import SUMMARY_HEADER, BenchmarkGrids, SplitResult, run_env_benchmark, summarize, synthetic_env_dataset
from .config import ConfigError
from .data import DataBlock, DataError, encode_environment_anchor, load_csv, read_columns
from .estimators import EstimatorError, EstimatorSpec, FittedModel, fit_anchor, predict
from .metrics import anchor_residual_corr, mse
from .scm import ScmSpec, SweepResult, make_lowrank_coefficients, perturbation_sweep, sample
from .selection import (
    SELECTION_HEADER,
    Grid,
    TradeoffWeights,
    env_role_splits,
    grid_search,
    kfold_splits,
    pareto_front,
    pareto_select,
)

log = logging.getLogger("anchor_mva")


class _CsvSink:
    """Header-first CSV writer flushed per chunk, so a failure keeps earlier rows."""

    def __init__(self, path, header):
        self.path = Path(path)
        self.fh = self.path.open("w", newline="", encoding="utf-8")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(header)
        self.rows = 0

    def write(self, rows):
        for r in rows:
            self.writer.writerow(r)
            self.rows += 1
        self.fh.flush()

    def close(self):
        self.fh.close()


def _write_csv(path, header, rows) -> None:
    sink = _CsvSink(path, header)
    try:
        sink.write(rows)
    finally:
        sink.close()


def _derived(path: str, suffix: str, ext: str) -> str:
    p = Path(path)
    return str(p.with_name(f"{p.stem}_{suffix}{ext}"))


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


# -- helpers shared by commands -------------------------------------------------


def _scm_spec(scm: dict) -> ScmSpec:
    rank = scm["rank"]
    if isinstance(rank, tuple):
        rank = int(np.random.default_rng([scm["coef_seed"], 1]).integers(rank[0], rank[1] + 1))
    w = make_lowrank_coefficients(scm["d"], scm["p"], rank, seed=scm["coef_seed"],
                                  low=scm["coef_low"], high=scm["coef_high"])
    return ScmSpec(w, topology=scm["topology"], noise=scm["noise"], t_is_variance=scm["t_is_variance"])


def _load_block(data: dict) -> DataBlock:
    return load_csv(
        data["path"],
        data["roles"],
        default_role=data["default_role"],
        delimiter=data["delimiter"],
        decimal=data["decimal"],
        missing_sentinel=data["missing_sentinel"],
    )


# -- commands -------------------------------------------------------------------


def cmd_sweep(cfg: dict) -> int:
    scm, sw, run = cfg["scm"], cfg["sweep"], cfg["run"]
    spec = _scm_spec(scm)
    oracle_rank = min(spec.d, spec.p, int(np.linalg.matrix_rank(spec.w_true)))
    estimators = []
    for entry in sw["estimators"]:
        kind = entry["kind"]
        est = EstimatorSpec(
            kind,
            rank=entry.get("rank", oracle_rank) if kind in ("RRR", "RRRR", "OPLS", "PLS", "CCA") else None,
            alpha=entry.get("alpha", sw["alpha"]) if kind in ("Ridge", "RRRR") else 0.0,
        )
        estimators += [(est, g) for g in sw["gammas"]]
    t_grid = np.linspace(sw["t_min"], sw["t_max"], sw["t_steps"]).tolist()
    sink = _CsvSink(sw["out"], SweepResult.HEADER)
    try:
        result = perturbation_sweep(
            spec, estimators, t_grid, n=sw["n"], replicates=sw["replicates"], base_seed=run["seed"],
            n_test=sw["n_test"], metric_names=sw["metrics"], threads=run["threads"],
            on_replicate=lambda recs: sink.write(SweepResult(recs).rows()),
        )
    finally:
        sink.close()
    summary_path = sw["summary_out"] or _derived(sw["out"], "summary", ".csv")
    header = ("estimator", "gamma", "t", "metric", "count", "mean", "sem", "lower", "upper")
    _write_csv(summary_path, header, (
        [s["estimator"], s["gamma"], repr(float(s["t"])), s["metric"], str(s["count"]),
         *(repr(s[k]) for k in ("mean", "sem", "lower", "upper"))]
        for s in result.summary()
    ))
    log.info("wrote %d rows to %s and summary to %s", sink.rows, sw["out"], summary_path)
    return 0


def cmd_benchmark_env(cfg: dict) -> int:
    data, gd, bm, run = cfg["data"], cfg["gd"], cfg["benchmark"], cfg["run"]
    if data["path"]:
        block = _load_block(data)
        if block.env is None:
            raise DataError("benchmark-env needs an environment or season column")
    else:
        log.warning("no data.path given; running on a synthetic 4-group dataset")
        block = synthetic_env_dataset(bm["synthetic_n_per_group"], seed=run["seed"])
    grids = BenchmarkGrids(bm["gammas"], bm["alphas"], bm["lambdas"], bm["pls_components"])
    gd_cfg = GdConfig(learning_rate=gd["lr"], max_epochs=gd["max_epochs"], patience=gd["patience"],
                      tolerance=gd["tol"], max_halvings=gd["max_halvings"], seed=run["seed"])
    sink = _CsvSink(bm["out"], SplitResult.HEADER)
    try:
        results = run_env_benchmark(
            block, bm["models"], grids, gd_cfg, gd["cvp_bins"], bm["scheme"],
            (bm["k_train"], bm["k_val"], bm["k_test"]), run["threads"],
            on_split=lambda rs: sink.write(r.csv_fields() for r in rs),
        )
    finally:
        sink.close()
    summary_path = bm["summary_out"] or _derived(bm["out"], "summary", ".csv")
    _write_csv(summary_path, SUMMARY_HEADER, summarize(results))
    log.info("wrote %d split rows to %s and summary to %s", sink.rows, bm["out"], summary_path)
    return 0


def _selection_data(cfg: dict):
    """(block, splits, test block or None) for the select command."""
    sel, run = cfg["select"], cfg["run"]
    seed = run["seed"]
    if sel["source"] == "scm":
        spec = _scm_spec(cfg["scm"])
        train = sample(spec, sel["n_train"], 1.0, seed=[seed, 0])
        val = sample(spec, sel["n_val"], 1.0, seed=[seed, 1])
        test = sample(spec, sel["n_test"], sel["t_test"], seed=[seed, 2]) if sel["n_test"] >= 2 else None
        block = DataBlock(x=np.vstack([train.x, val.x]), y=np.vstack([train.y, val.y]),
                          a=np.vstack([train.a, val.a]))
        n_tr, n = train.n, block.n
        if sel["splits"] == "holdout":
            splits = [(np.arange(n_tr), np.arange(n_tr, n))]
        elif sel["splits"] == "kfold":
            splits = kfold_splits(n, sel["k"], seed)
        else:
            raise ConfigError("select.splits = 'groups' needs select.source = 'data'")
        return block, splits, test
    block = _load_block(cfg["data"])
    if block.a is None:
        block = encode_environment_anchor(block)
    if sel["splits"] == "holdout":
        perm = np.random.default_rng(seed).permutation(block.n)
        n_val = max(1, block.n // 5)
        splits = [(np.sort(perm[n_val:]), np.sort(perm[:n_val]))]
    elif sel["splits"] == "kfold":
        splits = kfold_splits(block.n, sel["k"], seed)
    else:
        if block.env is None:
            raise DataError("select.splits = 'groups' needs an environment column")
        g = len(set(block.env.tolist()))
        splits = [sp[:2] for sp in env_role_splits(block.env, g - 1, 1, 0, scheme="unique")]
    return block, splits, None


def cmd_select(cfg: dict) -> int:
    sel, run = cfg["select"], cfg["run"]
    block, splits, test = _selection_data(cfg)
    grid = Grid(sel["gammas"], sel["alphas"], sel["ranks"])
    weights = TradeoffWeights(sel["w_error"], sel["w_corr"], sel["eta_error"], sel["eta_corr"])
    scale = cfg["data"]["scale"]
    table = grid_search(block, sel["kind"], grid, splits, scale=scale, threads=run["threads"])
    chosen = pareto_select(table, weights)
    _write_csv(sel["out"], SELECTION_HEADER, (r.csv_fields() for r in table))

    # per (gamma, alpha) pair the rank with the best score, plus the non-dominated set
    front = pareto_front(table)
    best_in_pair: dict[tuple, float] = {}
    for r in table:
        if r.ok:
            key = (r.gamma, r.alpha)
            best_in_pair[key] = min(best_in_pair.get(key, math.inf), r.score)
    pareto_path = sel["pareto_out"] or _derived(sel["out"], "pareto", ".csv")
    _write_csv(pareto_path, ("gamma", "alpha", "rank", "val_mse", "val_abscorr", "score", "on_front", "best_rank_for_pair"), (
        [*r.csv_fields()[:3], _fmt(r.val_mse), _fmt(r.val_abscorr), _fmt(r.score), str(int(f)),
         str(int(r.ok and r.score == best_in_pair[(r.gamma, r.alpha)]))]
        for r, f in zip(table, front)
    ))

    out = {
        "kind": sel["kind"],
        "gamma": chosen.csv_fields()[0],
        "alpha": chosen.alpha,
        "rank": chosen.rank,
        "val_mse": chosen.val_mse,
        "val_abscorr": chosen.val_abscorr,
        "score": chosen.score,
        "weights": {"w_error": weights.w_error, "w_corr": weights.w_corr},
        "grid_size": len(table),
        "failed_cells": sum(r.n_failed for r in table),
    }
    if test is not None:
        spec = EstimatorSpec(sel["kind"], rank=chosen.rank, alpha=chosen.alpha or 0.0)
        model = fit_anchor(spec, block.subset(splits[0][0]), chosen.gamma, scale=scale)
        y_hat = predict(model, test.x)
        out["test_t"] = sel["t_test"]
        out["test_mse"] = mse(test.y, y_hat)
        out["test_abscorr"] = anchor_residual_corr(test.y, y_hat, test.a)
    chosen_path = sel["chosen_out"] or _derived(sel["out"], "chosen", ".json")
    Path(chosen_path).write_text(json.dumps(out, indent=2) + "\n", encoding="utf-8")
    log.info("selected %s from %d grid points", out, len(table))
    return 0


def model_document(model: FittedModel, block: DataBlock, source: str) -> dict:
    """Serialisable model with data provenance kept under ``metadata``."""
    body = model.to_dict()
    st = dict(body["standardization"] or {})
    meta = {
        "source": source,
        "n_train": block.n,
        "dropped_rows": block.dropped_rows,
        "anchor_names": list(block.a_names),
        "anchor_mean": st.pop("a_mean", None),
        "anchor_scale": st.pop("a_scale", None),
    }
    body["standardization"] = st or None
    return {"model": body, "metadata": meta}


def cmd_fit(cfg: dict) -> int:
    data, fit_cfg = cfg["data"], cfg["fit"]
    block = _load_block(data)
    if block.a is None and block.env is not None and fit_cfg["gamma"] != 1.0:
        block = encode_environment_anchor(block)
    spec = EstimatorSpec(fit_cfg["kind"], rank=fit_cfg["rank"], alpha=fit_cfg["alpha"])
    model = fit_anchor(spec, block, fit_cfg["gamma"], scale=data["scale"])
    doc = model_document(model, block, str(data["path"]))
    Path(fit_cfg["out"]).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    log.info("wrote %s model to %s", spec.label, fit_cfg["out"])
    return 0


def load_model(path) -> FittedModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"model file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    try:
        return FittedModel.from_dict(doc["model"] if "model" in doc else doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path} is not a model file: {exc}") from None


def cmd_predict(cfg: dict) -> int:
    data, pr = cfg["data"], cfg["predict"]
    model = load_model(pr["model"])
    cols = [c for c, r in data["roles"].items() if r == "predictor"] or list(model.x_names)
    if not cols:
        raise ConfigError("model has no predictor names; give --role <column>=predictor")
    if len(cols) != model.d:
        raise DataError(f"model expects {model.d} predictor columns, got {len(cols)}")
    x = read_columns(data["path"], cols, delimiter=data["delimiter"], decimal=data["decimal"])
    y_hat = predict(model, x)
    names = list(model.y_names) or [f"y{j}" for j in range(model.p)]
    _write_csv(pr["out"], names, ([repr(float(v)) for v in row] for row in y_hat))
    log.info("wrote %d predictions to %s", y_hat.shape[0], pr["out"])
    return 0


def cmd_verify(cfg: dict) -> int:
    results = checks.run_all(seed=cfg["run"]["seed"])
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


COMMANDS = {
    "sweep": cmd_sweep,
    "benchmark-env": cmd_benchmark_env,
    "select": cmd_select,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "verify": cmd_verify,
}


# -- argument parsing -------------------------------------------------------------


def _kv(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anchor-mva", description="Anchor-regularised multivariate regression.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", help="TOML config file")
        p.add_argument("--set", action="append", default=[], type=_kv, metavar="SECTION.KEY=VALUE",
                       help="override any config value (TOML literal syntax)")
        p.add_argument("--seed", type=int, help="base seed (falls back to $ANCHOR_MVA_SEED, then 0)")
        p.add_argument("--threads", type=int, help="worker processes")
        if name != "verify":
            p.add_argument("--out", help="primary output path")
        if name in ("benchmark-env", "select", "fit", "predict"):
            p.add_argument("--data", help="CSV dataset")
            p.add_argument("--role", action="append", default=[], type=_kv, metavar="COLUMN=ROLE")
        if name == "benchmark-env":
            p.add_argument("--lr", type=float)
            p.add_argument("--patience", type=int)
            p.add_argument("--tol", type=float)
            p.add_argument("--max-epochs", type=int)
            p.add_argument("--lambda", dest="lam", type=float, help="single IRM/CVP penalty instead of the grid")
            p.add_argument("--cvp-bins", type=int, help="cross environments with this many outcome quantile bins")
            p.add_argument("--models", help="comma-separated model names")
        if name == "predict":
            p.add_argument("--model", help="model JSON written by fit")
    return parser


_OUT_KEY = {"sweep": "sweep", "benchmark-env": "benchmark", "select": "select", "fit": "fit", "predict": "predict"}


def overrides_from_args(args) -> list[tuple[str, str, object]]:
    ov = []
    for key, value in args.set:
        if "." not in key:
            raise ConfigError(f"--set needs SECTION.KEY, got {key!r}")
        sec, k = key.split(".", 1)
        ov.append((sec, k, cfgmod.parse_value(value)))
    simple = {"seed": ("run", "seed"), "threads": ("run", "threads")}
    if args.command != "verify":
        simple["out"] = (_OUT_KEY[args.command], "out")
    for attr, (sec, k) in simple.items():
        v = getattr(args, attr, None)
        if v is not None:
            ov.append((sec, k, v))
    if getattr(args, "data", None):
        ov.append(("data", "path", args.data))
    if getattr(args, "role", None):
        ov.append(("data", "roles", dict(args.role)))
    if args.command == "benchmark-env":
        for attr, k in (("lr", "lr"), ("patience", "patience"), ("tol", "tol"),
                        ("max_epochs", "max_epochs"), ("cvp_bins", "cvp_bins")):
            v = getattr(args, attr)
            if v is not None:
                ov.append(("gd", k, v))
        if args.lam is not None:
            ov.append(("benchmark", "lambdas", [args.lam]))
        if args.models:
            ov.append(("benchmark", "models", [m.strip() for m in args.models.split(",")]))
    if getattr(args, "model", None):
        ov.append(("predict", "model", args.model))
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = cfgmod.load(args.command, args.config, overrides_from_args(args))
        return COMMANDS[args.command](cfg)
    except (ConfigError, DataError, EstimatorError) as exc:
        print(f"anchor-mva: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"anchor-mva: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
