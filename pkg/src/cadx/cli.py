"""Command-line entry point: ``cadx synth|features|optimize|report``.

Experiments are described by a JSON run manifest; command-line flags
override its fields.  Every CSV written here starts with a
``# config_sha256=<hash>`` line computed from the resolved configuration
(output locations excluded), so identical runs give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .boosting import GBTParams
from .dataset import LabeledDataset, read_features_csv, write_features_csv
from .evaluation import (
    REPORT_HEADER,
    ExperimentConfig,
    ExperimentReport,
    RepeatResult,
    raw_csv,
    report_json,
    roc_curve_points,
    run_experiment,
    table_csv,
)
from .hpo import ParamSpace, ParamSpec, TpeConfig, svm_space, trial_log_csv, xgboost_space
from .synthdata import SynthConfig, generate_dataset
from .texture import LbpParams, lbp_top
from .utils import atomic_write_text, config_hash, format_float, read_csv_lines
from .volume import VolumeError, load_nodule_cube, read_manifest

CACHE_ENV = "CADX_CACHE_DIR"
METRICS = ("validation_loss", "auc", "accuracy")

DEFAULTS = {
    "dataset": None,
    "classifiers": ["xgboost", "svm"],
    "methods": ["random", "tpe"],
    "budgets": [10, 100, 200, 1000],
    "n_repeats": 10,
    "base_seed": 0,
    "out": "results",
    "cache_dir": None,
    "side": 64,
    "lbp_combos": [[7, 40], [7, 48], [8, 40], [8, 48]],
    "gbt_params": {},
    "svm_params": {},
    "tpe": {},
}


class CliError(Exception):
    """User-facing failure; reported on stderr with a nonzero exit."""


def _header(h: str) -> str:
    return f"config_sha256={h}"


# ------------------------------------------------------------ run manifest


def _csv_list(text, conv=str):
    return [conv(t) for t in text.split(",") if t.strip()]


def load_run_config(args) -> dict:
    """Merge defaults, the JSON manifest (if any) and command-line overrides."""
    cfg = json.loads(json.dumps(DEFAULTS))
    if getattr(args, "manifest", None):
        try:
            with open(args.manifest, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read run manifest {args.manifest}: {exc}") from exc
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise CliError(f"unknown run manifest fields: {', '.join(sorted(unknown))}")
        cfg.update(loaded)
        # relative paths in a manifest are relative to the manifest itself
        base = Path(args.manifest).resolve().parent
        for key in ("dataset", "out", "cache_dir"):
            if key in loaded and loaded[key] is not None and not os.path.isabs(loaded[key]):
                cfg[key] = str(base / loaded[key])
    overrides = {
        "dataset": getattr(args, "dataset", None),
        "out": getattr(args, "out", None),
        "base_seed": getattr(args, "seed", None),
        "n_repeats": getattr(args, "n_repeats", None),
        "classifiers": getattr(args, "classifiers", None),
        "methods": getattr(args, "methods", None),
        "budgets": getattr(args, "budgets", None),
    }
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if os.environ.get(CACHE_ENV):
        cfg["cache_dir"] = os.environ[CACHE_ENV]
    if cfg["cache_dir"] is None:
        cfg["cache_dir"] = str(Path(cfg["out"]) / "features")
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    for c in cfg["classifiers"]:
        if c not in ("xgboost", "svm"):
            raise CliError(f"unknown classifier {c!r}")
    for m in cfg["methods"]:
        if m not in ("random", "tpe"):
            raise CliError(f"unknown search method {m!r}")
    if not cfg["budgets"] or any(int(b) != b or b < 1 for b in cfg["budgets"]):
        raise CliError(f"budgets must be positive integers, got {cfg['budgets']}")
    if int(cfg["n_repeats"]) < 1:
        raise CliError("n_repeats must be >= 1")
    if int(cfg["side"]) < 1:
        raise CliError("side must be >= 1")
    try:
        GBTParams(**cfg["gbt_params"])
        TpeConfig(**cfg["tpe"])
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid parameter override: {exc}") from exc
    combos = {tuple(int(v) for v in c) for c in cfg["lbp_combos"]}
    rs, ps = {c[0] for c in combos}, {c[1] for c in combos}
    if not combos or combos != {(r, q) for r in rs for q in ps}:
        raise CliError(f"lbp_combos must form a full R x P grid, got {cfg['lbp_combos']}")
    unknown_svm = set(cfg["svm_params"]) - {"C", "gamma_rbf", "tol", "max_passes", "max_updates"}
    if unknown_svm:
        raise CliError(f"unknown svm parameters: {', '.join(sorted(unknown_svm))}")


# ---------------------------------------------------------------- features


def _dataset_digest(manifest_path: Path) -> str:
    return hashlib.sha256(manifest_path.read_bytes()).hexdigest()


def feature_hash(cfg: dict, combo) -> str:
    manifest = Path(cfg["dataset"])
    return config_hash({"dataset": _dataset_digest(manifest), "side": int(cfg["side"]),
                        "R": int(combo[0]), "P": int(combo[1])})


def feature_path(cfg: dict, combo) -> Path:
    return Path(cfg["cache_dir"]) / f"features_R{combo[0]}_P{combo[1]}.csv"


def _cached(path: Path, h: str) -> bool:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.readline().rstrip("\n") == f"# {_header(h)}"
    except OSError:
        return False


def ensure_features(cfg: dict, log=print) -> dict:
    """Compute (or reuse) one feature CSV per LBP combo; return the cache dict."""
    if not cfg["dataset"]:
        raise CliError("no dataset given (use --dataset or the manifest's 'dataset' field)")
    manifest = Path(cfg["dataset"])
    if not manifest.is_file():
        raise CliError(f"nodule manifest not found: {manifest}")
    combos = [tuple(int(v) for v in c) for c in cfg["lbp_combos"]]
    hashes = {c: feature_hash(cfg, c) for c in combos}
    missing = [c for c in combos if not _cached(feature_path(cfg, c), hashes[c])]
    if missing:
        try:
            refs = read_manifest(manifest)
        except (ValueError, KeyError) as exc:
            raise CliError(f"invalid nodule manifest {manifest}: {exc}") from exc
        cubes = []
        for ref in refs:
            try:
                cubes.append(load_nodule_cube(manifest.parent, ref, int(cfg["side"])))
            except (OSError, VolumeError, ValueError) as exc:
                raise CliError(f"volume {ref.volume_id}: {exc}") from exc
        labels = [r.label for r in refs]
        ids = [r.nodule_id for r in refs]
        for c in missing:
            params = LbpParams(*c)
            X = np.vstack([lbp_top(cube, params).values for cube in cubes])
            write_features_csv(LabeledDataset(X, labels, ids), feature_path(cfg, c), _header(hashes[c]))
            log(f"wrote {feature_path(cfg, c)}")
    for c in combos:
        if c not in missing:
            log(f"cached {feature_path(cfg, c)}")
    return {c: read_features_csv(feature_path(cfg, c)) for c in combos}


# ---------------------------------------------------------------- optimize


def search_space(cfg: dict, classifier: str) -> ParamSpace:
    """Classifier dims plus categorical ``R``/``P`` over the configured combos."""
    rs = sorted({int(c[0]) for c in cfg["lbp_combos"]})
    ps = sorted({int(c[1]) for c in cfg["lbp_combos"]})
    base = svm_space() if classifier == "svm" else xgboost_space()
    return base + ParamSpace([ParamSpec.categorical("R", rs), ParamSpec.categorical("P", ps)])


def _experiment_configs(cfg: dict) -> list[ExperimentConfig]:
    out = []
    for clf in cfg["classifiers"]:
        fixed = cfg["gbt_params"] if clf == "xgboost" else cfg["svm_params"]
        for method in cfg["methods"]:
            for budget in cfg["budgets"]:
                out.append(ExperimentConfig(clf, method, int(budget), int(cfg["n_repeats"]), int(cfg["base_seed"]),
                                            space=search_space(cfg, clf), tpe=TpeConfig(**cfg["tpe"]),
                                            fixed_params=dict(fixed)))
    return out


def run_hash(cfg: dict) -> str:
    """Hash of everything that determines results (output locations excluded)."""
    keys = ("classifiers", "methods", "budgets", "n_repeats", "base_seed", "side", "lbp_combos",
            "gbt_params", "svm_params", "tpe")
    d = {k: cfg[k] for k in keys}
    d["dataset"] = _dataset_digest(Path(cfg["dataset"]))
    return config_hash(d)


def cell_hash(cfg: dict, ecfg: ExperimentConfig) -> str:
    d = {"run": run_hash(cfg), "cell": ecfg.cell_name, "space": ecfg.space.to_dict(),
         "tpe": asdict(ecfg.tpe), "fixed": ecfg.fixed_params}
    return config_hash(d)


def _roc_table(report: ExperimentReport, comment: str) -> str:
    lines = [f"# {comment}", "repeat,fpr,tpr"]
    for r in report.repeats:
        fpr, tpr = roc_curve_points(r.loocv.probabilities, r.loocv.labels)
        lines.extend(f"{r.repeat},{format_float(a)},{format_float(b)}" for a, b in zip(fpr, tpr))
    return "\n".join(lines) + "\n"


def _summary(report: ExperimentReport) -> dict:
    return {"repeats": [{"repeat": r.repeat, "seed": r.seed, "validation_loss": r.best_loss,
                         "auc": r.auc, "accuracy": r.accuracy, "best_point": r.best_point}
                        for r in report.repeats]}


def _report_from_summary(ecfg: ExperimentConfig, summary: dict) -> ExperimentReport:
    repeats = [RepeatResult(d["repeat"], d["seed"], d["validation_loss"], d["auc"], d["accuracy"],
                            d["best_point"], None, None) for d in summary["repeats"]]
    return ExperimentReport(ecfg, repeats)


def _run_cell(cfg: dict, ecfg: ExperimentConfig, cache: dict) -> dict:
    out = Path(cfg["out"])
    h = cell_hash(cfg, ecfg)
    comment = _header(h)
    report = run_experiment(ecfg, cache)
    name = ecfg.cell_name
    for r in report.repeats:
        atomic_write_text(out / "trials" / f"trials_{name}_r{r.repeat:02d}.csv",
                          f"# {comment}\n" + trial_log_csv(r.search, ecfg.space))
    atomic_write_text(out / "roc" / f"roc_{name}.csv", _roc_table(report, comment))
    atomic_write_text(out / "history" / f"history_{name}.json", report_json(report))
    summary = _summary(report)
    atomic_write_text(out / "cells" / f"{name}.done.json",
                      json.dumps({"config_sha256": h, **summary}, indent=1, sort_keys=True) + "\n")
    return summary


def _load_done(cfg: dict, ecfg: ExperimentConfig) -> dict | None:
    path = Path(cfg["out"]) / "cells" / f"{ecfg.cell_name}.done.json"
    try:
        with open(path, encoding="utf-8") as fh:
            done = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None
    return done if done.get("config_sha256") == cell_hash(cfg, ecfg) else None


def optimize(cfg: dict, jobs: int = 1, resume: bool = False, log=print) -> list[Path]:
    cache = ensure_features(cfg, log=log)
    cells = _experiment_configs(cfg)
    summaries: dict[str, dict] = {}
    todo = []
    for ecfg in cells:
        done = _load_done(cfg, ecfg) if resume else None
        if done is not None:
            summaries[ecfg.cell_name] = done
            log(f"resume: skipping {ecfg.cell_name}")
        else:
            todo.append(ecfg)
    if jobs == 1:
        results = []
        for ecfg in todo:
            log(f"running {ecfg.cell_name}")
            results.append(_run_cell(cfg, ecfg, cache))
    else:
        results = Parallel(n_jobs=jobs)(delayed(_run_cell)(cfg, ecfg, cache) for ecfg in todo)
    summaries.update({ecfg.cell_name: s for ecfg, s in zip(todo, results)})

    out = Path(cfg["out"])
    comment = _header(run_hash(cfg))
    written = []
    for clf in cfg["classifiers"]:
        reports = [_report_from_summary(e, summaries[e.cell_name]) for e in cells if e.classifier == clf]
        for kind, fn in (("table", table_csv), ("raw", raw_csv)):
            path = out / f"{kind}_{clf}.csv"
            atomic_write_text(path, fn(reports, comment))
            written.append(path)
    return written


# ------------------------------------------------------------------ report


def read_table(path: Path) -> tuple[list[str], list[dict]]:
    try:
        comments, lines = read_csv_lines(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise CliError(f"{path} is empty")
    reader = csv.DictReader(lines)
    if reader.fieldnames != REPORT_HEADER:
        raise CliError(f"{path}: expected header {','.join(REPORT_HEADER)}")
    rows = list(reader)
    if not rows:
        raise CliError(f"{path} has no data rows")
    return comments, rows


def render_table(rows: list[dict]) -> str:
    widths = {k: max(len(k), *(len(r[k]) for r in rows)) for k in REPORT_HEADER}
    fmt = lambda r: "  ".join(r[k].ljust(widths[k]) for k in REPORT_HEADER).rstrip()
    lines = [fmt({k: k for k in REPORT_HEADER}), "  ".join("-" * widths[k] for k in REPORT_HEADER)]
    lines.extend(fmt(r) for r in rows)
    return "\n".join(lines) + "\n"


def write_series(table: Path, out_dir: Path) -> list[Path]:
    """One ``algorithm,n_trials,value`` CSV per metric, values copied verbatim."""
    comments, rows = read_table(table)
    order = sorted(range(len(rows)), key=lambda i: (rows[i]["algorithm"], int(rows[i]["n_trials"])))
    written = []
    for metric in METRICS:
        lines = list(comments) + ["algorithm,n_trials,value"]
        lines.extend(f"{rows[i]['algorithm']},{rows[i]['n_trials']},{rows[i][metric]}" for i in order)
        path = out_dir / f"series_{metric}.csv"
        atomic_write_text(path, "\n".join(lines) + "\n")
        written.append(path)
    return written


# -------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    out = Path(args.out)
    cfg = SynthConfig(n_per_class=args.n_per_class, side=args.side, radius_a=args.radius_a,
                      radius_b=args.radius_b, amplitude=args.amplitude, seed=args.seed)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out}: {exc}") from exc
    if not os.access(out, os.W_OK | os.X_OK):
        raise CliError(f"output directory {out} is not writable")
    try:
        manifest = generate_dataset(cfg, out)
    except OSError as exc:
        raise CliError(f"writing synthetic dataset failed: {exc}") from exc
    print(manifest)
    return 0


def cmd_features(args) -> int:
    cfg = load_run_config(args)
    ensure_features(cfg, log=lambda m: print(m, file=sys.stderr))
    for c in cfg["lbp_combos"]:
        print(feature_path(cfg, c))
    return 0


def cmd_optimize(args) -> int:
    cfg = load_run_config(args)
    for path in optimize(cfg, jobs=args.jobs, resume=args.resume, log=lambda m: print(m, file=sys.stderr)):
        print(path)
    return 0


def cmd_report(args) -> int:
    table = Path(args.input)
    read_table(table)  # fail before creating anything
    out = Path(args.out) if args.out else table.parent
    for path in write_series(table, out):
        print(path)
    if args.table:
        _, rows = read_table(table)
        sys.stdout.write(render_table(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cadx", description="LBP-TOP texture CADx with hyperparameter search.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic two-class volume dataset")
    s.add_argument("--out", required=True, help="dataset directory to create")
    s.add_argument("--n-per-class", type=int, default=20)
    s.add_argument("--side", type=int, default=64)
    s.add_argument("--radius-a", type=int, default=1)
    s.add_argument("--radius-b", type=int, default=3)
    s.add_argument("--amplitude", type=float, default=100.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    def run_args(q):
        q.add_argument("--manifest", help="JSON run manifest")
        q.add_argument("--dataset", help="nodule manifest CSV (overrides the run manifest)")
        q.add_argument("--out", help="output directory")

    f = sub.add_parser("features", help=f"compute LBP-TOP feature CSVs (cache dir: ${CACHE_ENV})")
    run_args(f)
    f.set_defaults(func=cmd_features)

    o = sub.add_parser("optimize", help="run the classifier x method x budget grid")
    run_args(o)
    o.add_argument("--jobs", type=int, default=1, help="grid cells run concurrently")
    o.add_argument("--seed", type=int, help="base seed (overrides the manifest)")
    o.add_argument("--resume", action="store_true", help="skip cells with a matching completion marker")
    o.add_argument("--n-repeats", type=int)
    o.add_argument("--classifiers", type=_csv_list)
    o.add_argument("--methods", type=_csv_list)
    o.add_argument("--budgets", type=lambda t: _csv_list(t, int))
    o.set_defaults(func=cmd_optimize)

    r = sub.add_parser("report", help="turn an aggregated table into per-metric series")
    r.add_argument("--input", required=True, help="aggregated table CSV (table_<classifier>.csv)")
    r.add_argument("--out", help="directory for series CSVs (default: next to the input)")
    r.add_argument("--table", action="store_true", help="also print a plain-text table")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"cadx {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"cadx {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
