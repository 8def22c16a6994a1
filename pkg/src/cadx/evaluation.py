"""Leave-one-out objective, ROC/accuracy metrics and the repeated-search protocol.

The hyperparameter objective is the mean held-out log loss under
leave-one-out cross-validation.  One experiment cell (classifier, search
method, trial budget) repeats the search ``n_repeats`` times with seeds
``base_seed + r``; each repeat re-evaluates its best point, pools the
held-out probabilities and scores them with ROC AUC and accuracy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import rankdata
from sklearn.base import BaseEstimator, clone

from .boosting import GBTClassifier
from .dataset import LabeledDataset
from .hpo import ParamSpace, SearchResult, TpeConfig, full_space, run_search
from .svm import SMOConvergenceError, SVMClassifier
from .texture import LbpParams, lbp_top
from .utils import derive_seed, format_float

EPS = 1e-15
FEATURE_DIMS = ("R", "P")
REPORT_HEADER = ["algorithm", "n_trials", "validation_loss", "auc", "accuracy"]
ALGORITHM_LABELS = {"random": "Random", "tpe": "TPE"}

FeatureCache = Mapping[tuple[int, int], LabeledDataset]


# ------------------------------------------------------------------ metrics


def log_loss(p, y):
    """Binary log loss with probabilities clipped to ``[1e-15, 1 - 1e-15]``.

    Works elementwise on arrays; returns a float for scalar input.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("probabilities must lie in [0, 1]")
    p = np.clip(p, EPS, 1 - EPS)
    out = -(y * np.log(p) + (1 - y) * np.log(1 - p))
    return float(out) if out.ndim == 0 else out


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score+ > score-) with ties counted as one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n1, n0 = int(pos.sum()), int((~pos).sum())
    if n1 == 0 or n0 == 0:
        raise ValueError("roc_auc needs at least one positive and one negative label")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[pos].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def roc_curve_points(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) at every distinct threshold, from (0, 0) to (1, 1)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    order = np.argsort(-scores, kind="stable")
    s, pos = scores[order], labels[order] == 1
    tp, fp = np.cumsum(pos), np.cumsum(~pos)
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tpr = np.r_[0.0, tp[last] / max(tp[-1], 1)]
    fpr = np.r_[0.0, fp[last] / max(fp[-1], 1)]
    return fpr, tpr


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean((scores >= threshold) == (labels == 1)))


# ------------------------------------------------------------- LOOCV objective


def build_feature_cache(cubes: Sequence, labels, ids, combos=((7, 40), (7, 48), (8, 40), (8, 48))) -> dict:
    """LBP-TOP feature tables for every ``(R, P)`` combination."""
    cache = {}
    for r, p in combos:
        params = LbpParams(r, p)
        X = np.vstack([lbp_top(c, params).values for c in cubes])
        cache[(r, p)] = LabeledDataset(X, labels, ids)
    return cache


def select_features(data, point: Mapping) -> LabeledDataset:
    if isinstance(data, LabeledDataset):
        return data
    return data[(int(point["R"]), int(point["P"]))]


def make_classifier(classifier, params: Mapping, seed: int = 0) -> BaseEstimator:
    """Instantiate ``"xgboost"``, ``"svm"`` or a clone of an estimator with ``params``."""
    if classifier == "xgboost":
        return GBTClassifier(**params)
    if classifier == "svm":
        return SVMClassifier(**params, random_state=seed)
    est = clone(classifier).set_params(**params)
    if "random_state" in est.get_params():
        est.set_params(random_state=seed)
    return est


@dataclass
class LoocvResult:
    loss: float
    probabilities: np.ndarray
    labels: np.ndarray
    ids: tuple[str, ...]
    n_fallback_folds: int = 0


def loocv_predict(data, classifier, point: Mapping, *, seed: int = 0,
                  fixed_params: Mapping | None = None) -> LoocvResult:
    """Leave-one-out held-out probabilities and mean log loss at ``point``.

    Instances are processed in id order, so the result does not depend on
    the order of the input rows.  When a training fold holds a single class
    and the classifier refuses to fit it, the fold predicts that fold's class
    prior instead.
    """
    ds = select_features(data, point).sorted_by_id()
    n = len(ds)
    if n < 2:
        raise ValueError("leave-one-out needs at least two instances")
    params = {k: v for k, v in point.items() if k not in FEATURE_DIMS}
    params.update(fixed_params or {})
    probs = np.empty(n)
    fallback = 0
    mask = np.ones(n, dtype=bool)
    for i in range(n):
        mask[i] = False
        X_tr, y_tr = ds.X[mask], ds.y[mask]
        mask[i] = True
        est = make_classifier(classifier, params, derive_seed(seed, i))
        try:
            est.fit(X_tr, y_tr)
        except ValueError:
            if len(np.unique(y_tr)) > 1:
                raise
            probs[i] = float(y_tr.mean())
            fallback += 1
            continue
        probs[i] = est.predict_proba(ds.X[i : i + 1])[0, 1]
    loss = float(np.mean(log_loss(probs, ds.y)))
    return LoocvResult(loss, probs, ds.y, ds.ids, fallback)


def loocv_loss(data, classifier, point: Mapping, *, seed: int = 0, fixed_params: Mapping | None = None) -> float:
    return loocv_predict(data, classifier, point, seed=seed, fixed_params=fixed_params).loss


# --------------------------------------------------------------- experiments


@dataclass
class ExperimentConfig:
    classifier: str
    method: str
    n_trials: int
    n_repeats: int = 10
    base_seed: int = 0
    space: ParamSpace | None = None
    tpe: TpeConfig = field(default_factory=TpeConfig)
    fixed_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_repeats < 1:
            raise ValueError(f"n_repeats must be >= 1, got {self.n_repeats}")
        if self.n_trials < 1:
            raise ValueError(f"n_trials must be >= 1, got {self.n_trials}")
        if self.space is None:
            self.space = full_space(self.classifier)

    @property
    def cell_name(self) -> str:
        return f"{self.classifier}_{self.method}_{self.n_trials}"


@dataclass
class RepeatResult:
    repeat: int
    seed: int
    best_loss: float
    auc: float
    accuracy: float
    best_point: dict
    search: SearchResult
    loocv: LoocvResult


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    repeats: list[RepeatResult]

    @property
    def mean_loss(self) -> float:
        return float(np.mean([r.best_loss for r in self.repeats]))

    @property
    def mean_auc(self) -> float:
        return float(np.mean([r.auc for r in self.repeats]))

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([r.accuracy for r in self.repeats]))


class _Objective:
    """``point -> loss`` closure that numbers its calls to derive fold seeds."""

    def __init__(self, data, cfg: ExperimentConfig, repeat_seed: int):
        self.data, self.cfg, self.repeat_seed = data, cfg, repeat_seed
        self.calls = 0

    def trial_seed(self, trial_index: int) -> int:
        return derive_seed(self.repeat_seed, trial_index)

    def __call__(self, point) -> float:
        seed = self.trial_seed(self.calls)
        self.calls += 1
        try:
            return loocv_loss(self.data, self.cfg.classifier, point, seed=seed,
                              fixed_params=self.cfg.fixed_params)
        except SMOConvergenceError:
            return math.inf


def run_repeat(cfg: ExperimentConfig, data, repeat: int) -> RepeatResult:
    seed = cfg.base_seed + repeat
    objective = _Objective(data, cfg, seed)
    search = run_search(objective, cfg.space, cfg.n_trials, cfg.method, cfg.tpe, np.random.default_rng(seed))
    best = search.best
    if not math.isfinite(best.loss):
        raise RuntimeError(f"{cfg.cell_name} repeat {repeat}: every trial failed")
    final = loocv_predict(data, cfg.classifier, best.point, seed=objective.trial_seed(best.trial_index),
                          fixed_params=cfg.fixed_params)
    return RepeatResult(
        repeat=repeat,
        seed=seed,
        best_loss=best.loss,
        auc=roc_auc(final.probabilities, final.labels),
        accuracy=accuracy(final.probabilities, final.labels),
        best_point=dict(best.point),
        search=search,
        loocv=final,
    )


def run_experiment(cfg: ExperimentConfig, data, n_jobs: int = 1) -> ExperimentReport:
    """Run ``cfg.n_repeats`` independent searches (optionally in parallel)."""
    if n_jobs == 1:
        repeats = [run_repeat(cfg, data, r) for r in range(cfg.n_repeats)]
    else:
        repeats = Parallel(n_jobs=n_jobs)(delayed(run_repeat)(cfg, data, r) for r in range(cfg.n_repeats))
    return ExperimentReport(cfg, list(repeats))


# ------------------------------------------------------------------- reports


def _csv(rows, comment=None) -> str:
    lines = [f"# {comment}"] if comment else []
    lines.append(",".join(REPORT_HEADER))
    lines.extend(",".join(r) for r in rows)
    return "\n".join(lines) + "\n"


def table_csv(reports: Sequence[ExperimentReport], comment: str | None = None) -> str:
    """Mean validation loss / AUC / accuracy, one row per (method, budget)."""
    rows = [[ALGORITHM_LABELS[rep.config.method], str(rep.config.n_trials), format_float(rep.mean_loss),
             format_float(rep.mean_auc), format_float(rep.mean_accuracy)] for rep in reports]
    return _csv(rows, comment)


def raw_csv(reports: Sequence[ExperimentReport], comment: str | None = None) -> str:
    """Per-repeat rows, ``n_repeats`` consecutive rows per (method, budget)."""
    rows = []
    for rep in reports:
        for r in rep.repeats:
            rows.append([ALGORITHM_LABELS[rep.config.method], str(rep.config.n_trials), format_float(r.best_loss),
                         format_float(r.auc), format_float(r.accuracy)])
    return _csv(rows, comment)


def roc_csv(result: LoocvResult, comment: str | None = None) -> str:
    fpr, tpr = roc_curve_points(result.probabilities, result.labels)
    lines = [f"# {comment}"] if comment else []
    lines.append("fpr,tpr")
    lines.extend(f"{format_float(a)},{format_float(b)}" for a, b in zip(fpr, tpr))
    return "\n".join(lines) + "\n"


def report_to_dict(report: ExperimentReport) -> dict:
    cfg = report.config
    return {
        "classifier": cfg.classifier,
        "method": cfg.method,
        "n_trials": cfg.n_trials,
        "n_repeats": cfg.n_repeats,
        "base_seed": cfg.base_seed,
        "space": cfg.space.to_dict(),
        "mean": {"validation_loss": report.mean_loss, "auc": report.mean_auc, "accuracy": report.mean_accuracy},
        "repeats": [
            {
                "repeat": r.repeat,
                "seed": r.seed,
                "validation_loss": r.best_loss,
                "auc": r.auc,
                "accuracy": r.accuracy,
                "best_point": r.best_point,
                "trials": [{"trial_index": t.trial_index, "loss": t.loss if math.isfinite(t.loss) else "inf",
                            "point": t.point} for t in r.search.history],
            }
            for r in report.repeats
        ],
    }


def report_json(report: ExperimentReport) -> str:
    return json.dumps(report_to_dict(report), indent=1, sort_keys=True) + "\n"

