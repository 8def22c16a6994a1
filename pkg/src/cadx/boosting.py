"""Second-order gradient tree boosting for binary classification.

Each round fits one regression tree to the logistic-loss gradients and
hessians at the current margins using exact greedy split search, then adds
``learning_rate * tree(x)`` to the margin.  Split gain and leaf weights
follow the regularised objective ``gamma * T + 0.5 * lambda * ||w||^2``::

    gain = 0.5 * (G_L^2 / (H_L + lambda) + G_R^2 / (H_R + lambda)
                  - G^2 / (H + lambda)) - gamma
    w    = -G / (H + lambda)

``eta`` is accepted and stored but does not influence training; the
effective shrinkage is ``learning_rate``.  The two names alias each other
in common boosting libraries, and keeping ``eta`` lets a search space carry
it as a dimension without changing the fitted model.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, validate_data


@dataclass(frozen=True)
class GBTParams:
    eta: float = 0.3
    max_depth: int = 6
    min_child_weight: float = 1.0
    gamma: float = 0.0
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    n_rounds: int = 100

    def __post_init__(self):
        for name in ("eta", "min_child_weight", "gamma", "learning_rate", "reg_lambda"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        for name in ("min_child_weight", "gamma", "reg_lambda"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if int(self.max_depth) != self.max_depth or self.max_depth < 1:
            raise ValueError(f"max_depth must be an integer >= 1, got {self.max_depth}")
        if int(self.n_rounds) != self.n_rounds or self.n_rounds < 1:
            raise ValueError(f"n_rounds must be an integer >= 1, got {self.n_rounds}")


@dataclass(frozen=True)
class SplitDecision:
    feature: int
    threshold: float
    gain: float


@dataclass(frozen=True, eq=False)
class GBTModel:
    """Trained ensemble stored as flat per-tree node arrays.

    Node ``k`` of tree ``t`` is internal when ``feature[t, k] >= 0`` and then
    routes ``x[feature] < threshold`` to ``left`` and the rest to ``right``;
    otherwise ``value[t, k]`` is its leaf weight.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_nodes: np.ndarray
    params: GBTParams
    n_features: int
    base_margin: float = 0.0

    @property
    def n_trees(self) -> int:
        return len(self.n_nodes)

    def tree_dict(self, t: int, node: int = 0) -> dict:
        f = int(self.feature[t, node])
        if f < 0:
            return {"leaf": float(self.value[t, node])}
        return {
            "feature": f,
            "threshold": float(self.threshold[t, node]),
            "children": [
                self.tree_dict(t, int(self.left[t, node])),
                self.tree_dict(t, int(self.right[t, node])),
            ],
        }

    def tree_depth(self, t: int) -> int:
        def depth(node):
            if self.feature[t, node] < 0:
                return 0
            return 1 + max(depth(self.left[t, node]), depth(self.right[t, node]))

        return depth(0)

    def to_json(self) -> str:
        return json.dumps(
            {
                "base_margin": self.base_margin,
                "shrinkage": self.params.learning_rate,
                "params": asdict(self.params),
                "trees": [self.tree_dict(t) for t in range(self.n_trees)],
            },
            indent=1,
        )


def logistic_grad_hess(label, margin):
    """Gradient and hessian of the logistic loss w.r.t. the margin."""
    p = 1.0 / (1.0 + np.exp(-np.asarray(margin, dtype=np.float64)))
    return p - label, p * (1.0 - p)


def leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    if H + reg_lambda <= 0:
        raise ValueError(f"degenerate leaf: H + lambda = {H + reg_lambda}")
    return -G / (H + reg_lambda)


# ------------------------------------------------------------ numba core


@njit(cache=True)
def _find_split(XT, order, g, h, node_of, node, reg_lambda, gamma, min_child_weight):
    # XT and order are feature-major: shape (d, n)
    d, n = XT.shape
    G = 0.0
    H = 0.0
    for i in range(n):
        if node_of[i] == node:
            G += g[i]
            H += h[i]
    best_gain = 0.0
    best_f = -1
    best_thr = 0.0
    if H < 2.0 * min_child_weight:
        return best_f, best_thr, best_gain
    parent = G * G / (H + reg_lambda)
    for f in range(d):
        xf = XT[f]
        of = order[f]
        GL = 0.0
        HL = 0.0
        v_prev = 0.0
        started = False
        for k in range(n):
            i = of[k]
            if node_of[i] != node:
                continue
            v = xf[i]
            if started and v > v_prev:
                HR = H - HL
                if HL >= min_child_weight and HR >= min_child_weight:
                    GR = G - GL
                    gain = 0.5 * (GL * GL / (HL + reg_lambda) + GR * GR / (HR + reg_lambda) - parent) - gamma
                    if gain > best_gain:
                        thr = 0.5 * (v_prev + v)
                        if not thr > v_prev:
                            thr = v
                        best_gain = gain
                        best_f = f
                        best_thr = thr
            GL += g[i]
            HL += h[i]
            v_prev = v
            started = True
    return best_f, best_thr, best_gain


@njit(cache=True)
def _grow_tree(XT, order, g, h, max_depth, min_child_weight, gamma, reg_lambda,
               feature, threshold, left, right, value, node_of):
    n = XT.shape[1]
    for i in range(n):
        node_of[i] = 0
    stack_node = np.empty(feature.shape[0], dtype=np.int64)
    stack_depth = np.empty(feature.shape[0], dtype=np.int64)
    stack_node[0] = 0
    stack_depth[0] = 0
    top = 1
    count = 1
    while top > 0:
        top -= 1
        node = stack_node[top]
        depth = stack_depth[top]
        f = -1
        thr = 0.0
        if depth < max_depth:
            f, thr, _ = _find_split(XT, order, g, h, node_of, node, reg_lambda, gamma, min_child_weight)
        if f >= 0:
            lft = count
            rgt = count + 1
            count += 2
            feature[node] = f
            threshold[node] = thr
            left[node] = lft
            right[node] = rgt
            for i in range(n):
                if node_of[i] == node:
                    node_of[i] = lft if XT[f, i] < thr else rgt
            stack_node[top] = rgt
            stack_depth[top] = depth + 1
            stack_node[top + 1] = lft
            stack_depth[top + 1] = depth + 1
            top += 2
        else:
            G = 0.0
            H = 0.0
            for i in range(n):
                if node_of[i] == node:
                    G += g[i]
                    H += h[i]
            if H + reg_lambda <= 0.0:
                raise ValueError("degenerate leaf: H + lambda <= 0")
            feature[node] = -1
            value[node] = -G / (H + reg_lambda)
    return count


@njit(cache=True)
def _boost(XT, order, y, n_rounds, max_depth, min_child_weight, gamma, reg_lambda, shrinkage,
           base_margin, feature, threshold, left, right, value, n_nodes):
    n = XT.shape[1]
    margin = np.full(n, base_margin)
    g = np.empty(n)
    h = np.empty(n)
    node_of = np.empty(n, dtype=np.int64)
    for t in range(n_rounds):
        for i in range(n):
            p = 1.0 / (1.0 + np.exp(-margin[i]))
            g[i] = p - y[i]
            h[i] = p * (1.0 - p)
        n_nodes[t] = _grow_tree(XT, order, g, h, max_depth, min_child_weight, gamma, reg_lambda,
                                feature[t], threshold[t], left[t], right[t], value[t], node_of)
        for i in range(n):
            margin[i] += shrinkage * value[t, node_of[i]]


@njit(cache=True)
def _predict_margin(X, feature, threshold, left, right, value, shrinkage, base_margin):
    n = X.shape[0]
    out = np.full(n, base_margin)
    for i in range(n):
        acc = 0.0
        for t in range(feature.shape[0]):
            node = 0
            while feature[t, node] >= 0:
                if X[i, feature[t, node]] < threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            acc += value[t, node]
        out[i] += shrinkage * acc
    return out


# ------------------------------------------------------------ public API


def best_split(X, g, h, params: GBTParams, instances=None) -> SplitDecision | None:
    """Exact greedy best split of ``instances`` (default: all rows), or None."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    node_of = np.ones(X.shape[0], dtype=np.int64)
    if instances is None:
        node_of[:] = 0
    else:
        node_of[np.asarray(instances)] = 0
    XT = np.ascontiguousarray(X.T)
    order = np.argsort(XT, axis=1, kind="stable")
    f, thr, gain = _find_split(XT, order, g, h, node_of, 0, params.reg_lambda, params.gamma,
                               params.min_child_weight)
    if f < 0:
        return None
    return SplitDecision(int(f), float(thr), float(gain))


def train_gbt(X, y, params: GBTParams = GBTParams()) -> GBTModel:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    if y.shape != (X.shape[0],):
        raise ValueError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
    n = X.shape[0]
    max_nodes = min(2 * n - 1, 2 ** (params.max_depth + 1) - 1)
    r = params.n_rounds
    feature = np.full((r, max_nodes), -1, dtype=np.int64)
    threshold = np.zeros((r, max_nodes))
    left = np.zeros((r, max_nodes), dtype=np.int64)
    right = np.zeros((r, max_nodes), dtype=np.int64)
    value = np.zeros((r, max_nodes))
    n_nodes = np.zeros(r, dtype=np.int64)
    XT = np.ascontiguousarray(X.T)
    order = np.argsort(XT, axis=1, kind="stable")
    _boost(XT, order, y, r, params.max_depth, float(params.min_child_weight), float(params.gamma),
           float(params.reg_lambda), float(params.learning_rate), 0.0,
           feature, threshold, left, right, value, n_nodes)
    return GBTModel(feature, threshold, left, right, value, n_nodes, params, X.shape[1])


def predict_margin_gbt(model: GBTModel, X) -> np.ndarray:
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    if X.shape[1] != model.n_features:
        raise ValueError(f"X has {X.shape[1]} features, model was trained on {model.n_features}")
    return _predict_margin(X, model.feature, model.threshold, model.left, model.right, model.value,
                           float(model.params.learning_rate), float(model.base_margin))


def predict_proba_gbt(model: GBTModel, X) -> np.ndarray:
    """Probability of class 1 for each row of ``X``."""
    return 1.0 / (1.0 + np.exp(-predict_margin_gbt(model, X)))


class GBTClassifier(ClassifierMixin, BaseEstimator):
    """Binary gradient tree boosting classifier (labels must be 0/1).

    Parameters mirror :class:`GBTParams`; ``eta`` is stored but inert (the
    shrinkage applied to every tree is ``learning_rate``).
    """

    def __init__(self, eta=0.3, max_depth=6, min_child_weight=1.0, gamma=0.0,
                 learning_rate=0.1, reg_lambda=1.0, n_rounds=100):
        self.eta = eta
        self.max_depth = max_depth
        self.min_child_weight = min_child_weight
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.reg_lambda = reg_lambda
        self.n_rounds = n_rounds

    def _params(self) -> GBTParams:
        return GBTParams(float(self.eta), int(self.max_depth), float(self.min_child_weight),
                         float(self.gamma), float(self.learning_rate), float(self.reg_lambda),
                         int(self.n_rounds))

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        if not np.isin(y, (0, 1)).all():
            raise ValueError("GBTClassifier expects labels in {0, 1}")
        self.classes_ = np.array([0, 1])
        self.model_ = train_gbt(X, y.astype(np.float64), self._params())
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return predict_margin_gbt(self.model_, X)

    def predict_proba(self, X):
        p = 1.0 / (1.0 + np.exp(-self.decision_function(X)))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)
