"""Soft-margin RBF-kernel SVM trained with simplified SMO, plus Platt scaling.

The dual

    max_a  sum(a) - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
    s.t.   0 <= a_i <= C,  sum(a_i y_i) = 0

is solved one pair at a time: every example violating the tolerance-relaxed
KKT conditions is paired with a randomly drawn partner and the pair is
optimised analytically.  After ``max_passes`` consecutive sweeps without
any update, maximal-violating pairs are optimised until every example meets
the KKT conditions within ``tol``; the bias is the midpoint of the interval
those conditions allow.  Decision values on the training set are then
mapped to probabilities with a sigmoid ``1 / (1 + exp(A f + B))`` fitted by
regularised Newton iterations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, validate_data

MAX_UPDATES = 1_000_000


class SMOConvergenceError(RuntimeError):
    """SMO hit its hard update cap before satisfying the KKT conditions."""

    def __init__(self, message, n_updates, n_sweeps, max_violation):
        super().__init__(message)
        self.n_updates = n_updates
        self.n_sweeps = n_sweeps
        self.max_violation = max_violation


@dataclass(frozen=True)
class SVMParams:
    C: float = 1.0
    gamma_rbf: float = 1.0
    tol: float = 1e-3
    max_passes: int = 10
    max_updates: int = MAX_UPDATES

    def __post_init__(self):
        for name in ("C", "gamma_rbf", "tol"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v}")
        if self.max_passes < 1 or self.max_updates < 1:
            raise ValueError("max_passes and max_updates must be >= 1")


@dataclass(frozen=True, eq=False)
class SVMModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i for the support vectors
    alphas: np.ndarray  # all training alphas
    labels: np.ndarray  # signed training labels in {-1, +1}
    bias: float
    platt_a: float
    platt_b: float
    params: SVMParams
    n_updates: int = 0

    @property
    def n_features(self) -> int:
        return self.support_vectors.shape[1]


def rbf_kernel(x, z, gamma_rbf: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise ValueError(f"vector lengths differ: {x.shape} vs {z.shape}")
    diff = x - z
    return float(np.exp(-gamma_rbf * np.dot(diff, diff)))


def rbf_kernel_matrix(A, B, gamma_rbf: float) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma_rbf * sq)


@njit(cache=True)
def _snap(a, C):
    # clamp into the box; values within round-off of a bound land on it
    if a < 1e-12 * C:
        return 0.0
    if a > C * (1.0 - 1e-12):
        return C
    return a


@njit(cache=True)
def _smo(K, y, C, tol, max_passes, max_updates, seed):
    n = y.shape[0]
    np.random.seed(seed)
    alpha = np.zeros(n)
    f = np.zeros(n)  # sum_j alpha_j y_j K_ij, without bias
    b = 0.0
    passes = 0
    sweeps = 0
    updates = 0
    while passes < max_passes:
        changed = 0
        for i in range(n):
            Ei = f[i] + b - y[i]
            ri = Ei * y[i]
            if not ((ri < -tol and alpha[i] < C) or (ri > tol and alpha[i] > 0.0)):
                continue
            j = np.random.randint(0, n - 1)
            if j >= i:
                j += 1
            Ej = f[j] + b - y[j]
            ai_old = alpha[i]
            aj_old = alpha[j]
            if y[i] != y[j]:
                L = max(0.0, aj_old - ai_old)
                H = min(C, C + aj_old - ai_old)
            else:
                L = max(0.0, ai_old + aj_old - C)
                H = min(C, ai_old + aj_old)
            if L >= H:
                continue
            eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
            if eta >= 0.0:
                continue
            aj = aj_old - y[j] * (Ei - Ej) / eta
            if aj > H:
                aj = H
            elif aj < L:
                aj = L
            if abs(aj - aj_old) <= 1e-12 * (aj + aj_old + 1e-12):
                continue
            ai = _snap(ai_old + y[i] * y[j] * (aj_old - aj), C)
            aj = _snap(aj, C)
            di = (ai - ai_old) * y[i]
            dj = (aj - aj_old) * y[j]
            b1 = b - Ei - di * K[i, i] - dj * K[i, j]
            b2 = b - Ej - di * K[i, j] - dj * K[j, j]
            if 0.0 < ai < C:
                b = b1
            elif 0.0 < aj < C:
                b = b2
            else:
                b = 0.5 * (b1 + b2)
            alpha[i] = ai
            alpha[j] = aj
            for k in range(n):
                f[k] += di * K[i, k] + dj * K[j, k]
            changed += 1
            updates += 1
            if updates >= max_updates:
                return alpha, f, b, updates, sweeps, False
        sweeps += 1
        if changed == 0:
            passes += 1
        else:
            passes = 0

    # Random partners can leave violations that no sampled pair repairs.
    # Finish with maximal-violating pairs until the KKT gap is within tol.
    while True:
        # b >= (y_k - f_k) - tol for k in "low", b <= (y_k - f_k) + tol for k in "up"
        i = -1
        j = -1
        gmax = -np.inf
        gmin = np.inf
        for k in range(n):
            gk = y[k] - f[k]
            low = (y[k] > 0 and alpha[k] < C) or (y[k] < 0 and alpha[k] > 0.0)
            up = (y[k] > 0 and alpha[k] > 0.0) or (y[k] < 0 and alpha[k] < C)
            if low and gk > gmax:
                gmax = gk
                i = k
            if up and gk < gmin:
                gmin = gk
                j = k
        if gmax - gmin <= 2.0 * tol:
            b = 0.5 * (gmax + gmin)
            break
        if updates >= max_updates:
            return alpha, f, b, updates, sweeps, False
        ai_old = alpha[i]
        aj_old = alpha[j]
        if y[i] != y[j]:
            L = max(0.0, aj_old - ai_old)
            H = min(C, C + aj_old - ai_old)
        else:
            L = max(0.0, ai_old + aj_old - C)
            H = min(C, ai_old + aj_old)
        dE = (f[i] - y[i]) - (f[j] - y[j])
        eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
        if eta < -1e-12:
            aj = aj_old - y[j] * dE / eta
        elif y[j] * dE > 0:
            aj = H
        else:
            aj = L
        if aj > H:
            aj = H
        elif aj < L:
            aj = L
        ai = _snap(ai_old + y[i] * y[j] * (aj_old - aj), C)
        aj = _snap(aj, C)
        di = (ai - ai_old) * y[i]
        dj = (aj - aj_old) * y[j]
        if di == 0.0 and dj == 0.0:
            # no representable progress left
            b = 0.5 * (gmax + gmin)
            return alpha, f, b, updates, sweeps, False
        alpha[i] = ai
        alpha[j] = aj
        for k in range(n):
            f[k] += di * K[i, k] + dj * K[j, k]
        updates += 1
    return alpha, f, b, updates, sweeps, True


def fit_platt(decision, labels, max_iter=100, min_step=1e-10, sigma=1e-12):
    """Fit ``P(y=1|f) = 1 / (1 + exp(A f + B))`` by Newton's method.

    Targets are smoothed with the prior counts ``(N+ + 1) / (N+ + 2)`` and
    ``1 / (N- + 2)``; the line search and stopping rule follow Lin, Lin &
    Weng's robust variant of Platt's procedure.
    """
    f = np.asarray(decision, dtype=np.float64)
    pos = np.asarray(labels) > 0
    prior1 = float(pos.sum())
    prior0 = float(len(pos) - prior1)
    t = np.where(pos, (prior1 + 1.0) / (prior1 + 2.0), 1.0 / (prior0 + 2.0))

    def objective(A, B):
        fApB = A * f + B
        # log(1 + exp(x)) written to avoid overflow on either side
        return np.sum(np.where(fApB >= 0, t * fApB + np.log1p(np.exp(-np.abs(fApB))),
                               (t - 1.0) * fApB + np.log1p(np.exp(-np.abs(fApB)))))

    A, B = 0.0, math.log((prior0 + 1.0) / (prior1 + 1.0))
    fval = objective(A, B)
    for _ in range(max_iter):
        fApB = A * f + B
        e = np.exp(-np.abs(fApB))
        p = np.where(fApB >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
        q = 1.0 - p
        d2 = p * q
        h11 = sigma + np.dot(f * f, d2)
        h22 = sigma + d2.sum()
        h21 = np.dot(f, d2)
        d1 = t - p
        g1 = np.dot(f, d1)
        g2 = d1.sum()
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= min_step:
            newA, newB = A + step * dA, B + step * dB
            newf = objective(newA, newB)
            if newf < fval + 1e-4 * step * gd:
                A, B, fval = newA, newB, newf
                break
            step /= 2.0
        else:
            break
    return float(A), float(B)


def train_svm(X, y, params: SVMParams = SVMParams(), random_state: int = 0) -> SVMModel:
    """Train on features ``X`` and labels ``y`` in {0, 1}."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y01 = np.asarray(y)
    if not np.isin(y01, (0, 1)).all():
        raise ValueError("labels must be in {0, 1}")
    if len(np.unique(y01)) < 2:
        raise ValueError("SVM training needs both classes present")
    ys = np.where(y01 == 1, 1.0, -1.0)
    K = rbf_kernel_matrix(X, X, params.gamma_rbf)
    alpha, f, b, updates, sweeps, ok = _smo(K, ys, float(params.C), float(params.tol),
                                            int(params.max_passes), int(params.max_updates),
                                            int(random_state) % (2**32))
    if not ok:
        margins = ys * (f + b)
        viol = np.where(alpha < params.C, np.maximum(0.0, 1 - margins), 0.0)
        viol = np.maximum(viol, np.where(alpha > 0, np.maximum(0.0, margins - 1), 0.0))
        raise SMOConvergenceError(
            f"SMO did not converge after {updates} pair updates ({sweeps} sweeps); "
            f"max KKT violation {viol.max():.3g} at C={params.C:g}, gamma={params.gamma_rbf:g}",
            updates, sweeps, float(viol.max()),
        )
    A, B = fit_platt(f + b, ys)
    sv = alpha > 0
    return SVMModel(
        support_vectors=X[sv],
        dual_coef=alpha[sv] * ys[sv],
        alphas=alpha,
        labels=ys,
        bias=b,
        platt_a=A,
        platt_b=B,
        params=params,
        n_updates=int(updates),
    )


def decision_function_svm(model: SVMModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise ValueError(f"X has {X.shape[1]} features, model was trained on {model.n_features}")
    K = rbf_kernel_matrix(X, model.support_vectors, model.params.gamma_rbf)
    return K @ model.dual_coef + model.bias


def platt_probability(decision, A: float, B: float) -> np.ndarray:
    fApB = A * np.asarray(decision, dtype=np.float64) + B
    e = np.exp(-np.abs(fApB))
    return np.where(fApB >= 0, e / (1.0 + e), 1.0 / (1.0 + e))


def predict_proba_svm(model: SVMModel, X) -> np.ndarray:
    """Platt-calibrated probability of class 1 for each row of ``X``."""
    return platt_probability(decision_function_svm(model, X), model.platt_a, model.platt_b)


def dual_objective(alpha, y, K) -> float:
    v = alpha * y
    return float(alpha.sum() - 0.5 * v @ K @ v)


class SVMClassifier(ClassifierMixin, BaseEstimator):
    """RBF-kernel SVM with Platt-scaled probabilities (labels must be 0/1).

    Features are used as given; no scaling is applied.
    """

    def __init__(self, C=1.0, gamma_rbf=1.0, tol=1e-3, max_passes=10,
                 max_updates=MAX_UPDATES, random_state=0):
        self.C = C
        self.gamma_rbf = gamma_rbf
        self.tol = tol
        self.max_passes = max_passes
        self.max_updates = max_updates
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        params = SVMParams(float(self.C), float(self.gamma_rbf), float(self.tol),
                           int(self.max_passes), int(self.max_updates))
        self.classes_ = np.array([0, 1])
        self.model_ = train_svm(X, y, params, random_state=self.random_state or 0)
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return decision_function_svm(self.model_, X)

    def predict_proba(self, X):
        d = self.decision_function(X)
        p = platt_probability(d, self.model_.platt_a, self.model_.platt_b)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.decision_function(X) >= 0).astype(int)
