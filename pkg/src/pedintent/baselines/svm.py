"""RBF support vector classifier trained with SMO.

Working-set selection follows the maximal-violating-pair rule with
second-order choice of the partner index (Fan, Chen and Lin, 2005).
Labels are handled as ±1 internally; the public API takes {0, 1}.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TAU = 1e-12


def rbf_kernel(a, b, gamma: float) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.exp(-gamma * np.maximum(d, 0.0))


@dataclass
class SvmModel:
    support_vectors: np.ndarray  # (m, d)
    dual_coef: np.ndarray        # (m,) alpha_i * y_i, within [-C, C]
    bias: float
    gamma: float
    C: float
    iterations: int = 0

    def decision_function(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return rbf_kernel(x, self.support_vectors, self.gamma) @ self.dual_coef + self.bias

    def predict(self, x) -> np.ndarray:
        return (self.decision_function(x) > 0).astype(int)

    def to_dict(self) -> dict:
        return {"support_vectors": self.support_vectors.tolist(), "dual_coef": self.dual_coef.tolist(),
                "bias": self.bias, "gamma": self.gamma, "C": self.C}

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        sv = np.asarray(d["support_vectors"], dtype=np.float64)
        return cls(sv.reshape(len(d["dual_coef"]), -1), np.asarray(d["dual_coef"], dtype=np.float64),
                   float(d["bias"]), float(d["gamma"]), float(d["C"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "SvmModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class _Solution:
    alpha: np.ndarray
    rho: float
    iterations: int
    gap: float


def _smo(K: np.ndarray, y: np.ndarray, C: float, tol: float, max_iter: int) -> _Solution:
    n = len(y)
    alpha = np.zeros(n)
    grad = -np.ones(n)          # G = Q alpha - e
    diag = np.diag(K).copy()
    it = 0
    gap = np.inf
    while it < max_iter:
        yg = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(yg[up])])
        m = yg[i]
        big_m = yg[low].min()
        gap = m - big_m
        if gap <= tol:
            break
        cand = low & (yg < m)
        b = m - yg[cand]
        a = diag[i] + diag[cand] - 2.0 * K[i, cand]
        a = np.where(a > 0, a, TAU)
        idx = np.flatnonzero(cand)
        j = int(idx[np.argmin(-(b * b) / a)])

        ai, aj = alpha[i], alpha[j]
        quad = max(diag[i] + diag[j] - 2.0 * K[i, j], TAU)
        qi = y[i] * y * K[i]    # row i of Q
        qj = y[j] * y * K[j]
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0 and aj < 0:
                aj, ai = 0.0, diff
            elif diff <= 0 and ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0 and ai > C:
                ai, aj = C, C - diff
            elif diff <= 0 and aj > C:
                aj, ai = C, C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            s = ai + aj
            ai -= delta
            aj += delta
            if s > C and ai > C:
                ai, aj = C, s - C
            elif s <= C and aj < 0:
                aj, ai = 0.0, s
            if s > C and aj > C:
                aj, ai = C, s - C
            elif s <= C and ai < 0:
                ai, aj = 0.0, s
        grad += qi * (ai - alpha[i]) + qj * (aj - alpha[j])
        alpha[i], alpha[j] = ai, aj
        it += 1

    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yg[free].mean())
    else:
        # midpoint of the feasible interval
        ub, lb = np.inf, -np.inf
        for t in range(n):
            at_upper = alpha[t] >= C
            at_lower = alpha[t] <= 0
            if (y[t] > 0 and at_upper) or (y[t] < 0 and at_lower):
                lb = max(lb, yg[t])
            else:
                ub = min(ub, yg[t])
        rho = 0.5 * (ub + lb) if np.isfinite(ub) and np.isfinite(lb) else (ub if np.isfinite(ub) else lb)
    return _Solution(alpha, float(rho), it, float(gap))


def train_svc(features, labels, gamma: float | None = None, C: float = 1.0, tol: float = 1e-3,
              max_passes: int = 100) -> SvmModel:
    """Fit an RBF SVC on binary {0, 1} labels.

    ``gamma`` defaults to 1 / feature_count.  Iterations are capped at
    ``max_passes`` times the sample count.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    lab = np.asarray(labels).astype(int)
    if x.shape[0] != lab.shape[0]:
        raise ValueError("features and labels differ in length")
    if not set(np.unique(lab)) <= {0, 1}:
        raise ValueError("labels must be 0/1")
    counts = np.bincount(lab, minlength=2)
    if counts.min() < 2:
        raise ValueError(f"need at least 2 samples per class, got counts {counts.tolist()}")
    if C <= 0:
        raise ValueError("C must be positive")
    gamma = 1.0 / x.shape[1] if gamma is None else float(gamma)
    y = np.where(lab == 1, 1.0, -1.0)
    K = rbf_kernel(x, x, gamma)
    sol = _smo(K, y, C, tol, max_passes * len(y))
    sv = sol.alpha > 0
    if not sv.any():
        raise ArithmeticError("SMO finished without support vectors")
    return SvmModel(x[sv].copy(), (sol.alpha * y)[sv], -sol.rho, gamma, C, sol.iterations)


def kkt_violations(model: SvmModel, features, labels, alpha_full: np.ndarray | None = None) -> np.ndarray:
    """Per-sample KKT violation of a trained model on its training set.

    Reconstructs alpha from the stored support vectors by matching rows.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.where(np.asarray(labels) == 1, 1.0, -1.0)
    if alpha_full is None:
        alpha_full = np.zeros(len(y))
        for sv, coef in zip(model.support_vectors, model.dual_coef):
            hit = np.flatnonzero(np.all(x == sv, axis=1) & (y * coef > 0) & (alpha_full == 0))
            alpha_full[hit[0]] = abs(coef)
    yf = y * model.decision_function(x)
    C = model.C
    eps = 1e-9 * C
    v = np.zeros(len(y))
    lower = alpha_full <= eps
    upper = alpha_full >= C - eps
    free = ~lower & ~upper
    v[lower] = np.maximum(0.0, 1.0 - yf[lower])
    v[upper] = np.maximum(0.0, yf[upper] - 1.0)
    v[free] = np.abs(yf[free] - 1.0)
    return v
