"""L1-loss linear SVM trained by dual coordinate ascent.

Solves  min_w 0.5*|w|^2 + sum_i C_i * max(0, 1 - y_i * w.x_i)  where the
bias is folded into ``w`` through a constant augmented feature. Per-sample
costs allow the asymmetric weighting exemplar SVMs need.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

BIAS_FEATURE = 1.0


@numba.njit(cache=True, nogil=True, fastmath={"reassoc", "contract"})
def _dual_cd(X, y, C, alpha, w, max_epochs, tol, seed):
    n, d = X.shape
    qd = np.empty(n)
    for i in range(n):
        s = 0.0
        for k in range(d):
            s += X[i, k] * X[i, k]
        qd[i] = s
    np.random.seed(seed)
    # samples pinned at a bound by the last full pass are skipped next epoch;
    # the gap is always evaluated over every sample
    active = np.ones(n, np.bool_)
    order = np.arange(n)
    gap = np.inf
    epoch = 0
    while epoch < max_epochs:
        np.random.shuffle(order)
        for t in range(n):
            i = order[t]
            if qd[i] <= 0.0 or not active[i]:
                continue
            m = 0.0
            for k in range(d):
                m += w[k] * X[i, k]
            g = y[i] * m - 1.0
            a_old = alpha[i]
            a_new = a_old - g / qd[i]
            if a_new < 0.0:
                a_new = 0.0
            elif a_new > C[i]:
                a_new = C[i]
            delta = (a_new - a_old) * y[i]
            if delta != 0.0:
                alpha[i] = a_new
                for k in range(d):
                    w[k] += delta * X[i, k]
        epoch += 1
        # duality gap
        ww = 0.0
        for k in range(d):
            ww += w[k] * w[k]
        hinge = 0.0
        asum = 0.0
        for i in range(n):
            m = 0.0
            for k in range(d):
                m += w[k] * X[i, k]
            g = y[i] * m - 1.0
            if g < 0.0:
                hinge -= C[i] * g
            asum += alpha[i]
            active[i] = not ((alpha[i] <= 0.0 and g > 0.0) or (alpha[i] >= C[i] and g < 0.0))
        primal = 0.5 * ww + hinge
        dual = asum - 0.5 * ww
        gap = primal - dual
        if gap < tol:
            break
    return epoch, gap


@dataclass
class SvmFit:
    weights: np.ndarray
    bias: float
    alpha: np.ndarray
    epochs: int
    gap: float

    def decision(self, X):
        return np.asarray(X) @ self.weights + self.bias


def augment(X):
    X = np.asarray(X, dtype=np.float64)
    return np.hstack([X, np.full((X.shape[0], 1), BIAS_FEATURE)])


def fit_linear_svm(X, y, C, alpha0=None, tol=1e-4, max_epochs=2000, seed=0) -> SvmFit:
    """Fit a linear SVM with labels ``y`` in {-1, +1} and per-sample costs ``C``.

    ``alpha0`` warm-starts the dual variables (e.g. across mining rounds).
    """
    Xa = augment(X)
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.abs(y) == 1):
        raise ValueError("labels must be -1 or +1")
    C = np.broadcast_to(np.asarray(C, dtype=np.float64), y.shape).copy()
    alpha = np.zeros(len(y)) if alpha0 is None else np.clip(np.asarray(alpha0, float).copy(), 0.0, C)
    w = (alpha * y) @ Xa
    epochs, gap = _dual_cd(Xa, y, C, alpha, w, max_epochs, tol, seed)
    return SvmFit(w[:-1].copy(), float(w[-1] * BIAS_FEATURE), alpha, int(epochs), float(gap))
