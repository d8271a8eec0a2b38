"""Epsilon-insensitive support vector regression solved by SMO.

The dual is written over ``2n`` variables ``beta = [alpha; alpha*]`` with
labels ``[+1]*n + [-1]*n`` as in LIBSVM. Each iteration picks ``i`` as the
maximal KKT violator and ``j`` by second-order gain, solves the two-variable
subproblem in closed form and updates the gradient. The loop stops when the
maximal violation ``m(beta) - M(beta)`` drops below ``tol``.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ConvergenceError
from .validation import check_features, check_targets

TAU = 1e-12


def rbf_kernel(x, x2, gamma: float) -> float:
    """``exp(-gamma * ||x - x2||^2)`` for two vectors."""
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.shape != x2.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {x2.shape}")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    d = x - x2
    return float(np.exp(-gamma * np.dot(d, d)))


def squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, clipped at zero."""
    aa = np.einsum("ij,ij->i", A, A)[:, None]
    bb = np.einsum("ij,ij->i", B, B)[None, :]
    D = aa + bb - 2.0 * (A @ B.T)
    np.maximum(D, 0.0, out=D)
    if A is B:
        np.fill_diagonal(D, 0.0)
    return D


def rbf_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * squared_distances(A, B))


@njit(cache=True)
def _smo(K, z, C, eps, tol, max_iter):
    n = K.shape[0]
    m2 = 2 * n
    y = np.empty(m2)
    G = np.empty(m2)
    beta = np.zeros(m2)
    for t in range(n):
        y[t] = 1.0
        y[t + n] = -1.0
        G[t] = eps - z[t]
        G[t + n] = eps + z[t]
    it = 0
    gap = np.inf
    while it < max_iter:
        # i: maximal violator over I_up
        gmax = -np.inf
        i = -1
        for t in range(m2):
            if y[t] > 0:
                if beta[t] < C and -G[t] >= gmax:
                    gmax = -G[t]
                    i = t
            else:
                if beta[t] > 0 and G[t] >= gmax:
                    gmax = G[t]
                    i = t
        ii = i % n if i >= 0 else 0
        # j: second-order selection over I_low
        gmax2 = -np.inf
        j = -1
        best = np.inf
        for t in range(m2):
            tt = t % n
            if y[t] > 0:
                if beta[t] > 0:
                    if G[t] >= gmax2:
                        gmax2 = G[t]
                    diff = gmax + G[t]
                    if diff > 0 and i >= 0:
                        quad = K[ii, ii] + K[tt, tt] - 2.0 * K[ii, tt]
                        if quad <= 0:
                            quad = TAU
                        obj = -(diff * diff) / quad
                        if obj <= best:
                            best = obj
                            j = t
            else:
                if beta[t] < C:
                    if -G[t] >= gmax2:
                        gmax2 = -G[t]
                    diff = gmax - G[t]
                    if diff > 0 and i >= 0:
                        quad = K[ii, ii] + K[tt, tt] - 2.0 * K[ii, tt]
                        if quad <= 0:
                            quad = TAU
                        obj = -(diff * diff) / quad
                        if obj <= best:
                            best = obj
                            j = t
        gap = gmax + gmax2
        if gap < tol or j == -1:
            break
        it += 1
        jj = j % n
        Qij = y[i] * y[j] * K[ii, jj]
        old_i = beta[i]
        old_j = beta[j]
        if y[i] != y[j]:
            quad = K[ii, ii] + K[jj, jj] + 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = beta[i] - beta[j]
            beta[i] += delta
            beta[j] += delta
            if diff > 0:
                if beta[j] < 0:
                    beta[j] = 0.0
                    beta[i] = diff
            else:
                if beta[i] < 0:
                    beta[i] = 0.0
                    beta[j] = -diff
            if diff > 0:
                if beta[i] > C:
                    beta[i] = C
                    beta[j] = C - diff
            else:
                if beta[j] > C:
                    beta[j] = C
                    beta[i] = C + diff
        else:
            quad = K[ii, ii] + K[jj, jj] - 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            s = beta[i] + beta[j]
            beta[i] -= delta
            beta[j] += delta
            if s > C:
                if beta[i] > C:
                    beta[i] = C
                    beta[j] = s - C
            else:
                if beta[j] < 0:
                    beta[j] = 0.0
                    beta[i] = s
            if s > C:
                if beta[j] > C:
                    beta[j] = C
                    beta[i] = s - C
            else:
                if beta[i] < 0:
                    beta[i] = 0.0
                    beta[j] = s
        di = beta[i] - old_i
        dj = beta[j] - old_j
        for t in range(m2):
            tt = t % n
            G[t] += y[t] * (y[i] * K[ii, tt] * di + y[j] * K[jj, tt] * dj)

    # offset: average over free variables, else midpoint of the feasible interval
    ub = np.inf
    lb = -np.inf
    nfree = 0
    sfree = 0.0
    for t in range(m2):
        yg = y[t] * G[t]
        if beta[t] >= C:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif beta[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            nfree += 1
            sfree += yg
    if nfree > 0:
        rho = sfree / nfree
    else:
        rho = (ub + lb) / 2.0
    coef = beta[:n] - beta[n:]
    return coef, rho, it, gap


def solve_svr(K: np.ndarray, z: np.ndarray, C: float, epsilon: float, tol: float = 1e-3, max_iter: int | None = None):
    """Solve the dual for a precomputed kernel; returns ``(coef, bias, n_iter, kkt_gap)``."""
    K = np.ascontiguousarray(K, dtype=np.float64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    n = len(z)
    if max_iter is None:
        max_iter = max(10_000_000, 100 * n)
    coef, rho, it, gap = _smo(K, z, float(C), float(epsilon), float(tol), int(max_iter))
    if gap >= tol and it >= max_iter:
        raise ConvergenceError(f"SMO did not converge in {it} iterations (KKT gap {gap:.3g})", n_iter=it)
    return coef, -rho, it, gap


class KernelSVR(RegressorMixin, BaseEstimator):
    """RBF-kernel epsilon-SVR.

    Parameters
    ----------
    C : float
        Box constraint on each dual coefficient.
    gamma : float
        RBF width; ``kernel="precomputed"`` ignores it.
    epsilon : float
        Half-width of the insensitive tube.
    tol : float
        Stopping threshold on the maximal KKT violation.
    max_iter : int or None
        SMO iteration cap; ``None`` means ``max(1e7, 100 * n)``.
    kernel : {"rbf", "precomputed"}
    """

    def __init__(self, C=1.0, gamma=1.0, epsilon=0.1, tol=1e-3, max_iter=None, kernel="rbf"):
        self.C = C
        self.gamma = gamma
        self.epsilon = epsilon
        self.tol = tol
        self.max_iter = max_iter
        self.kernel = kernel

    def _validate_hyper(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if self.kernel == "rbf" and not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.kernel not in ("rbf", "precomputed"):
            raise ValueError(f"unknown kernel {self.kernel!r}")

    def fit(self, X, y):
        self._validate_hyper()
        y = check_targets(y)
        if self.kernel == "precomputed":
            K = check_features(X, square=True)
            if K.shape[0] != len(y):
                raise ValueError("kernel and target sizes differ")
        else:
            X = check_features(X)
            if X.shape[0] != len(y):
                raise ValueError("X and y have different numbers of samples")
            K = rbf_matrix(X, X, self.gamma)
        if len(y) < 2:
            raise ValueError("need at least 2 samples")
        coef, b, it, gap = solve_svr(K, y, self.C, self.epsilon, self.tol, self.max_iter)
        sv = np.flatnonzero(np.abs(coef) > 0)
        self.support_ = sv
        self.dual_coef_ = coef[sv]
        self.intercept_ = float(b)
        self.n_iter_ = int(it)
        self.kkt_gap_ = float(gap)
        if self.kernel == "rbf":
            self.support_vectors_ = X[sv]
            self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "dual_coef_")
        if self.kernel == "precomputed":
            K = check_features(X)
            return K[:, self.support_] @ self.dual_coef_ + self.intercept_
        X = check_features(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        if len(self.support_) == 0:
            return np.full(X.shape[0], self.intercept_)
        return rbf_matrix(X, self.support_vectors_, self.gamma) @ self.dual_coef_ + self.intercept_

    def predict(self, X):
        return self.decision_function(X)


def kkt_residual(K: np.ndarray, z: np.ndarray, coef: np.ndarray, C: float, epsilon: float) -> float:
    """Maximal KKT violation ``m - M`` of a dual solution, recomputed from scratch."""
    n = len(z)
    alpha = np.clip(coef, 0, None)
    alpha_star = np.clip(-coef, 0, None)
    beta = np.concatenate([alpha, alpha_star])
    y = np.concatenate([np.ones(n), -np.ones(n)])
    Kc = K @ coef
    G = np.concatenate([Kc + epsilon - z, -Kc + epsilon + z])
    tol_b = 1e-12 * max(1.0, C)
    up = ((y > 0) & (beta < C - tol_b)) | ((y < 0) & (beta > tol_b))
    low = ((y > 0) & (beta > tol_b)) | ((y < 0) & (beta < C - tol_b))
    m = np.max(-y[up] * G[up]) if up.any() else -np.inf
    M = np.min(-y[low] * G[low]) if low.any() else np.inf
    return float(max(m - M, 0.0))
