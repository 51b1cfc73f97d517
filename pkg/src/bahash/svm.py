"""Linear SVM trained by dual coordinate descent.

Solves the L2-regularized hinge-loss problem

    min_w  0.5 * ||w||^2 + C * sum_i max(0, 1 - y_i * w.x_i)

with the bias folded into ``w`` through a constant feature, so the
objective is strongly convex in (weights, bias) and the optimum is unique.
The dual is a box-constrained QP over ``0 <= alpha_i <= C`` that is solved
one coordinate at a time (Hsieh et al., 2008).
"""

import numpy as np
from numba import njit


@njit(nogil=True, cache=True)
def _dual_cd(Xa, y, C, tol, max_passes, alpha, seed):
    N, P = Xa.shape
    w = np.zeros(P)
    for i in range(N):
        if alpha[i] != 0.0:
            for k in range(P):
                w[k] += alpha[i] * y[i] * Xa[i, k]
    qd = np.empty(N)
    for i in range(N):
        s = 0.0
        for k in range(P):
            s += Xa[i, k] * Xa[i, k]
        qd[i] = s
    order = np.arange(N)
    state = np.uint64(seed) * np.uint64(2654435761) + np.uint64(88172645463325252)
    passes = 0
    for it in range(max_passes):
        passes = it + 1
        # xorshift64 Fisher-Yates; fixed seed keeps each fit deterministic
        for i in range(N - 1, 0, -1):
            state ^= state << np.uint64(13)
            state ^= state >> np.uint64(7)
            state ^= state << np.uint64(17)
            j = np.int64(state % np.uint64(i + 1))
            t = order[i]
            order[i] = order[j]
            order[j] = t
        pg_max = -np.inf
        pg_min = np.inf
        for s_ in range(N):
            i = order[s_]
            g = 0.0
            for k in range(P):
                g += w[k] * Xa[i, k]
            g = y[i] * g - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= C:
                pg = max(g, 0.0)
            else:
                pg = g
            if pg > pg_max:
                pg_max = pg
            if pg < pg_min:
                pg_min = pg
            if pg != 0.0:
                na = min(max(a - g / qd[i], 0.0), C)
                d = (na - a) * y[i]
                if d != 0.0:
                    alpha[i] = na
                    for k in range(P):
                        w[k] += d * Xa[i, k]
        if pg_max - pg_min <= tol:
            break
    return w, passes


def augment(X: np.ndarray) -> np.ndarray:
    """``(D, N)`` features -> ``(N, D+1)`` rows with a trailing constant 1."""
    D, N = X.shape
    Xa = np.empty((N, D + 1))
    Xa[:, :D] = X.T
    Xa[:, D] = 1.0
    return Xa


def primal_objective(w: np.ndarray, Xa: np.ndarray, y: np.ndarray, C: float) -> float:
    margins = 1.0 - y * (Xa @ w)
    return 0.5 * float(w @ w) + C * float(np.maximum(margins, 0.0).sum())


def fit_linear_svm(Xa, y, C, tol=1e-3, max_passes=1000, alpha0=None, seed=0):
    """Fit one binary SVM.  Returns ``(w, alpha, passes)``; ``w[-1]`` is the bias."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    if alpha0 is None:
        alpha = np.zeros(y.shape[0])
    else:
        alpha = np.clip(np.array(alpha0, dtype=np.float64), 0.0, C)
    w, passes = _dual_cd(np.ascontiguousarray(Xa), y, float(C), float(tol),
                         int(max_passes), alpha, int(seed))
    return w, alpha, passes
