"""Independent dense reference computations used as test oracles.

Everything here is deliberately naive: full matrices, generic solvers,
no structure exploited, so agreement with the package is evidence.
"""

import itertools

import numpy as np


def dense_D(T):
    D = np.zeros((T - 2, T))
    for i in range(T - 2):
        D[i, i : i + 3] = (1.0, -2.0, 1.0)
    return D


def ols_line(y):
    t = np.arange(len(y), dtype=float)
    X = np.column_stack([np.ones_like(t), t])
    return X @ np.linalg.lstsq(X, y, rcond=None)[0]


def dense_hp(y, lam):
    T = len(y)
    D = dense_D(T)
    return np.linalg.solve(np.eye(T) + lam * D.T @ D, y)


def dense_restricted_qp(y, kinks, lam, weights=None):
    """min sum w (y-f)^2 + lam sum_{k in K} (Df)_k^2  s.t. (Df)_t = 0 for interior t not in K.

    Solved over f in R^T through the KKT system of the equality-constrained QP.
    ``kinks`` are 0-based interior indices; (Df) at index k is row k-1 of D.
    """
    T = len(y)
    w = np.ones(T) if weights is None else np.asarray(weights, float)
    D = dense_D(T)
    on = [k - 1 for k in kinks]
    off = [i for i in range(T - 2) if i not in on]
    H = 2.0 * np.diag(w) + 2.0 * lam * D[on].T @ D[on]
    A = D[off]
    m = A.shape[0]
    K = np.block([[H, A.T], [A, np.zeros((m, m))]])
    rhs = np.concatenate([2.0 * w * y, np.zeros(m)])
    f = np.linalg.lstsq(K, rhs, rcond=None)[0][:T]
    obj = float(np.sum(w * (y - f) ** 2) + lam * np.sum((D[on] @ f) ** 2))
    return f, obj


def brute_force_sparse_hp(y, kappa, lam):
    """Best objective over all kink sets of size <= kappa, via the dense oracle."""
    T = len(y)
    best = (np.inf, None)
    for size in range(kappa + 1):
        for K in itertools.combinations(range(1, T - 1), size):
            _, obj = dense_restricted_qp(y, K, lam)
            if best[1] is None or obj < best[0] - 1e-12 * max(1.0, abs(best[0])):
                best = (obj, K)
    return best


def l1_dual_certificate(y, f, lam):
    """Max violation of the l1 trend-filter optimality conditions, dense algebra.

    Stationarity: 2(y - f) = D'u with |u| <= lam and u = lam*sign(Df) on the support.
    """
    D = dense_D(len(y))
    u = np.linalg.lstsq(D.T, 2.0 * (y - f), rcond=None)[0]
    stat = np.max(np.abs(D.T @ u - 2.0 * (y - f)))
    d = D @ f
    on = np.abs(d) > 1e-9
    box = np.max(np.abs(u)) - lam
    sign = np.max(np.abs(u[on] - lam * np.sign(d[on])), initial=0.0)
    return float(max(stat, box, sign))


def exact_ridge_fidelity(y, kinks, lam, dps=50):
    """Fidelity of the unbounded hinge ridge fit in ``dps``-digit arithmetic."""
    import mpmath as mp

    with mp.workdps(dps):
        T = len(y)
        X = mp.matrix([[1, t] + [max(t - k, 0) for k in kinks] for t in range(T)])
        Y = mp.matrix([mp.mpf(float(v)) for v in y])
        P = mp.diag([0, 0] + [1] * len(kinks))
        beta = mp.lu_solve(X.T * X + mp.mpf(lam) * P, X.T * Y)
        r = Y - X * beta
        return float(sum(v**2 for v in r))
