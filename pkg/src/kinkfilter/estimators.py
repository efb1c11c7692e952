"""scikit-learn style wrappers around the functional solvers.

A series is passed as ``X`` of shape ``(T,)`` or ``(T, 1)``. ``transform``
returns the trend of whatever series it is given; the sparse estimators
also ``predict`` the fitted hinge model at arbitrary (0-based) times.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_count, check_nonnegative, check_series
from .hp_filter import hp_solve
from .l1_filter import DEFAULT_ETA, extract_kinks, l1_solve, sqrt_l1_solve
from .sparse_hp import DEFAULT_NODE_BUDGET, SparseHpProblem, solve_bnb
from .tuning import TuningGrid, loocv_sparse_hp

__all__ = [
    "HPTrendFilter",
    "L1TrendFilter",
    "SqrtL1TrendFilter",
    "SparseHPFilter",
    "SparseHPFilterCV",
]


def _shaped(trend, X):
    X = np.asarray(X)
    return trend.reshape(-1, 1) if X.ndim == 2 else trend


class _TrendTransformer(TransformerMixin, BaseEstimator):
    def _solve(self, y):
        raise NotImplementedError

    def fit(self, X, y=None):
        series = check_series(X, name="X")
        self.solution_ = self._solve(series)
        self.trend_ = self.solution_.f
        self.fidelity_ = self.solution_.fidelity
        self.n_samples_ = len(series)
        return self

    def transform(self, X):
        check_is_fitted(self, "trend_")
        return _shaped(self._solve(check_series(X, name="X")).f, X)

    def fit_transform(self, X, y=None):
        return _shaped(self.fit(X).trend_, X)


class HPTrendFilter(_TrendTransformer):
    """Hodrick-Prescott trend: ridge penalty on all second differences."""

    def __init__(self, lam=1600.0):
        self.lam = lam

    def _solve(self, y):
        return hp_solve(y, check_nonnegative(self.lam, "lam"))


class L1TrendFilter(_TrendTransformer):
    """l1 trend filter; ``kinks_`` holds second differences above ``eta``."""

    def __init__(self, lam=1.0, eta=DEFAULT_ETA, tol_opt=1e-8):
        self.lam = lam
        self.eta = eta
        self.tol_opt = tol_opt

    def _solve(self, y):
        return l1_solve(y, check_nonnegative(self.lam, "lam"), tol_opt=self.tol_opt)

    def fit(self, X, y=None):
        super().fit(X)
        self.kinks_ = extract_kinks(self.trend_, self.eta)
        return self


class SqrtL1TrendFilter(L1TrendFilter):
    """Square-root l1 trend filter (residual norm instead of its square)."""

    def _solve(self, y):
        return sqrt_l1_solve(y, check_nonnegative(self.lam, "lam"), tol_opt=self.tol_opt)


class SparseHPFilter(_TrendTransformer):
    """Exact sparse HP filter with at most ``kappa`` kinks.

    Parameters
    ----------
    kappa : int
        Maximum number of kinks.
    lam : float
        Ridge weight on the kink slope changes.
    node_budget : int
        Branch-and-bound expansion limit; when hit, ``bound_gap_`` is positive.

    Attributes
    ----------
    kinks_ : tuple of int
        0-based kink indices of the fitted trend.
    model_ : KinkBasisModel
        Intercept, slope and hinge weights; extends the trend to any ``t``.
    """

    def __init__(self, kappa=3, lam=1.0, node_budget=DEFAULT_NODE_BUDGET):
        self.kappa = kappa
        self.lam = lam
        self.node_budget = node_budget

    def _solve(self, y):
        problem = SparseHpProblem(y, check_count(self.kappa, "kappa"), check_nonnegative(self.lam, "lam"))
        return solve_bnb(problem, node_budget=self.node_budget)

    def fit(self, X, y=None):
        super().fit(X)
        self.kinks_ = self.solution_.kink_set
        self.model_ = self.solution_.model
        self.bound_gap_ = self.solution_.bound_gap
        return self

    def predict(self, t):
        check_is_fitted(self, "model_")
        return self.model_.predict(np.asarray(t, dtype=float).ravel())


class SparseHPFilterCV(SparseHPFilter):
    """Sparse HP filter with ``(kappa, lam)`` chosen by leave-one-out CV."""

    def __init__(self, kappas=(2, 3, 4), lambdas=(1.0, 2.0, 4.0, 8.0, 16.0, 32.0),
                 threads=None, node_budget=DEFAULT_NODE_BUDGET):
        self.kappas = kappas
        self.lambdas = lambdas
        self.threads = threads
        self.node_budget = node_budget

    def fit(self, X, y=None):
        series = check_series(X, name="X")
        grid = TuningGrid(tuple(self.kappas), tuple(self.lambdas))
        self.cv_result_ = loocv_sparse_hp(series, grid, threads=self.threads, node_budget=self.node_budget)
        self.kappa_, self.lam_ = self.cv_result_.selected
        problem = SparseHpProblem(series, self.kappa_, self.lam_)
        self.solution_ = solve_bnb(problem, node_budget=self.node_budget)
        self.trend_ = self.solution_.f
        self.fidelity_ = self.solution_.fidelity
        self.n_samples_ = len(series)
        self.kinks_ = self.solution_.kink_set
        self.model_ = self.solution_.model
        self.bound_gap_ = self.solution_.bound_gap
        return self

    def _solve(self, y):
        check_is_fitted(self, "kappa_")
        return solve_bnb(SparseHpProblem(y, self.kappa_, self.lam_), node_budget=self.node_budget)
