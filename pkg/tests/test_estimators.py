import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import piecewise_linear
from kinkfilter.estimators import (
    HPTrendFilter,
    L1TrendFilter,
    SparseHPFilter,
    SparseHPFilterCV,
    SqrtL1TrendFilter,
)
from kinkfilter.hp_filter import hp_solve
from kinkfilter.sparse_hp import SparseHpProblem, solve_bnb


@pytest.fixture
def y(rng):
    return piecewise_linear(40, [12, 27], [0.1, -0.08, 0.03]) + 0.05 * rng.normal(size=40)


@pytest.mark.parametrize("est", [HPTrendFilter(5.0), L1TrendFilter(2.0), SqrtL1TrendFilter(0.5), SparseHPFilter(2, 1.0)])
def test_params_and_clone(est, y):
    c = clone(est)
    assert c.get_params() == est.get_params()
    out = c.fit_transform(y)
    assert out.shape == y.shape
    assert c.fit_transform(y.reshape(-1, 1)).shape == (40, 1)
    np.testing.assert_allclose(c.transform(y), out)


def test_hp_matches_function(y):
    np.testing.assert_allclose(HPTrendFilter(5.0).fit(y).trend_, hp_solve(y, 5.0).f)


def test_l1_kinks(y):
    est = L1TrendFilter(0.5).fit(y)
    assert all(1 <= k <= 38 for k in est.kinks_.indices)


def test_sparse_predict_extends_model(y):
    est = SparseHPFilter(2, 1.0).fit(y)
    ref = solve_bnb(SparseHpProblem(y, 2, 1.0))
    assert est.kinks_ == ref.kink_set and est.bound_gap_ == 0.0
    np.testing.assert_allclose(est.predict(np.arange(40)), ref.f, atol=1e-12)
    slope = est.predict([40])[0] - est.predict([39])[0]
    assert slope == pytest.approx(est.predict([39])[0] - est.predict([38])[0])


def test_not_fitted(y):
    with pytest.raises(NotFittedError):
        SparseHPFilter().predict([1.0])
    with pytest.raises(NotFittedError):
        HPTrendFilter().transform(y)


def test_cv(y):
    est = SparseHPFilterCV(kappas=(1, 2), lambdas=(1.0, 4.0)).fit(y)
    assert (est.kappa_, est.lam_) == est.cv_result_.selected
    assert len(est.kinks_) <= est.kappa_
    np.testing.assert_allclose(est.transform(y), est.trend_)
