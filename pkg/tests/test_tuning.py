import math

import numpy as np
import pytest

from conftest import piecewise_linear
from kinkfilter.exceptions import BracketError, InputError, KinkFilterError
from kinkfilter.hp_filter import hp_solve
from kinkfilter.l1_filter import l1_solve, lambda_max
from kinkfilter.sparse_hp import SparseHpProblem, solve_bnb
from kinkfilter.tuning import TuningGrid, loocv_sparse_hp, match_fidelity, resolve_threads


def series(rng, T=30, sigma=0.1):
    return piecewise_linear(T, [T // 3, 2 * T // 3], [0.05, -0.06, 0.02]) + sigma * rng.normal(size=T)


def loo_by_hand(y, kappa, lam):
    """Direct leave-one-out: delete the point, refit on the shortened design, predict it."""
    total = 0.0
    for s in range(len(y)):
        sol = solve_bnb(SparseHpProblem(y, kappa, lam, holdout=s))
        total += (y[s] - sol.model.predict(s)) ** 2
    return total


class TestGrid:
    def test_defaults(self):
        g = TuningGrid()
        assert g.kappas == (2, 3, 4)
        assert g.lambdas == (1.0, 2.0, 4.0, 8.0, 16.0, 32.0)

    @pytest.mark.parametrize("kw", [{"kappas": ()}, {"lambdas": ()}, {"lambdas": (0.0,)}, {"kappas": (-1,)}])
    def test_invalid(self, kw):
        with pytest.raises(InputError):
            TuningGrid(**kw)


class TestLoocv:
    def test_matches_direct_leave_one_out(self, rng):
        y = series(rng, T=16)
        res = loocv_sparse_hp(y, TuningGrid((1, 2), (1.0, 4.0)))
        for (k, v), score in res.scores.items():
            assert score == pytest.approx(loo_by_hand(y, k, v), rel=1e-10)
        assert res.selected == min(res.scores, key=lambda c: (res.scores[c], c))

    def test_noiseless_one_kink_criterion_vanishes(self):
        y = piecewise_linear(20, [8], [0.2, -0.1], level=1.0)
        res = loocv_sparse_hp(y, TuningGrid((1,), (1e-9, 1e-8)))
        for score in res.scores.values():
            assert score <= 1e-12

    def test_ties_prefer_smaller_kappa_then_lambda(self):
        y = piecewise_linear(20, [8], [0.2, -0.1], level=1.0)
        res = loocv_sparse_hp(y, TuningGrid((1, 2), (1e-12, 2e-12)))
        assert res.selected == (1, 1e-12) or res.scores[res.selected] < res.scores[(1, 1e-12)]

    def test_parallel_is_identical(self, rng):
        y = series(rng, T=14)
        grid = TuningGrid((1, 2), (1.0, 2.0))
        a = loocv_sparse_hp(y, grid, threads=1)
        b = loocv_sparse_hp(y, grid, threads=2)
        assert a.scores == b.scores and a.selected == b.selected

    def test_surface_rows_and_gaps(self, rng):
        y = series(rng, T=14)
        res = loocv_sparse_hp(y, TuningGrid((1, 2), (1.0,)))
        assert [r[:2] for r in res.surface()] == [(1, 1.0), (2, 1.0)]
        assert res.max_gap == 0.0 and res.invalid == ()

    def test_invalid_cell_is_excluded(self, rng):
        # ten kinks in twelve points with a vanishing ridge leaves hold-out fits rank deficient
        y = series(rng, T=12)
        res = loocv_sparse_hp(y, TuningGrid((1, 10), (1e-300,)))
        assert res.invalid == ((10, 1e-300),)
        assert res.selected == (1, 1e-300)
        assert not res.diagnostics[(10, 1e-300)].valid

    def test_all_cells_invalid(self, rng):
        with pytest.raises(KinkFilterError):
            loocv_sparse_hp(series(rng, T=12), TuningGrid((10,), (1e-300,)))

    def test_short_series_rejected(self):
        with pytest.raises(InputError):
            loocv_sparse_hp(np.arange(9.0))

    def test_threads_from_env(self, monkeypatch):
        monkeypatch.setenv("KINKFILTER_THREADS", "3")
        assert resolve_threads(None) == 3
        assert resolve_threads(2) == 2
        with pytest.raises(InputError):
            resolve_threads(0)


class TestMatchFidelity:
    @pytest.mark.parametrize("filt", ["hp", "l1", "sqrt_l1"])
    def test_hits_target(self, rng, filt):
        y = series(rng, T=40, sigma=0.2)
        target = solve_bnb(SparseHpProblem(y, 2, 1.0)).fidelity
        m = match_fidelity(y, target, filt)
        assert abs(m.fidelity - target) <= 1e-6 * target
        assert m.solution.fidelity == pytest.approx(m.fidelity)

    def test_zero_target_gives_lambda_zero(self, rng):
        y = series(rng)
        m = match_fidelity(y, 0.0, "l1")
        assert m.lam == 0.0 and m.fidelity == 0.0
        np.testing.assert_array_equal(m.solution.f, y)

    def test_unreachable_target_reports_bracket(self, rng):
        y = series(rng)
        line_fid = l1_solve(y, lambda_max(y)).fidelity
        with pytest.raises(BracketError) as info:
            match_fidelity(y, 2 * line_fid, "l1")
        assert info.value.lo is not None and info.value.hi is not None

    def test_custom_bracket(self, rng):
        y = series(rng, T=40, sigma=0.2)
        target = hp_solve(y, 7.0).fidelity
        m = match_fidelity(y, target, "hp", bracket=(1.0, 100.0))
        assert m.lam == pytest.approx(7.0, rel=1e-4)

    def test_bad_filter(self, rng):
        with pytest.raises(InputError):
            match_fidelity(series(rng), 1.0, "lasso")

    def test_monotonicity_guard(self, rng, monkeypatch):
        import kinkfilter.tuning as tuning

        y = series(rng)
        calls = iter([5.0, 1.0])
        monkeypatch.setattr(tuning, "fidelity_of", lambda *a: (next(calls), None))
        with pytest.raises(BracketError, match="not increasing"):
            match_fidelity(y, 2.0, "hp", bracket=(1.0, 2.0))
