import math

import numpy as np
import pytest

from kinkfilter.exceptions import InputError
from kinkfilter.risk_lab import (
    SyntheticSpec,
    empirical_risk,
    exp_risk_bound_check,
    generate,
    overselection_study,
    risk_study,
    summarize_risk,
)


class TestSpec:
    def test_kinks_snap_to_grid(self):
        assert SyntheticSpec(T=50).kinks == (15, 32)
        assert SyntheticSpec(T=100).kappa == 2

    def test_truth_is_piecewise_linear(self):
        spec = SyntheticSpec(T=100)
        d2 = np.diff(spec.truth(), 2)
        assert set(np.flatnonzero(np.abs(d2) > 1e-12) + 1) == set(spec.kinks)

    @pytest.mark.parametrize(
        "kw",
        [
            {"noise": "cauchy"},
            {"noise": "student_t", "df": 2.0},
            {"sigma": -1.0},
            {"slopes": (1.0, 2.0)},
            {"slopes": (9.0, -3.0, 1.0)},
            {"slopes": (2.0, 2.0, 1.0)},
            {"level": 1.9},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(InputError):
            SyntheticSpec(**kw)


class TestGenerate:
    def test_zero_noise(self):
        y, f = generate(SyntheticSpec(sigma=0.0))
        np.testing.assert_array_equal(y, f)

    @pytest.mark.parametrize("noise", ["gaussian", "student_t", "garch"])
    def test_deterministic(self, noise):
        spec = SyntheticSpec(noise=noise, seed=11)
        a, _ = generate(spec, rep=3)
        b, _ = generate(spec, rep=3)
        c, _ = generate(spec, rep=4)
        assert a.tobytes() == b.tobytes() and a.tobytes() != c.tobytes()

    def test_gaussian_mean_clt(self):
        spec = SyntheticSpec(T=100, sigma=0.3)
        y, f = generate(spec)
        assert abs(np.mean(y - f)) <= 4 * 0.3 / math.sqrt(100)

    @pytest.mark.parametrize("noise", ["student_t", "garch"])
    def test_scale_roughly_sigma(self, noise):
        spec = SyntheticSpec(T=100, noise=noise, sigma=0.3)
        u = np.concatenate([np.subtract(*generate(spec, r)) for r in range(40)])
        assert abs(u.mean()) < 0.05
        assert 0.15 < u.std() < 0.6


class TestRisk:
    def test_examples(self, rng):
        f = rng.normal(size=10)
        assert empirical_risk(f, f) == 0.0
        assert empirical_risk(f + 1, f) == pytest.approx(1.0)
        with pytest.raises(InputError):
            empirical_risk(f, f[:-1])

    def test_exp_bound_trivial(self):
        f = np.full(5, 0.3)
        rep = exp_risk_bound_check(f, f, 2.0)
        assert rep.lhs == 0.0 and rep.holds

    def test_exp_bound_random_pairs(self, rng):
        for _ in range(200):
            a, b = rng.uniform(-2, 2, size=(2, 30))
            assert exp_risk_bound_check(a, b, 2.0).holds

    def test_exp_bound_limit(self):
        # f* at the ceiling, f_hat just inside: the ratio tends to 1 from below
        C, eps = 2.0, 1e-4
        f_star = np.full(20, C)
        rep = exp_risk_bound_check(f_star - eps, f_star, C)
        assert 1 - 2 * eps < rep.ratio < 1.0
        assert rep.lhs / empirical_risk(f_star - eps, f_star) == pytest.approx(math.exp(2 * C), rel=2 * eps)

    def test_exp_bound_outside_box(self):
        with pytest.raises(InputError):
            exp_risk_bound_check(np.full(3, 2.5), np.zeros(3), 2.0)


class TestStudies:
    def test_noiseless_recovers_truth(self):
        spec = SyntheticSpec(T=60, sigma=0.0)
        rows = risk_study(spec, Ts=(60,), reps=2, lam=1.0)
        # the ridge still shrinks the slope changes a little at lambda = 1
        assert all(r[5] and r[3] < 1e-5 for r in rows)
        rows = risk_study(spec, Ts=(60,), reps=1, lam=1e-9)
        assert rows[0][5] and rows[0][3] < 1e-16

    def test_rows_independent_of_threads(self):
        spec = SyntheticSpec(T=40)
        a = risk_study(spec, Ts=(40, 60), reps=3, threads=1)
        b = risk_study(spec, Ts=(40, 60), reps=3, threads=2)
        assert a == b

    def test_summary(self):
        rows = risk_study(SyntheticSpec(), Ts=(50, 100), reps=4)
        est = summarize_risk(rows)
        assert [(e.T, e.method, e.replications) for e in est] == [(50, "sparse_hp", 4), (100, "sparse_hp", 4)]
        lo, hi = est[0].quartiles
        assert lo <= est[0].median <= hi

    def test_unknown_method(self):
        with pytest.raises(InputError):
            risk_study(SyntheticSpec(), methods=("lasso",))

    def test_overselection_noiseless(self):
        # an almost vanishing ridge keeps the matched fidelity at round-off level
        spec = SyntheticSpec(T=60, sigma=0.0)
        _, summary = overselection_study(spec, reps=1, lam=1e-6)
        assert summary["sparse_hp"]["exact_recovery"] == 1.0
        assert summary["l1"]["exact_recovery"] == 1.0

    def test_sparse_count_bounded_by_kappa(self):
        rows, summary = overselection_study(SyntheticSpec(T=60), reps=5)
        assert all(r[4] <= 2 for r in rows if r[2] == "sparse_hp")
        assert summary["l1"]["mean_kinks"] >= summary["sparse_hp"]["mean_kinks"]
