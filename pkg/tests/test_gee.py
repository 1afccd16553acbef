import json

import numpy as np
import pytest

from rmst_bgmm.data import Dataset
from rmst_bgmm.errors import RankDeficient, SingleArm
from rmst_bgmm.gee import gee_fit, km_diff_rmst
from rmst_bgmm.gmm import build_design, score
from rmst_bgmm.sim import builtin_scenario, calibrate_censoring, generate
from rmst_bgmm.survival import pseudo_obs


def sim(key="2", n=200, seed=3):
    spec = builtin_scenario(key)
    return generate(spec, n, seed, censor_upper=calibrate_censoring(spec))


def test_intercept_only_mean():
    fit = gee_fit(np.ones((3, 1)), [1.0, 2.0, 3.0])
    assert fit.beta_hat[0] == pytest.approx(2.0)


def test_exact_fit_zero_sandwich():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(20), rng.normal(size=20)])
    b = np.array([1.5, -0.5])
    fit = gee_fit(X, X @ b)
    np.testing.assert_allclose(fit.beta_hat, b, atol=1e-12)
    np.testing.assert_allclose(fit.sandwich_cov, 0, atol=1e-20)


def test_against_brute_force_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n, q = rng.integers(10, 60), rng.integers(1, 5)
        X = np.column_stack([np.ones(n), rng.normal(size=(n, q - 1))])
        y = rng.normal(size=n) * 3
        fit = gee_fit(X, y)
        # normal equations by explicit inverse; meat by per-subject outer products
        inv = np.linalg.inv(X.T @ X)
        b = inv @ X.T @ y
        r = y - X @ b
        meat = sum(np.outer(X[i], X[i]) * r[i] ** 2 for i in range(n))
        np.testing.assert_allclose(fit.beta_hat, b, atol=1e-9)
        np.testing.assert_allclose(fit.sandwich_cov, inv @ meat @ inv, atol=1e-9)
        assert np.all(fit.ci_lower < fit.ci_upper)
        assert np.all(np.linalg.eigvalsh(fit.sandwich_cov) > -1e-12)


def test_wald_interval_width():
    rng = np.random.default_rng(2)
    X = np.column_stack([np.ones(50), rng.normal(size=50)])
    fit = gee_fit(X, rng.normal(size=50), confidence=0.9)
    np.testing.assert_allclose(fit.ci_upper - fit.beta_hat, 1.6448536269514722 * fit.se, rtol=1e-12)


def test_rank_deficient():
    X = np.column_stack([np.ones(5), np.ones(5)])
    with pytest.raises(RankDeficient):
        gee_fit(X, np.arange(5.0))


def test_score_zero_at_gee_solution():
    d = sim()
    X = build_design(d)
    y = pseudo_obs(d, 5.0)
    assert np.max(np.abs(score(gee_fit(X, y).beta_hat, X, y))) < 1e-10


def test_sandwich_invariant_under_reordering():
    d = sim()
    X = build_design(d)
    y = pseudo_obs(d, 5.0).values
    perm = np.random.default_rng(0).permutation(d.n)
    a, b = gee_fit(X.values, y), gee_fit(X.values[perm], y[perm])
    np.testing.assert_allclose(a.sandwich_cov, b.sandwich_cov, rtol=1e-10)


def test_gee_reproduces_km_difference():
    d = sim()
    km = km_diff_rmst(d, 5.0)
    # within-arm pseudo-values: the jackknife mean identity holds per arm, so the match is exact
    exact = gee_fit(build_design(d), pseudo_obs(d, 5.0, by_arm=True))
    assert exact.beta_hat[1] == pytest.approx(km.estimate, abs=1e-8)
    # pooled pseudo-values estimate the same quantity, but only approximately
    pooled = gee_fit(build_design(d), pseudo_obs(d, 5.0))
    assert pooled.beta_hat[1] == pytest.approx(km.estimate, abs=0.05)


def test_gee_json():
    d = sim()
    fit = gee_fit(build_design(d), pseudo_obs(d, 5.0))
    out = json.loads(fit.to_json())
    assert [p["name"] for p in out["parameters"]] == ["intercept", "arm"]


def test_km_diff_identical_arms_is_zero():
    t = [1.0, 2.5, 3.0, 4.2, 6.0]
    e = [1, 0, 1, 1, 0]
    d = Dataset(t + t, e + e, [0] * 5 + [1] * 5)
    assert km_diff_rmst(d, 5.0).estimate == pytest.approx(0.0, abs=1e-15)


def test_km_diff_uncensored_plug_in():
    rng = np.random.default_rng(4)
    t = rng.exponential(3, 40)
    a = np.arange(40) % 2
    d = Dataset(t, np.ones(40), a)
    m = np.minimum(t, 5.0)
    assert km_diff_rmst(d, 5.0).estimate == pytest.approx(m[a == 1].mean() - m[a == 0].mean(), abs=1e-12)


def test_km_diff_variance_hand_value():
    # one arm: times 1,2,3 all events, tau 2.5 -> terms at t=1 and t=2 (t=3 > tau)
    # int_1^2.5 S = 2/3 + 0.5/3 = 5/6 ; int_2^2.5 S = 1/6
    var0 = (5 / 6) ** 2 * 1 / (3 * 2) + (1 / 6) ** 2 * 1 / (2 * 1)
    d = Dataset([1, 2, 3, 1, 2, 3], [1] * 6, [0, 0, 0, 1, 1, 1])
    assert km_diff_rmst(d, 2.5).se == pytest.approx(np.sqrt(2 * var0), rel=1e-12)


def test_km_diff_single_arm():
    with pytest.raises(SingleArm):
        km_diff_rmst(Dataset([1, 2], [1, 1], [0, 0]), 1.0)


@pytest.mark.slow
def test_km_diff_null_unbiased():
    spec = builtin_scenario("1")
    c = calibrate_censoring(spec)
    est = np.array([km_diff_rmst(generate(spec, 500, s, censor_upper=c), 5.0).estimate
                    for s in range(1000)])
    assert abs(est.mean()) < 3 * est.std(ddof=1) / np.sqrt(1000)
