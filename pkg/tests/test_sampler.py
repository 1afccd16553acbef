import csv
import json
import math

import numpy as np
import pytest

from rmst_bgmm.errors import DivergentChains, InputError, NonFiniteTarget, TooFewDraws, UnknownParameter
from rmst_bgmm.gee import gee_fit
from rmst_bgmm.gmm import GmmState, build_design
from rmst_bgmm.sampler import (PosteriorDraws, SamplerConfig, diagnose, ess_bulk, run_metropolis,
                               sample, split_rhat, summarize, tail_mcse)
from rmst_bgmm.sampler import _rhat_basic
from rmst_bgmm.sim import builtin_scenario, calibrate_censoring, generate
from rmst_bgmm.survival import pseudo_obs


def std_normal(B):
    return -0.5 * np.sum(B * B, axis=1)


def fake_draws(arr, names=("delta",)):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    rhat, ess = diagnose(arr) if arr.shape[1] >= 4 else (np.ones(arr.shape[2]), np.full(arr.shape[2], 1.0))
    return PosteriorDraws(arr, tuple(names), np.full(arr.shape[0], 0.3), rhat, ess)


# ------------------------------------------------------------------ config

@pytest.mark.parametrize("kw", [dict(chains=1), dict(warmup=0), dict(samples=0), dict(target_accept=1.0),
                                dict(init_scale=0.0), dict(seed=-1), dict(thin=0)])
def test_config_validation(kw):
    with pytest.raises(InputError):
        SamplerConfig(**kw)


# ------------------------------------------------------------------ Gaussian hook

def test_gaussian_hook_moments():
    d = run_metropolis(std_normal, np.zeros(1), np.eye(1), SamplerConfig(seed=1))
    x = d.pooled("beta0")
    mcse = x.std() / math.sqrt(d.ess[0])
    assert abs(x.mean()) < 3 * mcse
    assert x.std(ddof=1) == pytest.approx(1.0, rel=0.05)
    assert d.rhat[0] < 1.01
    assert np.all((d.acceptance_rate > 0.15) & (d.acceptance_rate < 0.5))


def test_gaussian_hook_covariance():
    cov = np.array([[1.0, 0.8], [0.8, 2.0]])
    prec = np.linalg.inv(cov)
    d = run_metropolis(lambda B: -0.5 * np.einsum("ki,ij,kj->k", B, prec, B), np.zeros(2), np.eye(2),
                       SamplerConfig(seed=2))
    emp = np.cov(d.pooled().T)
    assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) < 0.10


@pytest.mark.filterwarnings("ignore::rmst_bgmm.errors.DivergentChains")
def test_determinism():
    cfg = SamplerConfig(seed=123, warmup=200, samples=100)
    a = run_metropolis(std_normal, np.zeros(2), np.eye(2), cfg)
    b = run_metropolis(std_normal, np.zeros(2), np.eye(2), cfg)
    assert np.array_equal(a.draws, b.draws)
    c = run_metropolis(std_normal, np.zeros(2), np.eye(2), SamplerConfig(seed=124, warmup=200, samples=100))
    assert not np.array_equal(a.draws, c.draws)


def test_short_run_flags_divergence():
    # ten draws per chain after 50 warmup iterations cannot reach R-hat <= 1.01
    with pytest.warns(DivergentChains):
        d = run_metropolis(std_normal, np.zeros(2), np.eye(2), SamplerConfig(warmup=50, samples=10))
    assert d.divergent


def test_non_finite_start():
    with pytest.raises(NonFiniteTarget):
        run_metropolis(lambda B: np.full(B.shape[0], -np.inf), np.zeros(1), np.eye(1),
                       SamplerConfig(warmup=10, samples=10))


@pytest.mark.filterwarnings("ignore::rmst_bgmm.errors.DivergentChains")
def test_draws_csv(tmp_path):
    d = run_metropolis(std_normal, np.zeros(2), np.eye(2), SamplerConfig(warmup=50, samples=10),
                       ("intercept", "arm"))
    d.to_csv(tmp_path / "d.csv")
    rows = list(csv.reader((tmp_path / "d.csv").open()))
    assert rows[0] == ["chain", "iter", "intercept", "arm"]
    assert len(rows) == 1 + 3 * 10
    assert float(rows[1][2]) == d.draws[0, 0, 0]


# ------------------------------------------------------------------ diagnostics

def test_rhat_basic_formula():
    x = np.array([[1.0, 2.0, 3.0, 4.0], [2.0, 3.0, 4.0, 6.0]])
    n = 4
    w = np.mean([np.var(r, ddof=1) for r in x])
    b = n * np.var(x.mean(axis=1), ddof=1)
    assert _rhat_basic(x) == pytest.approx(math.sqrt(((n - 1) / n * w + b / n) / w), rel=1e-14)


def test_rhat_same_distribution():
    rng = np.random.default_rng(0)
    vals = [split_rhat(rng.normal(size=(3, 1000))) for _ in range(50)]
    assert all(0.99 <= v <= 1.01 for v in vals)


def test_rhat_shifted_chain():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 1000))
    x[2] += 10
    assert split_rhat(x) > 1.2


def test_ess_iid_and_ar1():
    rng = np.random.default_rng(2)
    iid = rng.normal(size=(4, 2000))
    assert ess_bulk(iid) == pytest.approx(8000, rel=0.15)
    assert ess_bulk(iid) <= 8000
    phi = 0.8
    x = np.zeros((4, 5000))
    e = rng.normal(size=x.shape)
    for t in range(1, 5000):
        x[:, t] = phi * x[:, t - 1] + e[:, t]
    expected = 20000 * (1 - phi) / (1 + phi)
    assert ess_bulk(x) == pytest.approx(expected, rel=0.2)


def test_diagnose_too_few_draws():
    with pytest.raises(TooFewDraws):
        diagnose(np.zeros((3, 3, 1)))


# ------------------------------------------------------------------ summaries

def test_tail_probability_counting():
    d = fake_draws([[0.1, 0.2], [0.3, 0.4]])
    s = summarize(d, [("delta", ">=", 0.25)])
    assert s.tail_probabilities[0].probability == 0.5


def test_tail_probability_degenerate():
    rng = np.random.default_rng(0)
    d = fake_draws(rng.uniform(1, 2, size=(3, 100)))
    tp = summarize(d, [("delta", ">", 0.0)]).tail_probabilities[0]
    assert (tp.probability, tp.mc_se) == (1.0, 0.0)


def test_tail_mcse_formula():
    assert tail_mcse(0.973, 2918) == pytest.approx(math.sqrt(0.973 * 0.027 / 2918), rel=1e-14)
    assert tail_mcse(0.0, 100) == 0.0


def test_summary_quantiles_and_unknown_parameter():
    rng = np.random.default_rng(1)
    d = fake_draws(rng.normal(size=(3, 400)))
    s = summarize(d)
    assert s.q025[0] < s.q50[0] < s.q975[0]
    assert s.q50[0] == pytest.approx(np.quantile(d.pooled(), 0.5))
    with pytest.raises(UnknownParameter):
        summarize(d, [("gamma", ">=", 0.0)])
    with pytest.raises(KeyError):
        d.index("gamma")
    assert json.loads(s.to_json())["parameters"][0]["name"] == "delta"


# ------------------------------------------------------------------ GMM pseudo-posterior

@pytest.fixture(scope="module")
def scenario1_fit():
    spec = builtin_scenario("1alt")
    d = generate(spec, 200, 11, censor_upper=calibrate_censoring(spec))
    X = build_design(d)
    y = pseudo_obs(d, 5.0)
    return X, y, sample(GmmState.default(X), X, y, SamplerConfig(seed=5))


def test_gmm_agrees_with_gee(scenario1_fit):
    X, y, draws = scenario1_fit
    g = gee_fit(X, y)
    delta = draws.pooled("arm")
    assert abs(delta.mean() - g.beta_hat[1]) < 3 * delta.std()
    # the pseudo-posterior sd tracks the sandwich SE
    assert delta.std() == pytest.approx(g.se[1], rel=0.15)


def test_gmm_acceptance_and_convergence(scenario1_fit):
    _, _, draws = scenario1_fit
    assert np.all((draws.acceptance_rate >= 0.15) & (draws.acceptance_rate <= 0.50))
    assert not draws.divergent
    assert np.all(draws.ess <= draws.draws.shape[0] * draws.draws.shape[1])
    assert draws.ridge_activations == 0
