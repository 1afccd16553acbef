import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rmst_bgmm.data import Dataset
from rmst_bgmm.errors import EmptyDataset, InsufficientEvents, SingleArm, TauBeyondSupport
from rmst_bgmm.survival import (km_fit, pseudo_obs, resolve_tau, rmst_from_curve,
                                tau_candidates)


def ds(times, events, arms=None, **kw):
    arms = [i % 2 for i in range(len(times))] if arms is None else arms
    return Dataset(times, events, arms, **kw)


def brute_km(times, events):
    """Product-limit estimate evaluated right after each distinct event time."""
    times = np.asarray(times, float)
    events = np.asarray(events, bool)
    s = 1.0
    out = {}
    for t in np.unique(times[events]):
        n = np.sum(times >= t)
        d = np.sum((times == t) & events)
        s *= 1 - d / n
        out[float(t)] = s
    return out


# ------------------------------------------------------------------ km_fit

def test_km_all_events():
    c = km_fit(ds([1, 2, 3], [1, 1, 1]))
    np.testing.assert_allclose(c.jump_times, [1, 2, 3])
    np.testing.assert_allclose(c.survival, [2 / 3, 1 / 3, 0])


def test_km_with_censoring():
    c = km_fit(ds([1, 2, 3], [0, 1, 1]))
    assert c(2) == pytest.approx(0.5)
    assert c(3) == pytest.approx(0.0)
    assert c(0.5) == 1.0


def test_km_single_event():
    c = km_fit(Dataset([4.0], [1], [0]))
    np.testing.assert_allclose(c.jump_times, [4])
    np.testing.assert_allclose(c.survival, [0])


def test_km_empty():
    with pytest.raises(EmptyDataset):
        km_fit(Dataset([], [], []))


def test_km_ties_event_before_censoring():
    # the censored subject at t=2 is still at risk for the event at t=2
    c = km_fit(ds([1, 2, 2, 3], [1, 1, 0, 1]))
    assert c(2) == pytest.approx(0.75 * (1 - 1 / 3))


def test_km_greenwood_matches_formula():
    t = [1, 2, 2, 3, 4, 5, 6]
    e = [1, 0, 1, 1, 0, 1, 0]
    c = km_fit(ds(t, e))
    # Greenwood at t=3: S^2 * sum d/(n(n-d)) over event times <= 3
    var_sum = 1 / (7 * 6) + 1 / (6 * 5) + 1 / (4 * 3)
    j = list(c.jump_times).index(3)
    assert c.se[j] == pytest.approx(c.survival[j] * math.sqrt(var_sum))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 15), st.booleans()), min_size=2, max_size=40))
def test_km_matches_brute_force(rows):
    t = [r[0] for r in rows]
    e = [int(r[1]) for r in rows]
    c = km_fit(ds(t, e))
    ref = brute_km(t, e)
    for time, s in ref.items():
        assert c(time) == pytest.approx(s, abs=1e-12)
    assert np.all(np.diff(c.survival) <= 1e-15)
    assert np.all((c.survival >= 0) & (c.survival <= 1))
    assert np.all(np.diff(c.at_risk) < 0)


# ------------------------------------------------------------------ rmst

def test_rmst_hand_value():
    c = km_fit(ds([1, 2, 3], [1, 1, 1]))
    assert rmst_from_curve(c, 2.5) == pytest.approx(11 / 6, abs=1e-14)


def test_rmst_before_first_jump_is_tau():
    c = km_fit(ds([1, 2, 3], [1, 1, 1]))
    assert rmst_from_curve(c, 0.7) == 0.7


def test_rmst_single_subject():
    c = km_fit(Dataset([1.0], [1], [0]))
    with pytest.warns(TauBeyondSupport):
        assert rmst_from_curve(c, 5) == pytest.approx(1.0)


def test_rmst_flat_tail_after_censoring():
    c = km_fit(ds([1, 2], [1, 0]))
    with pytest.warns(TauBeyondSupport):
        assert rmst_from_curve(c, 4) == pytest.approx(1 + 0.5 * 3)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 10), st.booleans()), min_size=2, max_size=30),
       st.lists(st.floats(0.01, 12), min_size=2, max_size=6))
def test_rmst_monotone_and_bounded(rows, taus):
    c = km_fit(ds([r[0] for r in rows], [int(r[1]) for r in rows]))
    taus = sorted(taus)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TauBeyondSupport)
        vals = [rmst_from_curve(c, tau) for tau in taus]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    assert all(v <= tau + 1e-12 for v, tau in zip(vals, taus))


# ------------------------------------------------------------------ pseudo-observations

def test_pseudo_uncensored_small():
    pv = pseudo_obs(ds([1, 2, 3], [1, 1, 1]), 2.5)
    np.testing.assert_allclose(pv.values, [1, 2, 2.5], atol=1e-12)


def test_pseudo_censored_fast_matches_naive():
    d = ds([1, 2, 3], [0, 1, 1])
    fast = pseudo_obs(d, 3.0, "fast").values
    naive = pseudo_obs(d, 3.0, "naive").values
    # hand values: full area 2.5; leave out 1+ -> 2.5, leave out 2 -> 3, leave out 3 -> 2
    np.testing.assert_allclose(naive, [2.5, 1.5, 3.5], atol=1e-12)
    np.testing.assert_allclose(fast, naive, atol=1e-10)


def test_pseudo_errors():
    with pytest.raises(EmptyDataset):
        pseudo_obs(Dataset([], [], []), 1.0)
    with pytest.raises(InsufficientEvents):
        pseudo_obs(ds([1, 2, 3], [0, 0, 0]), 1.0)


def test_pseudo_by_arm_needs_two_arms():
    with pytest.raises(SingleArm):
        pseudo_obs(Dataset([1, 2, 3], [1, 1, 1], [0, 0, 0]), 2.0, by_arm=True)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 60), st.integers(0, 2**32 - 1), st.floats(0.1, 1.0))
def test_pseudo_fast_naive_and_mean_identity(n, seed, frac):
    rng = np.random.default_rng(seed)
    t = np.round(rng.exponential(2.0, n), 1) + 0.1   # rounding creates ties
    e = rng.random(n) < 0.7
    e[0] = True
    d = ds(t, e)
    tau = float(frac * t.max())
    fast = pseudo_obs(d, tau, "fast").values
    naive = pseudo_obs(d, tau, "naive").values
    np.testing.assert_allclose(fast, naive, atol=1e-10, rtol=0)
    assert abs(fast.mean() - rmst_from_curve(km_fit(d), tau)) < 1e-10


def test_pseudo_fast_naive_beyond_support():
    # tau past the last time: the two algorithms still agree
    d = ds([1, 2, 3, 4], [1, 0, 1, 1])
    np.testing.assert_allclose(pseudo_obs(d, 9.0, "fast").values,
                               pseudo_obs(d, 9.0, "naive").values, atol=1e-12)


# ------------------------------------------------------------------ tau rules

@pytest.mark.parametrize("maxima, requested, expected", [
    ((6.2, 7.9), 5, 5), ((4.2, 6.0), 5, 4.2), ((4.9, 4.8), 5, 4.8)])
def test_resolve_tau(maxima, requested, expected):
    d = Dataset([1.0, 1.5, maxima[0], maxima[1]], [1, 1, 0, 1], [0, 1, 0, 1])
    assert resolve_tau(d, requested) == expected


def test_resolve_tau_single_arm():
    with pytest.raises(SingleArm):
        resolve_tau(Dataset([1, 2], [1, 1], [1, 1]), 5)


def test_tau_candidates_percentile_and_min_of_max():
    d = ds(list(range(1, 11)), [1] * 10)
    cands = dict(tau_candidates(d))
    assert cands["p90"] == pytest.approx(9.1)
    assert cands["min_of_max"] == resolve_tau(d, math.inf)


def test_tau_candidates_se_rule_stops_before_limit():
    rng = np.random.default_rng(3)
    t = rng.exponential(3, 300)
    d = ds(t, np.ones(300, int))
    cands = dict(tau_candidates(d, (0.03,)))
    tau = cands["se<0.03"]
    for a in (0, 1):
        c = km_fit(d.subset(d.arm == a))
        assert np.all(c.se[c.jump_times <= tau] < 0.03)
