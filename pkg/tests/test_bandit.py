import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pausesim import bandit
from pausesim.privacy import PrivacySchedule
from pausesim.reward import Clustered, RewardConfig, energy


def fresh(K=6, m=2):
    return bandit.SelectionState.fresh(K, m, PrivacySchedule(10.0))


def naive_argmax(scores, g, p, cfg, m):
    """Independent oracle: plain loop over combinations, first maximum wins."""
    best, best_e = None, -math.inf
    for combo in combinations(range(len(scores)), m):
        e = min(scores[k] for k in combo)
        if cfg.alpha:
            e += cfg.alpha * (sum(g[k] for k in combo) / m)
        if cfg.gamma:
            e += cfg.gamma * (sum(p[k] for k in combo) / m)
        if e > best_e:
            best, best_e = combo, e
    return best, best_e


def test_update_mu_examples():
    s = fresh()
    s.T[0] = 1
    bandit.update_mu(s, 0, 0.7)
    assert s.mu_hat[0] == 0.7
    s.record((1, 2), [0.5, 0.5])
    s.record((1, 3), [1.0, 0.5])
    assert s.mu_hat[1] == pytest.approx(0.75)
    with pytest.raises(ValueError):
        bandit.update_mu(s, 1, 1.5)


def test_ucb_examples():
    s = fresh(K=30, m=5)
    assert bandit.ucb_value(s, 0) == math.inf
    s.t, s.T[0], s.mu_hat[0] = math.e, 6, 0.5
    assert bandit.ucb_value(s, 0) == pytest.approx(1.5)
    s.t = 10
    s.T[1], s.mu_hat[1] = 1, 0.5
    values = []
    for n in (1, 2, 5, 50):
        s.T[1] = n
        values.append(bandit.ucb_value(s, 1))
    assert values == sorted(values, reverse=True)
    np.testing.assert_allclose(s.ucb[[1]], [values[-1]])


def test_warmup_examples():
    assert bandit.warmup_selection(1, 30, 5) == (0, 1, 2, 3, 4)
    assert bandit.warmup_selection(6, 30, 5) == (25, 26, 27, 28, 29)
    assert bandit.warmup_selection(3, 7, 3) == (0, 1, 6)
    with pytest.raises(ValueError):
        bandit.warmup_selection(7, 30, 5)
    s = fresh(K=30, m=5)
    for t in range(1, 7):
        s.record(bandit.warmup_selection(t, 30, 5), [0.5] * 5)
    assert (s.T == 1).all() and np.isfinite(s.ucb).all()


def test_brute_examples():
    cfg = RewardConfig()
    ucb = [0.3, 0.9, 0.1, 0.8, 0.5, 0.2]
    assert bandit.argmax_over_subsets(ucb, [0] * 6, [0] * 6, cfg, 3) == (1, 3, 4)
    assert bandit.argmax_over_subsets([1.0] * 6, [0.2] * 6, [0.5] * 6, RewardConfig(1, 1), 2) == (0, 1)
    assert bandit.pivot_fill(ucb, [0] * 6, [0] * 6, cfg, 3) == (1, 3, 4)
    assert bandit.pivot_fill(ucb[:3], [0] * 3, [0] * 3, cfg, 3) == (0, 1, 2)


def test_genie_top_m_without_bonus():
    mu = np.array([0.5, 0.7, 0.2, 0.9])
    s = fresh(K=4, m=2)
    assert bandit.select_genie(mu, s, RewardConfig()) == (1, 3)
    assert bandit.select_genie(mu, s, RewardConfig(), method="brute") == (1, 3)
    with pytest.raises(ValueError):
        bandit.genie_argmax(mu, [0] * 4, [0] * 4, RewardConfig(), 2, method="magic")


def test_pivot_rejects_clustered():
    cfg = RewardConfig(alpha=1, phi=Clustered(0.1, (0, 1, 2)))
    with pytest.raises(ValueError):
        bandit.pivot_fill([1, 2, 3], [0] * 3, [0] * 3, cfg, 2)


@given(st.integers(0, 2**32 - 1), st.integers(4, 10), st.data())
@settings(max_examples=200, deadline=None)
def test_brute_and_pivot_match_enumeration(seed, K, data):
    m = data.draw(st.integers(1, K))
    rng = np.random.default_rng(seed)
    cfg = RewardConfig(alpha=float(rng.random()), gamma=float(rng.random()))
    scores, g, p = rng.uniform(0.2, 2, K), rng.uniform(-1, 1, K), rng.random(K)
    want, want_e = naive_argmax(scores, g, p, cfg, m)
    assert bandit.argmax_over_subsets(scores, g, p, cfg, m) == want
    got = bandit.pivot_fill(scores, g, p, cfg, m)
    assert energy(got, scores, g, p, cfg) == pytest.approx(want_e, abs=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_argmax_invariant_to_positive_scaling(seed, c):
    rng = np.random.default_rng(seed)
    ucb = rng.random(8)
    zero = np.zeros(8)
    cfg = RewardConfig()
    top = tuple(sorted(np.argsort(-ucb)[:3].tolist()))
    assert bandit.argmax_over_subsets(ucb, zero, zero, cfg, 3) == top
    assert bandit.argmax_over_subsets(c * ucb, zero, zero, cfg, 3) == top


@pytest.mark.slow
def test_pivot_fill_scales_near_k_log_k():
    import time

    def median_time(K):
        rng = np.random.default_rng(K)
        args = (rng.random(K), rng.uniform(-1, 1, K), rng.random(K), RewardConfig(0.5, 0.5), 15)
        times = []
        for _ in range(15):
            start = time.perf_counter()
            bandit.pivot_fill(*args)
            times.append(time.perf_counter() - start)
        return float(np.median(times))

    ratio = median_time(2000) / median_time(1000)
    assert ratio <= 2.4, ratio
