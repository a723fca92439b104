import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pausesim import bandit, sa
from pausesim.reward import RewardConfig, energy


def all_vertices(K, m):
    return list(combinations(range(K), m))


def test_compute_c_examples():
    assert sa.compute_c([0.7] * 5, RewardConfig(), 2, omega=1e-3) == pytest.approx(1e-3)
    assert sa.compute_c([1.0, 0.8, 0.5], RewardConfig(1, 1), 2, omega=0.0) == pytest.approx(3.3)
    assert sa.compute_c_vanilla(RewardConfig()) == 1
    assert sa.compute_c_vanilla(RewardConfig(1, 0.5)) == 3.5
    with pytest.raises(ValueError):
        sa.compute_c([1.0, math.inf], RewardConfig(), 1)


def test_params_validation():
    with pytest.raises(ValueError):
        sa.SaParams(0.0)
    with pytest.raises(ValueError):
        sa.SaParams(1.0, kappa=0.5)
    assert sa.SaParams(2.0, kappa=2).temperature(1) == pytest.approx(1 / math.log(2))


def test_active_neighbor_example():
    # ids 0..3 with ucb increasing in id; v = {0, 1} drops user 0.
    assert sorted(sa.active_neighbors((0, 1), [0.1, 0.2, 0.3, 0.4])) == [(1, 2), (1, 3)]


@pytest.mark.parametrize("K, m", [(4, 2), (6, 3), (8, 3), (7, 1)])
def test_passive_is_inverse_of_active(K, m):
    rng = np.random.default_rng(K * 10 + m)
    ucb = rng.random(K)
    active = {v: set(sa.active_neighbors(v, ucb)) for v in all_vertices(K, m)}
    for v in active:
        inverse = {u for u, targets in active.items() if v in targets}
        assert set(sa.passive_neighbors(v, ucb)) == inverse


@pytest.mark.parametrize("K, m", [(5, 2), (8, 3), (8, 4)])
def test_neighbor_relation_symmetric_and_inside_dense(K, m):
    ucb = np.random.default_rng(K + m).random(K)
    for v in all_vertices(K, m):
        nbrs = sa.neighbors(v, ucb)
        assert set(nbrs) <= set(sa.dense_neighbors(v, K))
        for u in nbrs:
            assert v in sa.neighbors(u, ucb)


def test_tailored_swaps_match_neighbor_sets():
    K, m = 8, 3
    ucb = np.random.default_rng(3).random(K)
    ranking = sa.UcbOrder(ucb)
    order, rank = ranking.order.tolist(), ranking.rank.tolist()
    for v in all_vertices(K, m):
        swaps = sa._tailored_swaps(v, set(v), order, rank)
        reached = [sa._swap(v, out, new) for out, new in swaps]
        assert len(reached) == len(set(reached))
        assert set(reached) == set(sa.neighbors(v, ucb))


def test_dense_neighborhood_size():
    for v in all_vertices(7, 3):
        assert len(sa.dense_neighbors(v, 7)) == 3 * 4


def test_k_equals_m():
    assert sa.neighbors((0, 1, 2), [1, 2, 3]) == []
    params = sa.SaParams(1.0, max_iters=50, seed=0)
    cfg = RewardConfig()
    assert sa.sa_search([1, 2, 3], [0] * 3, [0] * 3, cfg, params, (0, 1, 2)) == (0, 1, 2)
    assert sa.vanilla_sa_search([1, 2, 3], [0] * 3, [0] * 3, cfg, params, (0, 1, 2)) == (0, 1, 2)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(1e-3, 10))
def test_acceptance_probability_in_unit_interval(e_new, e_old, temp):
    p = sa.acceptance_probability(e_new, e_old, temp)
    assert 0 <= p <= 1
    if e_new >= e_old:
        assert p == 1


def instance(seed, K=12, m=4):
    rng = np.random.default_rng(seed)
    cfg = RewardConfig(alpha=float(rng.random()), gamma=float(rng.random()))
    return rng.uniform(0.2, 2, K), rng.uniform(-1, 1, K), rng.random(K), cfg


def test_search_is_reproducible_and_best_so_far():
    ucb, g, p, cfg = instance(11)
    c = sa.compute_c(ucb, cfg, 4)
    start = (0, 1, 2, 3)
    a = sa.sa_search(ucb, g, p, cfg, sa.SaParams(c, max_iters=500, seed=5), start)
    b = sa.sa_search(ucb, g, p, cfg, sa.SaParams(c, max_iters=500, seed=5), start)
    assert a == b
    long = sa.sa_search(ucb, g, p, cfg, sa.SaParams(c, max_iters=2000, seed=5), start)
    assert energy(long, ucb, g, p, cfg) >= energy(a, ucb, g, p, cfg)


def test_path_stays_on_graph():
    ucb, g, p, cfg = instance(4, K=8, m=3)
    params = sa.SaParams(sa.compute_c(ucb, cfg, 3), max_iters=300, seed=1)
    path = [v for v, _ in sa.anneal_path(ucb, g, p, cfg, params, (0, 1, 2))]
    for prev, cur in zip(path, path[1:]):
        assert cur == prev or cur in sa.neighbors(prev, ucb)


def test_high_temperature_chain_visits_every_vertex():
    K, m = 10, 3
    ucb, g, p, cfg = instance(8, K, m)
    seen = set()
    rng = np.random.default_rng(0)
    for _ in range(100):
        start = sa.random_vertex(K, m, rng)
        params = sa.SaParams(1e6, max_iters=200)
        seen.update(v for v, _ in sa.anneal_path(ucb, g, p, cfg, params, start, rng=rng))
    assert seen == set(all_vertices(K, m))


def test_search_finds_optimum_on_small_instances():
    hits = 0
    for seed in range(30):
        ucb, g, p, cfg = instance(seed)
        best = energy(bandit.argmax_over_subsets(ucb, g, p, cfg, 4), ucb, g, p, cfg)
        params = sa.SaParams(sa.compute_c(ucb, cfg, 4), max_iters=2000, seed=seed)
        found = sa.sa_search(ucb, g, p, cfg, params, (0, 1, 2, 3))
        hits += energy(found, ucb, g, p, cfg) == pytest.approx(best, abs=1e-12)
    assert hits >= 28
