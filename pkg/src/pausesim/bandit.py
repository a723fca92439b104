"""UCB bookkeeping and the exact selection rules.

``SelectionState`` carries everything the selection rule needs between
rounds.  ``select_brute`` enumerates all ``C(K, m)`` sets; ``select_pivot_fill``
reaches the same optimum in ``O(K log K)`` when both bonus aggregates are
plain averages.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from pausesim.privacy import LeakageLedger, PrivacySchedule
from pausesim.reward import (
    Averaged,
    RewardConfig,
    Vertex,
    energies,
    energy,
    generalization_rewards,
    privacy_rewards,
)

MAX_BRUTE_SUBSETS = 1_000_000


@dataclass
class SelectionState:
    """Bandit knowledge at the end of round ``t`` (``t = 0`` before any round)."""

    m: int
    t: int
    T: np.ndarray
    mu_hat: np.ndarray
    ledger: LeakageLedger
    data_share: np.ndarray
    zeta: float = 1.0

    @classmethod
    def fresh(
        cls,
        num_users: int,
        m: int,
        schedule: PrivacySchedule,
        data_share: np.ndarray | None = None,
        zeta: float = 1.0,
    ) -> "SelectionState":
        if not 1 <= m <= num_users:
            raise ValueError(f"need 1 <= m <= K, got m={m}, K={num_users}")
        if data_share is None:
            data_share = np.full(num_users, 1.0 / num_users)
        return cls(
            m=m,
            t=0,
            T=np.zeros(num_users, dtype=np.int64),
            mu_hat=np.zeros(num_users),
            ledger=LeakageLedger.fresh(schedule, num_users),
            data_share=np.asarray(data_share, dtype=float),
            zeta=zeta,
        )

    @property
    def num_users(self) -> int:
        return len(self.T)

    @property
    def ucb(self) -> np.ndarray:
        """UCB index of every user; ``+inf`` for users never observed."""
        out = np.full(self.num_users, np.inf)
        seen = self.T > 0
        if self.t >= 1 and seen.any():
            bonus = np.sqrt((self.m + 1) * math.log(self.t) / self.T[seen])
            out[seen] = self.zeta * self.mu_hat[seen] + bonus
        return out

    def g_values(self, beta: float) -> np.ndarray:
        """Generalization rewards entering the next round's selection."""
        if self.t < 1:
            return np.zeros(self.num_users)
        return generalization_rewards(self.T, self.t, self.m, self.data_share, beta)

    def p_values(self) -> np.ndarray:
        return privacy_rewards(self.T, self.ledger.schedule)

    def record(self, selected: Vertex, ratios) -> None:
        """Close round ``t + 1``: bump counts and fold in the observed ratios."""
        self.t += 1
        for k, ratio in zip(selected, ratios):
            self.T[k] += 1
            update_mu(self, k, ratio)


def update_mu(state: SelectionState, k: int, ratio: float) -> None:
    """Fold one observed ratio ``tau_min / tau`` into user ``k``'s running mean.

    ``state.T[k]`` must already include this observation.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"latency ratio must lie in (0, 1], got {ratio}")
    n = state.T[k]
    if n < 1:
        raise ValueError(f"user {k} has no recorded participation")
    state.mu_hat[k] = (n - 1) / n * state.mu_hat[k] + ratio / n


def ucb_value(state: SelectionState, k: int, zeta: float | None = None) -> float:
    zeta = state.zeta if zeta is None else zeta
    if state.T[k] == 0:
        return math.inf
    return zeta * state.mu_hat[k] + math.sqrt((state.m + 1) * math.log(state.t) / state.T[k])


def warmup_rounds(num_users: int, m: int) -> int:
    return -(-num_users // m)


def warmup_selection(t: int, num_users: int, m: int) -> Vertex:
    """Round-robin block for warm-up round ``t``, wrapping to the start of the id range."""
    if not 1 <= t <= warmup_rounds(num_users, m):
        raise ValueError(f"round {t} is outside the warm-up range")
    start = (t - 1) * m
    return tuple(sorted({(start + i) % num_users for i in range(m)}))


@lru_cache(maxsize=32)
def subset_table(num_users: int, m: int) -> np.ndarray:
    """All ``m``-subsets of ``range(num_users)`` in lexicographic order, one per row."""
    count = math.comb(num_users, m)
    if count > MAX_BRUTE_SUBSETS:
        raise ValueError(f"C({num_users},{m}) = {count} subsets exceeds the brute-force limit")
    dtype = np.int16 if num_users < 2**15 else np.int64
    table = np.fromiter(
        (k for combo in combinations(range(num_users), m) for k in combo),
        dtype=dtype,
        count=count * m,
    ).reshape(count, m)
    table.setflags(write=False)
    return table


def argmax_over_subsets(scores, g_values, p_values, cfg: RewardConfig, m: int) -> Vertex:
    """Exhaustive argmax of ``energy``; ties go to the lexicographically first set."""
    num_users = len(scores)
    if num_users < m:
        raise ValueError(f"cannot pick {m} of {num_users} users")
    table = subset_table(num_users, m)
    values = energies(table, np.asarray(scores, dtype=float), g_values, p_values, cfg)
    # np.argmax returns the first maximum, i.e. the lexicographically smallest set.
    return tuple(int(k) for k in table[int(np.argmax(values))])


def select_brute(state: SelectionState, cfg: RewardConfig) -> Vertex:
    return argmax_over_subsets(state.ucb, state.g_values(cfg.beta), state.p_values(), cfg, state.m)


def select_genie(mu: np.ndarray, state: SelectionState, cfg: RewardConfig, method: str = "auto") -> Vertex:
    return genie_argmax(mu, state.g_values(cfg.beta), state.p_values(), cfg, state.m, method)


def genie_argmax(
    mu: np.ndarray, g_values, p_values, cfg: RewardConfig, m: int, method: str = "auto"
) -> Vertex:
    """Set maximizing the expected-ratio score given the true means ``mu``.

    ``method="auto"`` uses Pivot-and-Fill for averaged bonuses (same optimal
    value, possibly a different set among exact ties) and enumeration otherwise.
    """
    if method == "auto":
        method = "pivot" if isinstance(cfg.phi, Averaged) else "brute"
    if method == "pivot":
        return pivot_fill(mu, g_values, p_values, cfg, m)
    if method == "brute":
        return argmax_over_subsets(mu, g_values, p_values, cfg, m)
    raise ValueError(f"unknown genie method {method!r}")


def pivot_fill(scores, g_values, p_values, cfg: RewardConfig, m: int) -> Vertex:
    """Exact maximizer of ``min(scores) + alpha*mean(g) + gamma*mean(p)`` over ``m``-sets.

    Each user in turn is the pivot that attains the minimum score; the other
    ``m - 1`` members are the best bonus contributors among users whose score
    is at least the pivot's, kept in a min-heap as the pivot moves down the
    descending score order.
    """
    if not isinstance(cfg.phi, Averaged):
        raise ValueError("Pivot-and-Fill requires averaged bonus terms")
    num_users = len(scores)
    if num_users < m:
        raise ValueError(f"cannot pick {m} of {num_users} users")
    alpha, gamma = cfg.alpha, cfg.gamma
    scores = [float(s) for s in scores]
    g = [float(x) for x in g_values]
    p = [float(x) for x in p_values]
    order = sorted(range(num_users), key=lambda k: (-scores[k], k))

    heap = [(alpha * g[k] + gamma * p[k], k) for k in order[: m - 1]]
    heapq.heapify(heap)
    g_sum = sum(g[k] for _, k in heap)
    p_sum = sum(p[k] for _, k in heap)

    best_value = -math.inf
    best_set: list[int] = []
    for k in order[m - 1 :]:
        value = scores[k] + alpha / m * (g_sum + g[k]) + gamma / m * (p_sum + p[k])
        if value > best_value:
            best_value = value
            best_set = [j for _, j in heap] + [k]
        key = alpha * g[k] + gamma * p[k]
        if heap and key > heap[0][0]:
            _, out = heapq.heapreplace(heap, (key, k))
            g_sum += g[k] - g[out]
            p_sum += p[k] - p[out]
    return tuple(sorted(best_set))


def select_pivot_fill(state: SelectionState, cfg: RewardConfig) -> Vertex:
    return pivot_fill(state.ucb, state.g_values(cfg.beta), state.p_values(), cfg, state.m)


def selection_energy(members: Vertex, state: SelectionState, cfg: RewardConfig) -> float:
    return energy(members, state.ucb, state.g_values(cfg.beta), state.p_values(), cfg)
