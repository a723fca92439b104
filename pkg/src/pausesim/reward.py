"""Reward terms for a candidate user set.

A selection ``S`` of ``m`` users is scored as

    latency_term(S) + alpha * phi_g(S) + gamma * phi_p(S)

where the latency term is the minimum over ``S`` of a per-user quantity
(realized latency ratio, true mean ratio, or UCB index depending on the
caller) and ``phi_g`` / ``phi_p`` aggregate the generalization and privacy
rewards of the members.  Two ``phi_g`` variants exist: the plain average and
the cluster-penalized average.  ``phi_p`` is always the average.

User ids are 0-based integers; per-user values may be any sequence indexed by
id (lists, numpy arrays, dicts).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from pausesim.privacy import PrivacySchedule

Vertex = tuple[int, ...]


@dataclass(frozen=True)
class Averaged:
    """``phi_g`` is the mean of the members' generalization rewards."""


@dataclass(frozen=True)
class Clustered:
    """Mean generalization reward minus ``rho`` per surplus user in a shared cluster."""

    rho: float
    clusters: tuple[int, ...] = field(repr=False)

    def __post_init__(self) -> None:
        if self.rho < 0:
            raise ValueError(f"rho must be nonnegative, got {self.rho}")


PhiVariant = Union[Averaged, Clustered]


@dataclass(frozen=True)
class PhiRanges:
    delta_phi_g: float
    delta_phi_p: float


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 0.0
    gamma: float = 0.0
    beta: float = 2.0
    phi: PhiVariant = Averaged()

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.gamma < 0:
            raise ValueError("alpha and gamma must be nonnegative")
        if not self.beta > 1:
            raise ValueError(f"beta must exceed 1, got {self.beta}")

    def phi_ranges(self, m: int) -> PhiRanges:
        # Worst case for the cluster penalty: all m members share one cluster.
        if isinstance(self.phi, Clustered):
            return PhiRanges(2.0 + self.phi.rho * (m - 1), 1.0)
        return PhiRanges(2.0, 1.0)


_TINY = np.finfo(float).tiny


def privacy_reward(T_k: int, schedule: PrivacySchedule) -> float:
    """``1 - (spent budget) / eps_bar``; 1 for a user never selected."""
    return float(privacy_rewards(np.array([T_k]), schedule)[0])


def privacy_rewards(T: np.ndarray, schedule: PrivacySchedule) -> np.ndarray:
    # 1 - (1 - e^{-eta T}) collapses to e^{-eta T}; the floor keeps p > 0 once
    # the exponential underflows.
    return np.maximum(np.exp(-schedule.eta * np.asarray(T, dtype=float)), _TINY)


def generalization_reward(T_k: int, t: int, m: int, data_share: float, beta: float) -> float:
    """Signed ``|u|^beta`` with ``u = m * data_share - T_k / t``.

    Positive for users picked less often than their data share warrants.
    """
    if t < 1:
        raise ValueError(f"round index must be >= 1, got {t}")
    u = m * data_share - T_k / t
    return math.copysign(abs(u) ** beta, u) if u != 0 else 0.0


def generalization_rewards(
    T: np.ndarray, t: int, m: int, data_share: np.ndarray, beta: float
) -> np.ndarray:
    if t < 1:
        raise ValueError(f"round index must be >= 1, got {t}")
    u = m * np.asarray(data_share, dtype=float) - np.asarray(T, dtype=float) / t
    return np.sign(u) * np.abs(u) ** beta


def phi_avg(values: Sequence[float]) -> float:
    values = list(values)
    if not values:
        raise ValueError("cannot average an empty selection")
    return sum(values) / len(values)


def cluster_surplus(members: Sequence[int], clusters: Union[Sequence[int], Mapping[int, int]]) -> int:
    """``sum_r max(0, |S & C_r| - 1)``, which equals ``|S|`` minus distinct clusters."""
    try:
        ids = [clusters[k] for k in members]
    except (KeyError, IndexError) as exc:
        raise ValueError(f"missing cluster id for user {exc.args[0]}") from None
    return len(ids) - len(set(ids))


def phi_g_clustered(
    g_values: Union[Sequence[float], Mapping[int, float]],
    members: Vertex,
    rho: float,
    clusters: Union[Sequence[int], Mapping[int, int]],
) -> float:
    return phi_avg([g_values[k] for k in members]) - rho * cluster_surplus(members, clusters)


def phi_g(g_values, members: Vertex, cfg: RewardConfig) -> float:
    """Generalization aggregate; the one place new ``phi_g`` variants plug in."""
    if isinstance(cfg.phi, Clustered):
        return phi_g_clustered(g_values, members, cfg.phi.rho, cfg.phi.clusters)
    return phi_avg([g_values[k] for k in members])


def phi_p(p_values, members: Vertex, cfg: RewardConfig) -> float:
    return phi_avg([p_values[k] for k in members])


def _bonus(members: Vertex, g_values, p_values, cfg: RewardConfig) -> float:
    total = 0.0
    if cfg.alpha:
        total += cfg.alpha * phi_g(g_values, members, cfg)
    if cfg.gamma:
        total += cfg.gamma * phi_p(p_values, members, cfg)
    return total


def realized_reward(
    members: Vertex,
    latencies,
    tau_min: float,
    g_values,
    p_values,
    cfg: RewardConfig,
) -> float:
    """Round reward from realized latencies ``latencies[k]`` (all ``>= tau_min``)."""
    if not members:
        raise ValueError("cannot score an empty selection")
    slowest = max(latencies[k] for k in members)
    if min(latencies[k] for k in members) < tau_min:
        raise ValueError("latency below tau_min violates the latency floor")
    return float(tau_min / slowest + _bonus(members, g_values, p_values, cfg))


def genie_score(members: Vertex, mu, g_values, p_values, cfg: RewardConfig) -> float:
    """Expected-ratio score maximized by the Genie, ``min_k mu_k + bonuses``."""
    return min(mu[k] for k in members) + _bonus(members, g_values, p_values, cfg)


def energy(members: Vertex, ucb_values, g_values, p_values, cfg: RewardConfig) -> float:
    """Objective maximized by the selection policy, with UCB indices as the latency term."""
    return min(ucb_values[k] for k in members) + _bonus(members, g_values, p_values, cfg)


def energies(
    combos: np.ndarray,
    scores: np.ndarray,
    g_values: np.ndarray,
    p_values: np.ndarray,
    cfg: RewardConfig,
) -> np.ndarray:
    """Vectorized ``energy`` over the rows of an ``(n, m)`` array of member ids."""
    m = combos.shape[1]
    out = np.asarray(scores, dtype=float)[combos].min(axis=1)
    if cfg.alpha:
        gsum = np.asarray(g_values, dtype=float)[combos].sum(axis=1) / m
        if isinstance(cfg.phi, Clustered):
            cl = np.sort(np.asarray(cfg.phi.clusters)[combos], axis=1)
            distinct = 1 + (cl[:, 1:] != cl[:, :-1]).sum(axis=1)
            gsum = gsum - cfg.phi.rho * (m - distinct)
        out = out + cfg.alpha * gsum
    if cfg.gamma:
        out = out + cfg.gamma * (np.asarray(p_values, dtype=float)[combos].sum(axis=1) / m)
    return out
