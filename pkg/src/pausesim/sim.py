"""Round loop for every selection policy, plus population and latency synthesis.

One ``Simulation`` is one (policy, seed) cell.  All randomness comes from
named child streams of the cell seed, and the streams that model the world
(population, data, latency draws, training minibatches, privacy noise) do not
depend on the policy, so two policies with the same seed see the same users
and the same per-round latency draws.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy import integrate, stats

from pausesim import bandit, sa
from pausesim.config import ExperimentConfig
from pausesim.privacy import PrivacySchedule, clip_l1, privatize_update
from pausesim.reward import (
    Averaged,
    Clustered,
    RewardConfig,
    Vertex,
    cluster_surplus,
    realized_reward,
)
from pausesim.toy import ToyTask, accuracy, toy_local_step

BANDIT_POLICIES = ("pause", "pause_pivot", "sa_pause", "vanilla_sa", "genie")
CSV_COLUMNS = (
    "run_id",
    "policy",
    "seed",
    "t",
    "selected_ids",
    "round_latency",
    "cum_latency",
    "accuracy",
    "max_leakage",
    "realized_reward",
    "genie_reward",
    "cum_regret",
)

# Child stream indices; fixed so adding a stream never shifts the others.
_STREAMS = {"population": 0, "data": 1, "latency": 2, "selection": 3, "noise": 4, "training": 5}


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _STREAMS[name]]))


@dataclass(frozen=True)
class UserProfile:
    id: int
    latency_mean: float
    latency_std: float
    data_size: int
    cluster: int
    label_probs: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True)
class Population:
    users: tuple[UserProfile, ...]
    tau_min: float

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def total_data(self) -> int:
        return sum(u.data_size for u in self.users)

    @property
    def means(self) -> np.ndarray:
        return np.array([u.latency_mean for u in self.users])

    @property
    def stds(self) -> np.ndarray:
        return np.array([u.latency_std for u in self.users])

    @property
    def data_share(self) -> np.ndarray:
        sizes = np.array([u.data_size for u in self.users], dtype=float)
        return sizes / sizes.sum()

    @property
    def clusters(self) -> tuple[int, ...]:
        return tuple(u.cluster for u in self.users)

    def expected_latency(self) -> np.ndarray:
        return np.array([expected_latency(u, self.tau_min) for u in self.users])

    def expected_ratio(self) -> np.ndarray:
        """True ``E[tau_min / tau_k]`` for every user (the Genie's knowledge)."""
        return np.array([expected_ratio(u, self.tau_min) for u in self.users])

    def min_gap(self) -> float:
        """Smallest gap between two users' expected latencies."""
        lat = np.sort(self.expected_latency())
        return float(np.diff(lat).min()) if len(lat) > 1 else math.inf


def tier_means(num_users: int, fast: float, slow: float, spacing: float) -> np.ndarray:
    """Latency means for two equal tiers, ids not yet shuffled."""
    n_fast = num_users - num_users // 2
    n_slow = num_users // 2
    return np.concatenate([fast + spacing * np.arange(n_fast), slow + spacing * np.arange(n_slow)])


def synthesize_population(cfg: ExperimentConfig, rng: np.random.Generator) -> Population:
    pop = cfg.population
    K = pop.num_users
    if pop.dirichlet_alpha <= 0:
        raise ValueError("dirichlet concentration must be positive")
    means = rng.permutation(tier_means(K, pop.fast_mean, pop.slow_mean, pop.mean_spacing))

    num_classes = cfg.toy.classes
    if pop.iid:
        base, extra = divmod(pop.total_data, K)
        sizes = np.full(K, base, dtype=np.int64)
        sizes[:extra] += 1
        label_probs = np.full((K, num_classes), 1.0 / num_classes)
    else:
        # Every user keeps at least one sample; the rest is split by a Dirichlet draw.
        shares = rng.dirichlet(np.full(K, pop.dirichlet_alpha))
        sizes = 1 + rng.multinomial(pop.total_data - K, shares)
        dominant = rng.integers(num_classes, size=K)
        rest = rng.dirichlet(np.full(num_classes, pop.dirichlet_alpha), size=K)
        label_probs = (1 - pop.dominant_fraction) * rest
        label_probs[np.arange(K), dominant] += pop.dominant_fraction
    clusters = rng.integers(pop.clusters, size=K)

    users = tuple(
        UserProfile(
            id=k,
            latency_mean=float(means[k]),
            latency_std=pop.latency_std,
            data_size=int(sizes[k]),
            cluster=int(clusters[k]),
            label_probs=label_probs[k],
        )
        for k in range(K)
    )
    return Population(users, pop.tau_min)


def _truncated(profile: UserProfile, tau_min: float):
    a = (tau_min - profile.latency_mean) / profile.latency_std
    return stats.truncnorm(a, np.inf, loc=profile.latency_mean, scale=profile.latency_std)


def expected_latency(profile: UserProfile, tau_min: float) -> float:
    if profile.latency_std == 0:
        return profile.latency_mean
    return float(_truncated(profile, tau_min).mean())


def expected_ratio(profile: UserProfile, tau_min: float) -> float:
    if profile.latency_std == 0:
        return tau_min / profile.latency_mean
    dist = _truncated(profile, tau_min)
    hi = profile.latency_mean + 40 * profile.latency_std
    value, _ = integrate.quad(lambda x: tau_min / x * dist.pdf(x), tau_min, hi, limit=200, epsabs=1e-13)
    return float(value)


def sample_latency(profile: UserProfile, tau_min: float, rng: np.random.Generator) -> float:
    """One draw from the user's normal latency, resampled until it clears ``tau_min``."""
    while True:
        x = rng.normal(profile.latency_mean, profile.latency_std)
        if x >= tau_min:
            return float(x)


def sample_latencies(means: np.ndarray, stds: np.ndarray, tau_min: float, rng: np.random.Generator) -> np.ndarray:
    """Vectorized rejection sampling of one latency per user."""
    out = rng.normal(means, stds)
    bad = np.flatnonzero(out < tau_min)
    while len(bad):
        out[bad] = rng.normal(means[bad], stds[bad])
        bad = bad[out[bad] < tau_min]
    return out


def round_latency(members: Vertex, latencies, reward_cfg: RewardConfig, delta_tau: float) -> float:
    """Slowest member's latency, plus the cluster-overlap penalty when clusters are scored."""
    value = max(latencies[k] for k in members)
    if isinstance(reward_cfg.phi, Clustered):
        value += delta_tau * cluster_surplus(members, reward_cfg.phi.clusters)
    return float(value)


def fedavg_weights(members: Vertex, sizes: np.ndarray) -> np.ndarray:
    w = np.asarray([sizes[k] for k in members], dtype=float)
    return w / w.sum()


def reward_config(cfg: ExperimentConfig, population: Population | None = None) -> RewardConfig:
    r = cfg.reward
    if r.phi == "clustered":
        if population is None:
            raise ValueError("clustered rewards need a population for the cluster ids")
        phi = Clustered(r.rho, population.clusters)
    else:
        phi = Averaged()
    return RewardConfig(alpha=r.alpha, gamma=r.gamma, beta=r.beta, phi=phi)


@dataclass
class RoundOutcome:
    t: int
    selected: Vertex
    latencies: np.ndarray  # all K draws of the round; only the selected ones matter
    round_latency: float
    realized_reward: float
    genie_reward: float
    regret_increment: float
    max_leakage: float
    accuracy: float
    cum_latency: float
    cum_regret: float


class Simulation:
    """One policy running against one seeded world."""

    def __init__(self, cfg: ExperimentConfig, policy: str, seed: int):
        if policy not in ("pause", "pause_pivot", "sa_pause", "vanilla_sa", "genie",
                          "random", "fastest", "full_privacy", "full_no_privacy"):
            raise ValueError(f"unknown policy {policy!r}")
        self.cfg = cfg
        self.policy = policy
        self.seed = seed
        self.population = synthesize_population(cfg, stream(seed, "population"))
        self.reward_cfg = reward_config(cfg, self.population)
        if policy == "pause_pivot" and not isinstance(self.reward_cfg.phi, Averaged):
            raise ValueError("Pivot-and-Fill requires averaged bonus terms")
        K, m = self.population.num_users, cfg.population.m
        self.m = m
        self.schedule = PrivacySchedule(cfg.privacy.eps_bar, cfg.privacy.eta)
        self.state = bandit.SelectionState.fresh(
            K, m, self.schedule, self.population.data_share, cfg.bandit.zeta
        )
        self.mu = self.population.expected_ratio()
        self.sizes = np.array([u.data_size for u in self.population.users])
        self._means = self.population.means
        self._stds = self.population.stds
        self._warmup = bandit.warmup_rounds(K, m)
        self._fastest = tuple(sorted(int(k) for k in np.lexsort((np.arange(K), -self.mu))[:m]))
        self._genie_method = self._pick_genie_method()

        self.latency_rng = stream(seed, "latency")
        self.selection_rng = stream(seed, "selection")
        self.noise_rng = stream(seed, "noise")
        self.training_rng = stream(seed, "training")

        self.train = cfg.run.train
        self.track_regret = cfg.run.track_regret
        self.cum_latency = 0.0
        self.cum_regret = 0.0
        if self.train:
            self._setup_training(stream(seed, "data"))

    def _pick_genie_method(self) -> str | None:
        if isinstance(self.reward_cfg.phi, Averaged):
            return "pivot"
        if math.comb(self.population.num_users, self.m) <= bandit.MAX_BRUTE_SUBSETS:
            return "brute"
        return None  # regret is not tracked where the Genie cannot be evaluated exactly

    def _setup_training(self, rng: np.random.Generator) -> None:
        toy = self.cfg.toy
        self.task = ToyTask.make(toy.classes, toy.features, toy.separation, toy.noise)
        self.shards = [self.task.shard(u.data_size, u.label_probs, rng) for u in self.population.users]
        self.validation = self.task.balanced(toy.validation_size, rng)
        self.weights = toy.init_scale * rng.normal(size=self.task.num_params)

    @property
    def uses_privacy(self) -> bool:
        return self.policy != "full_no_privacy"

    # -- selection -------------------------------------------------------

    def _bonus_inputs(self) -> tuple[np.ndarray, np.ndarray]:
        K = self.population.num_users
        rc = self.reward_cfg
        g = self.state.g_values(rc.beta) if rc.alpha else np.zeros(K)
        p = self.state.p_values() if rc.gamma else np.zeros(K)
        return g, p

    def _select(self, t: int, g: np.ndarray, p: np.ndarray) -> Vertex:
        K, m, policy = self.population.num_users, self.m, self.policy
        if policy == "random":
            return sa.random_vertex(K, m, self.selection_rng)
        if policy == "fastest":
            return self._fastest
        if policy in ("full_privacy", "full_no_privacy"):
            return tuple(range(K))
        if t <= self._warmup:
            return bandit.warmup_selection(t, K, m)
        rc = self.reward_cfg
        if policy == "genie":
            return bandit.genie_argmax(self.mu, g, p, rc, m, self._genie_method or "brute")
        ucb = self.state.ucb
        if policy == "pause_pivot":
            return bandit.pivot_fill(ucb, g, p, rc, m)
        if policy == "pause":
            return bandit.argmax_over_subsets(ucb, g, p, rc, m)
        initial = sa.random_vertex(K, m, self.selection_rng)
        if policy == "sa_pause":
            c = sa.compute_c(ucb, rc, m, self.cfg.sa.omega)
            params = sa.SaParams(c, self.cfg.sa.kappa, self.cfg.sa_iters)
            return sa.sa_search(ucb, g, p, rc, params, initial, self.selection_rng)
        params = sa.SaParams(sa.compute_c_vanilla(rc), self.cfg.sa.kappa, self.cfg.sa_iters)
        return sa.vanilla_sa_search(ucb, g, p, rc, params, initial, self.selection_rng)

    def _genie_set(self, t: int, selected: Vertex, g: np.ndarray, p: np.ndarray) -> Vertex | None:
        if self.policy == "genie":
            return selected
        if len(selected) != self.m or self._genie_method is None:
            return None
        if t <= self._warmup:
            # Both policies share the warm-up, so the Genie's set is the same block.
            return bandit.warmup_selection(t, self.population.num_users, self.m)
        return bandit.genie_argmax(self.mu, g, p, self.reward_cfg, self.m, self._genie_method)

    # -- training --------------------------------------------------------

    def _train(self, selected: Vertex, budgets: list[float]) -> float:
        toy = self.cfg.toy
        clip = self.cfg.privacy.clip_bound
        sensitivity = 2.0 * clip  # L1 distance between any two clipped updates
        weights = fedavg_weights(selected, self.sizes)
        total = np.zeros_like(self.weights)
        for w, k, eps in zip(weights, selected, budgets):
            X, y = self.shards[k]
            h = toy_local_step(self.weights, X, y, toy.classes, toy.lr, toy.local_epochs,
                               toy.batch_size, self.training_rng)
            h = clip_l1(h, clip)
            if eps is not None and self.cfg.privacy.noise:
                h = privatize_update(h, sensitivity, eps, self.noise_rng)
            total += w * h
        self.weights = self.weights + total
        Xv, yv = self.validation
        return accuracy(self.weights, Xv, yv, toy.classes)

    # -- round loop ------------------------------------------------------

    def run_round(self) -> RoundOutcome:
        state, rc = self.state, self.reward_cfg
        t = state.t + 1
        tau_min = self.population.tau_min
        latencies = sample_latencies(self._means, self._stds, tau_min, self.latency_rng)

        g, p = self._bonus_inputs()
        selected = self._select(t, g, p)

        reward = realized_reward(selected, latencies, tau_min, g, p, rc)
        genie_set = self._genie_set(t, selected, g, p) if self.track_regret else None
        if genie_set is None:
            genie_reward = regret = math.nan
        else:
            genie_reward = reward if genie_set == selected else realized_reward(
                genie_set, latencies, tau_min, g, p, rc
            )
            regret = genie_reward - reward
            self.cum_regret += regret

        if self.uses_privacy:
            budgets = [state.ledger.charge(k) for k in selected]
            leakage = state.ledger.max_spent()
        else:
            budgets = [None] * len(selected)
            leakage = math.inf  # raw updates leave the device

        acc = self._train(selected, budgets) if self.train else math.nan

        state.record(selected, [tau_min / latencies[k] for k in selected])
        lat = round_latency(selected, latencies, rc, self.cfg.reward.delta_tau)
        self.cum_latency += lat
        return RoundOutcome(
            t=t,
            selected=selected,
            latencies=latencies,
            round_latency=lat,
            realized_reward=reward,
            genie_reward=genie_reward,
            regret_increment=regret,
            max_leakage=leakage,
            accuracy=acc,
            cum_latency=self.cum_latency,
            cum_regret=self.cum_regret if genie_set is not None else math.nan,
        )

    def run(self, rounds: int) -> Iterator[RoundOutcome]:
        for _ in range(rounds):
            yield self.run_round()


# -- experiment runner ---------------------------------------------------


@dataclass
class CellResult:
    policy: str
    seed: int
    outcomes: list[RoundOutcome]

    @property
    def run_id(self) -> str:
        return f"{self.policy}-s{self.seed}"

    def summary(self) -> dict:
        last = self.outcomes[-1] if self.outcomes else None
        return {
            "run_id": self.run_id,
            "policy": self.policy,
            "seed": self.seed,
            "rounds": len(self.outcomes),
            "final_accuracy": last.accuracy if last else math.nan,
            "cum_latency": last.cum_latency if last else 0.0,
            "max_leakage": last.max_leakage if last else 0.0,
            "cum_regret": last.cum_regret if last else 0.0,
        }


def run_cell(cfg: ExperimentConfig, policy: str, seed: int) -> CellResult:
    sim = Simulation(cfg, policy, seed)
    return CellResult(policy, seed, list(sim.run(cfg.run.rounds)))


def _run_cell_args(args) -> CellResult:
    return run_cell(*args)


def run_experiment(cfg: ExperimentConfig) -> list[CellResult]:
    """Every (policy, seed) cell, in config order regardless of worker count."""
    cells = [(cfg, policy, seed) for policy in cfg.run.policies for seed in cfg.run.seeds]
    if cfg.run.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=cfg.run.workers) as pool:
            return list(pool.map(_run_cell_args, cells))
    return [run_cell(*cell) for cell in cells]


def _fmt(x: float) -> str:
    return repr(float(x))


def csv_rows(result: CellResult) -> Iterator[list[str]]:
    for o in result.outcomes:
        yield [
            result.run_id,
            result.policy,
            str(result.seed),
            str(o.t),
            ";".join(str(k) for k in o.selected),
            _fmt(o.round_latency),
            _fmt(o.cum_latency),
            _fmt(o.accuracy),
            _fmt(o.max_leakage),
            _fmt(o.realized_reward),
            _fmt(o.genie_reward),
            _fmt(o.cum_regret),
        ]


def write_rounds_csv(results: list[CellResult], handle: io.TextIOBase) -> None:
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for result in results:
        writer.writerows(csv_rows(result))
