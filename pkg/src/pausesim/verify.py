"""Oracle suites behind ``pausesim verify``.

Each suite returns a list of ``Check`` records; a failing check carries the
smallest piece of input needed to replay it.  ``scale`` shrinks instance
counts and horizons proportionally for quick runs.
"""

from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from pausesim import bandit, sa
from pausesim.config import ExperimentConfig, from_dict
from pausesim.metrics import (
    accuracy_at_latency,
    delta_max_bound,
    fit_regret,
    latency_to_threshold,
    moving_average,
    log_regret_bound,
)
from pausesim.privacy import LeakageLedger, PrivacySchedule, privatize_update
from pausesim.reward import RewardConfig, energy
from pausesim.sim import Simulation


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    replay: dict | None = None
    table: list[dict] = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} {self.name}: {self.detail}"
        if not self.passed and self.replay is not None:
            text += " replay=" + json.dumps(self.replay, sort_keys=True)
        return text


def _scaled(n: int, scale: float, floor: int = 1) -> int:
    return max(floor, int(round(n * scale)))


def random_instance(rng: np.random.Generator, K: int, m: int) -> dict:
    """Selection inputs shaped like a post-warm-up round: finite UCBs, rewards in range."""
    return {
        "K": K,
        "m": m,
        "ucb": rng.uniform(0.2, 2.0, K).tolist(),
        "g": rng.uniform(-1.0, 1.0, K).tolist(),
        "p": rng.uniform(0.0, 1.0, K).tolist(),
        "alpha": float(rng.uniform(0.0, 1.0)),
        "gamma": float(rng.uniform(0.0, 1.0)),
    }


def _energy_of(inst: dict, members) -> float:
    cfg = RewardConfig(alpha=inst["alpha"], gamma=inst["gamma"])
    return energy(members, inst["ucb"], inst["g"], inst["p"], cfg)


def _brute_energy(inst: dict) -> float:
    cfg = RewardConfig(alpha=inst["alpha"], gamma=inst["gamma"])
    best = bandit.argmax_over_subsets(inst["ucb"], inst["g"], inst["p"], cfg, inst["m"])
    return energy(best, inst["ucb"], inst["g"], inst["p"], cfg)


# -- suites --------------------------------------------------------------


def suite_pivotfill(scale: float = 1.0, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    count = _scaled(10_000, scale)
    start = time.perf_counter()
    first_bad = None
    mismatches = 0
    for _ in range(count):
        K = int(rng.integers(6, 21))
        m = int(rng.integers(2, 7))
        inst = random_instance(rng, K, m)
        cfg = RewardConfig(alpha=inst["alpha"], gamma=inst["gamma"])
        chosen = bandit.pivot_fill(inst["ucb"], inst["g"], inst["p"], cfg, m)
        if abs(_energy_of(inst, chosen) - _brute_energy(inst)) > 1e-12:
            mismatches += 1
            first_bad = first_bad or inst
    elapsed = time.perf_counter() - start
    return [
        Check("pivotfill.equivalence", mismatches == 0,
              f"{mismatches} mismatches over {count} instances in {elapsed:.1f}s", first_bad),
    ]


def sa_hit_rates(count: int, iters: int, seed: int = 0, K: int = 12, m: int = 4) -> tuple[float, float, dict | None]:
    rng = np.random.default_rng(seed)
    hits = vanilla_hits = 0
    first_miss = None
    for i in range(count):
        inst = random_instance(rng, K, m)
        cfg = RewardConfig(alpha=inst["alpha"], gamma=inst["gamma"])
        best = _brute_energy(inst)
        initial = sa.random_vertex(K, m, rng)
        params = sa.SaParams(sa.compute_c(inst["ucb"], cfg, m), 1.0, iters)
        found = sa.sa_search(inst["ucb"], inst["g"], inst["p"], cfg, params, initial, np.random.default_rng([seed, i]))
        if abs(_energy_of(inst, found) - best) <= 1e-12:
            hits += 1
        elif first_miss is None:
            first_miss = {**inst, "initial": list(initial), "chain_seed": [seed, i], "iters": iters}
        vparams = sa.SaParams(sa.compute_c_vanilla(cfg), 1.0, iters)
        vfound = sa.vanilla_sa_search(inst["ucb"], inst["g"], inst["p"], cfg, vparams, initial,
                                      np.random.default_rng([seed, i]))
        vanilla_hits += abs(_energy_of(inst, vfound) - best) <= 1e-12
    return hits / count, vanilla_hits / count, first_miss


def suite_sa(scale: float = 1.0, seed: int = 0) -> list[Check]:
    count = _scaled(200, scale, floor=20)
    start = time.perf_counter()
    tailored, vanilla, miss = sa_hit_rates(count, 2000, seed)
    elapsed = time.perf_counter() - start
    return [
        Check("sa.tailored_hit_rate", tailored >= 0.95,
              f"{tailored:.1%} optimal over {count} instances (need >= 95%), {elapsed:.1f}s total", miss),
        Check("sa.vanilla_hit_rate", vanilla >= 0.90, f"{vanilla:.1%} optimal (need >= 90%)"),
    ]


def ldp_ratio(eps: float, sensitivity: float, samples: int, seed: int = 0, min_count: int | None = None) -> float:
    """Largest histogram-density ratio between outputs for inputs 0 and ``sensitivity``.

    Only bins holding at least ``min_count`` samples (default 2% of the
    sample) under both inputs are compared, so sampling error stays near 1-2%.
    """
    min_count = samples // 50 if min_count is None else min_count
    rng = np.random.default_rng(seed)
    a = privatize_update(np.zeros(samples), sensitivity, eps, rng)
    b = privatize_update(np.full(samples, sensitivity), sensitivity, eps, rng)
    scale = sensitivity / eps
    edges = np.linspace(-6 * scale, sensitivity + 6 * scale, 41)
    ha, _ = np.histogram(a, edges)
    hb, _ = np.histogram(b, edges)
    ok = (ha >= min_count) & (hb >= min_count)
    if not ok.any():
        raise ValueError("no histogram bin has enough samples for a ratio estimate")
    return float(max((ha[ok] / hb[ok]).max(), (hb[ok] / ha[ok]).max()))


LDP_PAIRS = ((0.5, 1.0), (1.0, 1.0), (2.0, 0.5))


def leakage_run(policy: str, rounds: int, seed: int = 0, eps_bar: float = 40.0) -> LeakageLedger:
    cfg = from_dict({
        "privacy": {"eps_bar": eps_bar},
        "run": {"train": False, "track_regret": False},
    })
    sim = Simulation(cfg, policy, seed)
    for _ in range(rounds):
        sim.run_round()
    return sim.state.ledger


def suite_privacy(scale: float = 1.0, seed: int = 0) -> list[Check]:
    checks = []
    rounds = _scaled(100_000, scale, floor=100)
    for policy in ("pause_pivot", "random", "fastest", "full_privacy"):
        ledger = leakage_run(policy, rounds, seed)
        exact = ledger.exact_max_spent()
        ok = exact < ledger.schedule.eps_bar and ledger.max_spent() <= ledger.schedule.eps_bar
        checks.append(Check(
            f"privacy.cap.{policy}", bool(ok),
            f"max participations {int(ledger.participation.max())} over {rounds} rounds, "
            f"eps_bar - spent = {float(ledger.schedule.eps_bar - exact):.3e}",
            None if ok else {"policy": policy, "rounds": rounds, "seed": seed},
        ))
    samples = _scaled(1_000_000, scale, floor=200_000)
    for eps, sens in LDP_PAIRS:
        ratio = ldp_ratio(eps, sens, samples, seed)
        limit = math.exp(eps) * 1.05
        checks.append(Check(
            f"privacy.ldp_ratio.eps={eps},df={sens}", ratio <= limit,
            f"max density ratio {ratio:.4f} vs limit {limit:.4f} ({samples} samples)",
            None if ratio <= limit else {"eps": eps, "sensitivity": sens, "samples": samples, "seed": seed},
        ))
    return checks


# -- regret --------------------------------------------------------------

REGRET_POPULATION = {
    "num_users": 8,
    "m": 2,
    "tau_min": 0.5,
    "fast_mean": 1.0,
    "slow_mean": 2.0,
    "mean_spacing": 0.12,
    "latency_std": 0.2,
}


def regret_config(horizon: int, seeds: int) -> ExperimentConfig:
    return from_dict({
        "population": REGRET_POPULATION,
        "reward": {"alpha": 0.0, "gamma": 0.0},
        "run": {"rounds": horizon, "seeds": list(range(seeds)), "policies": ["pause_pivot"], "train": False},
    })


def log_grid(horizon: int, per_decade: int = 20) -> list[int]:
    decades = math.log10(horizon)
    pts = np.round(np.logspace(0, decades, max(2, int(per_decade * decades) + 1))).astype(int)
    powers = [10**k for k in range(int(decades) + 1)]
    return sorted({int(p) for p in pts if 1 <= p <= horizon} | set(powers) | {horizon})


@dataclass
class RegretCurve:
    ns: list[int]
    mean: np.ndarray
    std: np.ndarray
    bounds: np.ndarray
    delta: float
    delta_max: float


def regret_curve(horizon: int, seeds: int, policy: str = "pause_pivot") -> RegretCurve:
    cfg = regret_config(horizon, seeds)
    grid = log_grid(horizon)
    marks = set(grid)
    curves = []
    sim = None
    for seed in cfg.run.seeds:
        sim = Simulation(cfg, policy, seed)
        values = []
        for _ in range(horizon):
            out = sim.run_round()
            if out.t in marks:
                values.append(out.cum_regret)
        curves.append(values)
    arr = np.array(curves)
    delta = sim.population.min_gap()
    dmax = delta_max_bound(sim.mu, sim.reward_cfg, sim.m)
    K, m = sim.population.num_users, sim.m
    bounds = np.array([log_regret_bound(K, m, delta, dmax, n) for n in grid])
    return RegretCurve(grid, arr.mean(axis=0), arr.std(axis=0), bounds, delta, dmax)


def suite_regret(scale: float = 1.0, seed: int = 0) -> list[Check]:
    horizon = _scaled(100_000, scale, floor=1_000)
    seeds = _scaled(20, scale, floor=2)
    start = time.perf_counter()
    curve = regret_curve(horizon, seeds)
    elapsed = time.perf_counter() - start
    checkpoints = [n for n in (1_000, 10_000, 100_000) if n <= horizon]
    fit = fit_regret(curve.ns, curve.mean, curve.bounds, checkpoints)
    checks = []
    for n in checkpoints:
        i = curve.ns.index(n)
        ok = curve.mean[i] <= curve.bounds[i]
        checks.append(Check(
            f"regret.bound.n={n}", bool(ok),
            f"mean R(n) {curve.mean[i]:.2f} (std {curve.std[i]:.2f}) vs bound {curve.bounds[i]:.1f}",
            None if ok else {"horizon": horizon, "seeds": seeds},
        ))
    slope_ok = math.isfinite(fit.slope_vs_logn) and fit.slope_vs_logn > 0
    checks.append(Check(
        "regret.log_slope", slope_ok,
        f"slope of mean R(n) vs ln n over last decade = {fit.slope_vs_logn:.2f}; "
        f"delta={curve.delta:.4f}, delta_max={curve.delta_max:.4f}; {seeds} seeds x {horizon} rounds in {elapsed:.0f}s",
    ))
    return checks


# -- complexity ----------------------------------------------------------


def large_state(seed: int = 0, rounds: int = 40) -> Simulation:
    """A large-network simulation advanced past warm-up, used as a timing snapshot."""
    cfg = from_dict({"preset": "large", "run": {"train": False, "track_regret": False}})
    sim = Simulation(cfg, "pause_pivot", seed)
    for _ in range(rounds):
        sim.run_round()
    return sim


def _median_time(fn: Callable[[], object], repeats: int) -> float:
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def _interleaved_median_times(fns: list[Callable[[], object]], repeats: int) -> list[float]:
    """Median time of each function, alternating them per repeat so drift hits all equally."""
    times: list[list[float]] = [[] for _ in fns]
    for _ in range(repeats):
        for fn, acc in zip(fns, times):
            start = time.perf_counter()
            fn()
            acc.append(time.perf_counter() - start)
    return [statistics.median(t) for t in times]


def brute_cost_per_subset(num_users: int = 20, m: int = 5, repeats: int = 3) -> float:
    rng = np.random.default_rng(0)
    scores, g, p = rng.random(num_users), rng.random(num_users), rng.random(num_users)
    cfg = RewardConfig(alpha=0.5, gamma=0.5)
    bandit.subset_table(num_users, m)  # table construction is not part of the per-round cost
    t = _median_time(lambda: bandit.argmax_over_subsets(scores, g, p, cfg, m), repeats)
    return t / math.comb(num_users, m)


def complexity_table(repeats: int = 5, seed: int = 0) -> list[dict]:
    sim = large_state(seed)
    state, rc = sim.state, sim.reward_cfg
    ucb, g, p = state.ucb, state.g_values(rc.beta), state.p_values()
    K, m = state.num_users, state.m
    iters = 50 * K
    rng = np.random.default_rng(seed)
    initial = sa.random_vertex(K, m, rng)
    tailored = sa.SaParams(sa.compute_c(ucb, rc, m, sim.cfg.sa.omega), sim.cfg.sa.kappa, iters)
    dense = sa.SaParams(sa.compute_c_vanilla(rc), sim.cfg.sa.kappa, iters)
    sa_time, vanilla_time = _interleaved_median_times([
        lambda: sa.sa_search(ucb, g, p, rc, tailored, initial, np.random.default_rng(seed)),
        lambda: sa.vanilla_sa_search(ucb, g, p, rc, dense, initial, np.random.default_rng(seed)),
    ], repeats)
    rows = [
        {"method": "pivot_fill", "median_s": _median_time(lambda: bandit.pivot_fill(ucb, g, p, rc, m), repeats),
         "note": "measured"},
        {"method": "sa_pause", "median_s": sa_time, "note": f"measured, {iters} iterations"},
        {"method": "vanilla_sa", "median_s": vanilla_time, "note": f"measured, {iters} iterations"},
    ]
    subsets = math.comb(K, m)
    if subsets > bandit.MAX_BRUTE_SUBSETS:
        rows.append({"method": "brute_force", "median_s": brute_cost_per_subset() * subsets,
                     "note": f"extrapolated, C({K},{m}) = {subsets:.3e} exceeds the enumeration guard"})
    else:
        rows.append({"method": "brute_force", "median_s": _median_time(
            lambda: bandit.argmax_over_subsets(ucb, g, p, rc, m), repeats), "note": "measured"})
    return rows


def suite_complexity(scale: float = 1.0, seed: int = 0) -> list[Check]:
    rows = complexity_table(_scaled(5, scale), seed)
    times = [r["median_s"] for r in rows]
    ordered = all(a < b for a, b in zip(times, times[1:]))
    detail = " < ".join(f"{r['method']} {r['median_s']:.3g}s" for r in rows)
    return [Check("complexity.ordering", ordered, detail, table=rows)]


# -- trend ---------------------------------------------------------------

TREND_SETTINGS = {
    "privacy": {"eps_bar": 40.0, "clip_bound": 0.1},
    "reward": {"phi": "averaged"},
    "toy": {"features": 2, "classes": 3, "separation": 2.0, "lr": 0.01, "init_scale": 0.5},
    # kappa=1 rarely reaches the optimum at K=30 in 50*K steps; a colder chain does.
    "sa": {"kappa": 100.0, "max_iters": 3000},
}


def trend_config(rounds: int, seeds: int) -> ExperimentConfig:
    return from_dict({
        **TREND_SETTINGS,
        "run": {"rounds": rounds, "seeds": list(range(seeds)),
                "policies": ["pause", "sa_pause", "random", "full_privacy"], "track_regret": False},
    })


def trend_curves(cfg: ExperimentConfig) -> dict[str, dict]:
    """Per-policy seed-stacked accuracy (smoothed per seed) and cumulative latency arrays."""
    curves = {}
    for policy in cfg.run.policies:
        acc, lat = [], []
        for seed in cfg.run.seeds:
            outs = list(Simulation(cfg, policy, seed).run(cfg.run.rounds))
            acc.append(moving_average([o.accuracy for o in outs], cfg.run.window))
            lat.append([o.cum_latency for o in outs])
        curves[policy] = {"accuracy": np.array(acc), "cum_latency": np.array(lat)}
    return curves


def mean_curve_on_grid(curve: dict, grid: np.ndarray) -> np.ndarray:
    """Seed-mean accuracy at each grid latency; the grid must start after every seed's first round."""
    per_seed = [accuracy_at_latency(l, a, grid) for l, a in zip(curve["cum_latency"], curve["accuracy"])]
    return np.array(per_seed).mean(axis=0)


def suite_trend(scale: float = 1.0, seed: int = 0) -> list[Check]:
    rounds = _scaled(150, scale, floor=40)
    seeds = _scaled(10, scale, floor=2)
    cfg = trend_config(rounds, seeds)
    start = time.perf_counter()
    curves = trend_curves(cfg)
    elapsed = time.perf_counter() - start
    final = {p: float(c["accuracy"][:, -1].mean()) for p, c in curves.items()}
    checks = [Check(
        "trend.full_privacy_collapse", final["full_privacy"] < final["pause"],
        f"final accuracy full-participation-with-privacy {final['full_privacy']:.3f} vs PAUSE {final['pause']:.3f}",
    )]

    # Time-to-threshold on the seed-averaged accuracy-vs-latency curves.  Levels sit
    # between the accuracy after the shared round-robin warm-up and the lower peak,
    # so they measure the selection rule rather than the warm-up schedule.
    pair = ("pause", "random")
    warm = bandit.warmup_rounds(cfg.population.num_users, cfg.population.m)
    lo = max(curves[p]["cum_latency"][:, warm - 1].max() for p in pair)
    end = min(curves[p]["cum_latency"][:, -1].min() for p in pair)
    grid = np.linspace(lo, end, 400)
    pause_curve = mean_curve_on_grid(curves["pause"], grid)
    random_curve = mean_curve_on_grid(curves["random"], grid)
    base = max(1.0 / cfg.toy.classes, pause_curve[0], random_curve[0])
    top = min(pause_curve.max(), random_curve.max())
    rows = []
    ok = top > base
    for frac in (0.25, 0.5, 0.75, 0.9):
        level = base + frac * (top - base)
        lp = latency_to_threshold(grid, pause_curve, level)
        lr = latency_to_threshold(grid, random_curve, level)
        rows.append({"threshold": float(level), "pause_latency": lp, "random_latency": lr})
        ok &= lp < lr
    checks.append(Check(
        "trend.pause_faster_than_random", bool(ok),
        "; ".join(f"acc {r['threshold']:.3f}: PAUSE {r['pause_latency']:.1f} vs random {r['random_latency']:.1f}"
                  for r in rows),
        table=rows,
    ))

    pair = ("pause", "sa_pause")
    lo = max(curves[p]["cum_latency"][:, 0].max() for p in pair)
    end = min(curves[p]["cum_latency"][:, -1].min() for p in pair)
    checkpoints = np.linspace(max(end / 10, lo), end, 10)
    gap = np.abs(mean_curve_on_grid(curves["sa_pause"], checkpoints) - mean_curve_on_grid(curves["pause"], checkpoints))
    checks.append(Check(
        "trend.sa_tracks_brute", bool(gap.max() <= 0.02),
        f"max accuracy gap SA vs brute at {len(checkpoints)} latency checkpoints = {gap.max() * 100:.2f} points "
        f"({seeds} seeds x {rounds} rounds, window {cfg.run.window}, {elapsed:.0f}s)",
    ))
    return checks


SUITES: dict[str, Callable[..., list[Check]]] = {
    "pivotfill": suite_pivotfill,
    "sa": suite_sa,
    "privacy": suite_privacy,
    "regret": suite_regret,
    "complexity": suite_complexity,
    "trend": suite_trend,
}


def run_suite(name: str, scale: float = 1.0, seed: int = 0) -> list[Check]:
    if name == "all":
        return [c for suite in SUITES.values() for c in suite(scale, seed)]
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {sorted(SUITES) + ['all']}")
    return SUITES[name](scale, seed)
