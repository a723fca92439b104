"""Post-processing: regret bound and fit, seed aggregation, and exhaustive oracles."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from pausesim.reward import RewardConfig, Vertex

SUMMARY_COLUMNS = (
    "policy",
    "checkpoint_n",
    "mean_regret",
    "std_regret",
    "bound",
    "mean_accuracy",
    "mean_cum_latency",
    "max_leakage",
)


def log_regret_bound(K: int, m: int, delta: float, delta_max: float, n: int) -> float:
    """``K (delta_max + delta) (4 (m+1) ln n / delta^2 + 1 + 2 pi^2 / 3)``."""
    if not delta > 0:
        raise ValueError(f"latency gap delta must be positive, got {delta}")
    if n < 1:
        raise ValueError(f"horizon must be >= 1, got {n}")
    return K * (delta_max + delta) * (4 * (m + 1) * math.log(n) / delta**2 + 1 + 2 * math.pi**2 / 3)


def delta_max_bound(mu: Sequence[float], cfg: RewardConfig, m: int) -> float:
    """Computable upper bound on the largest per-round reward gap."""
    ranges = cfg.phi_ranges(m)
    return float(max(mu) - min(mu) + cfg.alpha * ranges.delta_phi_g + cfg.gamma * ranges.delta_phi_p)


def enumerate_argmax(objective: Callable[[Vertex], float], K: int, m: int) -> tuple[Vertex, float]:
    """Exhaustive maximum over ``m``-subsets; the lexicographically first set wins ties."""
    if not 1 <= m <= K:
        raise ValueError(f"need 1 <= m <= K, got m={m}, K={K}")
    if math.comb(K, m) > 1_000_000:
        raise ValueError(f"C({K},{m}) = {math.comb(K, m)} subsets is too many to enumerate")
    best, best_value = None, -math.inf
    for combo in combinations(range(K), m):
        value = objective(combo)
        if value > best_value:
            best, best_value = combo, value
    return best, best_value


@dataclass(frozen=True)
class RegretFit:
    slope_vs_logn: float
    bound_constant: float
    violation: bool


def fit_regret(
    ns: Sequence[int],
    mean_regret: Sequence[float],
    bounds: Sequence[float],
    checkpoints: Iterable[int] = (),
) -> RegretFit:
    """Least-squares slope of ``R(n)`` against ``ln n`` over the last decade of ``ns``.

    ``violation`` compares the mean regret with the bound at the listed
    checkpoints (all of ``ns`` when none are given).
    """
    ns = np.asarray(ns, dtype=float)
    reg = np.asarray(mean_regret, dtype=float)
    bounds = np.asarray(bounds, dtype=float)
    last = ns >= ns.max() / 10
    if last.sum() < 2:
        raise ValueError("need at least two points in the last decade to fit a slope")
    slope = float(np.polyfit(np.log(ns[last]), reg[last], 1)[0])
    checkpoints = list(checkpoints)
    mask = np.isin(ns, checkpoints) if checkpoints else np.ones(len(ns), dtype=bool)
    return RegretFit(
        slope_vs_logn=slope,
        bound_constant=float(bounds[-1] / math.log(ns[-1])) if ns[-1] > 1 else math.nan,
        violation=bool((reg[mask] > bounds[mask]).any()),
    )


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean over the last ``window`` values (fewer at the start)."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    values = np.asarray(values, dtype=float)
    if window > len(values):
        warnings.warn(
            f"smoothing window {window} exceeds series length {len(values)}; series left unsmoothed",
            stacklevel=2,
        )
        return values.copy()
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def accuracy_at_latency(cum_latency: Sequence[float], accuracy: Sequence[float], grid: Sequence[float]) -> np.ndarray:
    """Accuracy of the last round finished by each latency in ``grid`` (NaN before the first)."""
    cum_latency = np.asarray(cum_latency, dtype=float)
    accuracy = np.asarray(accuracy, dtype=float)
    pos = np.searchsorted(cum_latency, np.asarray(grid, dtype=float), side="right") - 1
    out = np.full(len(pos), np.nan)
    ok = pos >= 0
    out[ok] = accuracy[pos[ok]]
    return out


def latency_to_threshold(grid: Sequence[float], curve: Sequence[float], threshold: float) -> float:
    """First latency in ``grid`` at which ``curve`` reaches ``threshold``; inf if never."""
    hit = np.flatnonzero(np.asarray(curve) >= threshold)
    return float(np.asarray(grid)[hit[0]]) if len(hit) else math.inf


def _float(x: str) -> float:
    return float(x) if x != "" else math.nan


def read_rounds_csv(path: str | Path) -> list[dict]:
    """Per-round rows with numeric fields parsed."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            for key in ("round_latency", "cum_latency", "accuracy", "max_leakage",
                        "realized_reward", "genie_reward", "cum_regret"):
                row[key] = _float(row[key])
            row["t"] = int(row["t"])
            row["seed"] = int(row["seed"])
            rows.append(row)
    return rows


def summarize(
    rows: Sequence[dict],
    window: int = 1,
    checkpoints: Sequence[int] | None = None,
    bound: Callable[[int], float] | None = None,
) -> list[dict]:
    """Mean and spread across seeds at each checkpoint, per policy.

    Accuracy is smoothed per seed with ``moving_average`` before averaging;
    stored per-round data is never modified.
    """
    by_cell: dict[tuple[str, int], list[dict]] = {}
    for row in rows:
        by_cell.setdefault((row["policy"], row["seed"]), []).append(row)
    policies = list(dict.fromkeys(p for p, _ in by_cell))
    out = []
    for policy in policies:
        cells = [sorted(v, key=lambda r: r["t"]) for (p, _), v in by_cell.items() if p == policy]
        horizon = min(len(c) for c in cells)
        points = checkpoints or [horizon]
        smoothed = [moving_average([r["accuracy"] for r in c[:horizon]], window) if horizon else [] for c in cells]
        for n in points:
            if not 1 <= n <= horizon:
                continue
            regrets = np.array([c[n - 1]["cum_regret"] for c in cells])
            out.append(
                {
                    "policy": policy,
                    "checkpoint_n": n,
                    "mean_regret": float(regrets.mean()),
                    "std_regret": float(regrets.std()),
                    "bound": bound(n) if bound else math.nan,
                    "mean_accuracy": float(np.mean([s[n - 1] for s in smoothed])),
                    "mean_cum_latency": float(np.mean([c[n - 1]["cum_latency"] for c in cells])),
                    "max_leakage": float(max(c[n - 1]["max_leakage"] for c in cells)),
                }
            )
    return out


def write_summary_csv(summary: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in summary:
            writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
