"""Experiment configuration: TOML loading, validation, presets and echo.

A config file is TOML with one table per block (``[population]``,
``[privacy]``, ``[reward]``, ``[bandit]``, ``[sa]``, ``[run]``, ``[toy]``)
plus optional top-level ``preset`` and ``output`` keys.  Every key is
optional; missing keys take the preset's default.  Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

POLICIES = (
    "pause",
    "pause_pivot",
    "sa_pause",
    "vanilla_sa",
    "genie",
    "random",
    "fastest",
    "full_privacy",
    "full_no_privacy",
)


class ConfigError(ValueError):
    def __init__(self, key: str, message: str, line: int | None = None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line else ""
        super().__init__(f"{key}{where}: {message}")


@dataclass
class PopulationConfig:
    num_users: int = 30
    m: int = 5
    tau_min: float = 0.5
    fast_mean: float = 1.0
    slow_mean: float = 2.0
    mean_spacing: float = 0.02
    latency_std: float = 0.2
    iid: bool = True
    dirichlet_alpha: float = 3.0
    dominant_fraction: float = 0.5
    total_data: int = 3000
    clusters: int = 6


@dataclass
class PrivacyConfig:
    eps_bar: float = 40.0
    eta: float = 0.05
    clip_bound: float = 1.0
    noise: bool = True


@dataclass
class RewardBlock:
    alpha: float = 0.5
    gamma: float = 0.5
    beta: float = 2.0
    phi: str = "averaged"
    rho: float = 0.1
    delta_tau: float = 0.05


@dataclass
class BanditConfig:
    zeta: float = 1.0


@dataclass
class SaConfig:
    kappa: float = 1.0
    max_iters: int = 0  # 0 means 50 * num_users
    omega: float = 1e-6


@dataclass
class RunConfig:
    rounds: int = 200
    seeds: list[int] = field(default_factory=lambda: [0])
    policies: list[str] = field(default_factory=lambda: ["pause_pivot", "sa_pause", "random", "full_privacy"])
    train: bool = True
    track_regret: bool = True
    workers: int = 1
    window: int = 10
    checkpoints: list[int] = field(default_factory=list)


@dataclass
class ToyConfig:
    features: int = 2
    classes: int = 3
    separation: float = 2.0
    noise: float = 1.0
    lr: float = 0.01
    init_scale: float = 0.5
    local_epochs: int = 1
    batch_size: int = 20
    validation_size: int = 1000


@dataclass
class ExperimentConfig:
    preset: str = "small"
    output: str = "results"
    population: PopulationConfig = field(default_factory=PopulationConfig)
    privacy: PrivacyConfig = field(default_factory=PrivacyConfig)
    reward: RewardBlock = field(default_factory=RewardBlock)
    bandit: BanditConfig = field(default_factory=BanditConfig)
    sa: SaConfig = field(default_factory=SaConfig)
    run: RunConfig = field(default_factory=RunConfig)
    toy: ToyConfig = field(default_factory=ToyConfig)

    @property
    def sa_iters(self) -> int:
        return self.sa.max_iters or 50 * self.population.num_users


BLOCKS = ("population", "privacy", "reward", "bandit", "sa", "run", "toy")

PRESETS: dict[str, dict[str, dict[str, Any]]] = {
    "small": {},
    "large": {
        "population": {"num_users": 300, "m": 15, "clusters": 20, "dirichlet_alpha": 2.0, "total_data": 30000},
        "privacy": {"eps_bar": 10.0},
        "reward": {"delta_tau": 0.01},
        "bandit": {"zeta": 3.0},
        "sa": {"kappa": 30.0},
        "run": {"policies": ["sa_pause", "random", "fastest", "full_privacy"]},
    },
}


def _check(errors: list[tuple[str, str]], ok: bool, key: str, message: str) -> None:
    if not ok:
        errors.append((key, message))


def validate(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    """All range violations as ``(dotted key, message)`` pairs."""
    e: list[tuple[str, str]] = []
    pop, prv, rew, run, toy = cfg.population, cfg.privacy, cfg.reward, cfg.run, cfg.toy
    _check(e, cfg.preset in PRESETS, "preset", f"must be one of {sorted(PRESETS)}")
    _check(e, pop.num_users >= 1, "population.num_users", "must be >= 1")
    _check(e, 1 <= pop.m <= pop.num_users, "population.m", "must satisfy 1 <= m <= num_users")
    _check(e, pop.tau_min > 0, "population.tau_min", "must be positive")
    _check(e, pop.fast_mean >= pop.tau_min, "population.fast_mean", "must be >= tau_min")
    _check(e, pop.slow_mean >= pop.fast_mean, "population.slow_mean", "must be >= fast_mean")
    _check(e, pop.mean_spacing >= 0, "population.mean_spacing", "must be nonnegative")
    _check(e, pop.latency_std >= 0, "population.latency_std", "must be nonnegative")
    _check(e, pop.dirichlet_alpha > 0, "population.dirichlet_alpha", "must be positive")
    _check(e, 0 < pop.dominant_fraction <= 1, "population.dominant_fraction", "must lie in (0, 1]")
    _check(e, pop.total_data >= pop.num_users, "population.total_data", "must give every user at least one sample")
    _check(e, pop.clusters >= 1, "population.clusters", "must be >= 1")
    _check(e, prv.eps_bar > 0 and math.isfinite(prv.eps_bar), "privacy.eps_bar", "must be positive and finite")
    _check(e, prv.eta > 0, "privacy.eta", "must be positive")
    _check(e, prv.clip_bound > 0, "privacy.clip_bound", "must be positive")
    _check(e, rew.alpha >= 0, "reward.alpha", "must be nonnegative")
    _check(e, rew.gamma >= 0, "reward.gamma", "must be nonnegative")
    _check(e, rew.beta > 1, "reward.beta", "must exceed 1")
    _check(e, rew.phi in ("averaged", "clustered"), "reward.phi", "must be 'averaged' or 'clustered'")
    _check(e, rew.rho >= 0, "reward.rho", "must be nonnegative")
    _check(e, rew.delta_tau >= 0, "reward.delta_tau", "must be nonnegative")
    _check(e, cfg.bandit.zeta > 0, "bandit.zeta", "must be positive")
    _check(e, cfg.sa.kappa >= 1, "sa.kappa", "must be >= 1")
    _check(e, cfg.sa.max_iters >= 0, "sa.max_iters", "must be nonnegative (0 selects 50 * num_users)")
    _check(e, cfg.sa.omega > 0, "sa.omega", "must be positive")
    _check(e, run.rounds >= 0, "run.rounds", "must be nonnegative")
    _check(e, len(run.seeds) > 0, "run.seeds", "must list at least one seed")
    _check(e, all(s >= 0 for s in run.seeds), "run.seeds", "seeds must be nonnegative")
    bad = [p for p in run.policies if p not in POLICIES]
    _check(e, not bad, "run.policies", f"unknown policy {bad[0]!r}; expected one of {list(POLICIES)}" if bad else "")
    _check(e, len(run.policies) > 0, "run.policies", "must list at least one policy")
    if "pause_pivot" in run.policies:
        _check(e, rew.phi == "averaged", "run.policies", "pause_pivot requires reward.phi = 'averaged'")
    if run.train and prv.noise:
        # A user picked every round needs eps_at(rounds) > 0 in double precision.
        _check(e, prv.eta * run.rounds < 700, "run.rounds",
               "per-participation budget underflows; keep privacy.eta * rounds below 700 or disable training")
    _check(e, run.workers >= 1, "run.workers", "must be >= 1")
    _check(e, run.window >= 1, "run.window", "must be >= 1")
    _check(e, all(c >= 1 for c in run.checkpoints), "run.checkpoints", "must be positive round counts")
    _check(e, toy.features >= 1, "toy.features", "must be >= 1")
    _check(e, toy.classes >= 2, "toy.classes", "must be >= 2")
    if not pop.iid:
        _check(e, pop.dominant_fraction >= 1 / toy.classes, "population.dominant_fraction",
               "must be at least 1/classes to make one label dominant")
    _check(e, toy.separation >= 0, "toy.separation", "must be nonnegative")
    _check(e, toy.noise > 0, "toy.noise", "must be positive")
    _check(e, toy.lr >= 0, "toy.lr", "must be nonnegative")
    _check(e, toy.init_scale >= 0, "toy.init_scale", "must be nonnegative")
    _check(e, toy.local_epochs >= 1, "toy.local_epochs", "must be >= 1")
    _check(e, toy.batch_size >= 1, "toy.batch_size", "must be >= 1")
    _check(e, toy.validation_size >= 1, "toy.validation_size", "must be >= 1")
    return e


def _line_of(text: str, block: str | None, key: str) -> int | None:
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        header = re.match(r"^\[([A-Za-z_]+)\]", line)
        if header:
            section = header.group(1)
            continue
        if section == block and re.match(rf"^{re.escape(key)}\s*=", line):
            return lineno
    return None


def _coerce(value: Any, default: Any, key: str) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError(f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise TypeError(f"expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise TypeError(f"expected a list, got {value!r}")
        return list(value)
    raise TypeError(f"unsupported value for {key}")


def _apply(cfg: ExperimentConfig, data: dict[str, Any], text: str = "") -> None:
    for name, value in data.items():
        if name in BLOCKS:
            if not isinstance(value, dict):
                raise ConfigError(name, "must be a table", _line_of(text, None, name))
            block = getattr(cfg, name)
            known = {f.name: f for f in dataclasses.fields(block)}
            for key, item in value.items():
                if key not in known:
                    raise ConfigError(f"{name}.{key}", "unknown key", _line_of(text, name, key))
                try:
                    setattr(block, key, _coerce(item, getattr(block, key), key))
                except TypeError as exc:
                    raise ConfigError(f"{name}.{key}", str(exc), _line_of(text, name, key)) from None
        elif name in ("preset", "output"):
            if not isinstance(value, str):
                raise ConfigError(name, "expected a string", _line_of(text, None, name))
            setattr(cfg, name, value)
        else:
            raise ConfigError(name, "unknown key", _line_of(text, None, name))


def from_dict(data: dict[str, Any], text: str = "") -> ExperimentConfig:
    preset = data.get("preset", "small")
    if preset not in PRESETS:
        raise ConfigError("preset", f"must be one of {sorted(PRESETS)}", _line_of(text, None, "preset"))
    cfg = ExperimentConfig(preset=preset)
    _apply(cfg, PRESETS[preset])
    _apply(cfg, data, text)
    errors = validate(cfg)
    if errors:
        key, message = errors[0]
        block, _, leaf = key.rpartition(".")
        raise ConfigError(key, message, _line_of(text, block or None, leaf))
    return cfg


def loads(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = re.search(r"line (\d+)", str(exc))
        raise ConfigError("<file>", f"parse error: {exc}", int(line.group(1)) if line else None) from None
    return from_dict(data, text)


def load_config(path: str | Path) -> ExperimentConfig:
    return loads(Path(path).read_text(encoding="utf-8"))


def to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    return dataclasses.asdict(cfg)


def dumps(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def echo_config(cfg: ExperimentConfig, out_dir: str | Path) -> Path:
    """Write the fully resolved config next to the results."""
    path = Path(out_dir) / "config.toml"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(cfg), encoding="utf-8")
    return path
