"""Simulated-annealing search over user sets.

Vertices are sorted tuples of ``m`` user ids.  Two vertices are adjacent when
they differ in one user and the user that leaves is the minimum-UCB member of
its set (active move) or the mirror image of such a move (passive move).  The
resulting graph is undirected and a subgraph of plain single-swap adjacency,
which ``vanilla_sa_search`` uses as a baseline.  The saving is largest at
vertices holding low-UCB users; near the optimum the minimum-UCB member
ranks low and the neighborhood approaches the full ``m (K - m)`` swaps.

Ties in UCB are broken by user id throughout, so "minimum-UCB member" is
always a single user.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from typing import Callable, Iterator, Sequence

import numpy as np

from pausesim.reward import RewardConfig, Vertex, energy


@dataclass(frozen=True)
class SaParams:
    c: float
    kappa: float = 1.0
    max_iters: int = 1000
    seed: int | None = None

    def __post_init__(self) -> None:
        if not self.c > 0:
            raise ValueError(f"temperature coefficient must be positive, got {self.c}")
        if not self.kappa >= 1:
            raise ValueError(f"kappa must be >= 1, got {self.kappa}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")

    def temperature(self, j: int) -> float:
        return self.c / (self.kappa * math.log1p(j))


def compute_c(ucb: Sequence[float], cfg: RewardConfig, m: int, omega: float = 1e-6) -> float:
    """Temperature coefficient exceeding every energy gap between two vertices.

    The min-UCB term of any vertex lies between the global minimum UCB and the
    ``m``-th largest UCB; the bonus terms add at most their ranges.
    """
    values = np.sort(np.asarray(ucb, dtype=float))
    if len(values) < m:
        raise ValueError(f"need at least m={m} users, got {len(values)}")
    if not np.isfinite(values).all():
        raise ValueError("temperature coefficient needs finite UCB values")
    ranges = cfg.phi_ranges(m)
    spread = values[-m] - values[0]
    return float(spread + cfg.alpha * ranges.delta_phi_g + cfg.gamma * ranges.delta_phi_p + omega)


def compute_c_vanilla(cfg: RewardConfig) -> float:
    return 2 * cfg.alpha + cfg.gamma + 1


def acceptance_probability(e_new: float, e_old: float, temperature: float) -> float:
    """Metropolis rule for maximization: uphill or level moves always pass."""
    if e_new >= e_old:
        return 1.0
    return math.exp(-(e_old - e_new) / temperature)


class UcbOrder:
    """Ascending UCB ranking with id tie-break, shared by the neighbor queries."""

    def __init__(self, ucb: Sequence[float]):
        ucb = np.asarray(ucb, dtype=float)
        self.num_users = len(ucb)
        self.order = np.lexsort((np.arange(self.num_users), ucb))
        self.rank = np.empty(self.num_users, dtype=np.int64)
        self.rank[self.order] = np.arange(self.num_users)

    def lowest(self, members: Sequence[int]) -> tuple[int, int | None]:
        """Lowest- and second-lowest-ranked members."""
        ranked = sorted(members, key=lambda k: self.rank[k])
        return ranked[0], (ranked[1] if len(ranked) > 1 else None)


def _swap(v: Vertex, out: int, new: int) -> Vertex:
    return tuple(sorted([k for k in v if k != out] + [new]))


def active_neighbors(v: Vertex, ucb: Sequence[float]) -> list[Vertex]:
    """Vertices reached by replacing the minimum-UCB member of ``v`` with an outsider."""
    rank = UcbOrder(ucb)
    a, _ = rank.lowest(v)
    inside = set(v)
    return [_swap(v, a, x) for x in range(rank.num_users) if x not in inside]


def passive_neighbors(v: Vertex, ucb: Sequence[float]) -> list[Vertex]:
    """Vertices ``u`` for which ``v`` is an active neighbor."""
    rank = UcbOrder(ucb)
    if len(v) == rank.num_users:
        return []
    a, b = rank.lowest(v)
    inside = set(v)
    outsiders = [x for x in range(rank.num_users) if x not in inside]
    found: set[Vertex] = set()
    for y in v:
        if y == a:
            continue
        found.update(_swap(v, y, x) for x in outsiders if rank.rank[x] < rank.rank[a])
    if b is None:
        # A lone member is always the minimum, so every outsider reaches v.
        found.update(_swap(v, a, x) for x in outsiders)
    else:
        found.update(_swap(v, a, x) for x in outsiders if rank.rank[x] < rank.rank[b])
    return sorted(found)


def neighbors(v: Vertex, ucb: Sequence[float]) -> list[Vertex]:
    return sorted(set(active_neighbors(v, ucb)) | set(passive_neighbors(v, ucb)))


def dense_neighbors(v: Vertex, num_users: int) -> list[Vertex]:
    inside = set(v)
    return [_swap(v, y, x) for y in v for x in range(num_users) if x not in inside]


# The search loops enumerate each neighborhood explicitly as a list of
# (leaving user, entering user) swaps, so the per-iteration cost tracks the
# neighborhood size; only the sampled swap is turned into a vertex.

Swap = tuple[int, int]


def _tailored_swaps(current: Vertex, inside: set[int], order: list[int], rank: list[int]) -> list[Swap]:
    a = min(current, key=rank.__getitem__)
    below_a = order[: rank[a]]  # every user ranked below a is an outsider
    # Replacing a by anyone below the second-lowest member is already an
    # active move, so the deduplicated union is: active + "anyone below a".
    swaps = [(a, x) for x in order if x not in inside]
    swaps += [(y, x) for y in current if y != a for x in below_a]
    return swaps


def _dense_swaps(current: Vertex, inside: set[int], num_users: int) -> list[Swap]:
    outsiders = [x for x in range(num_users) if x not in inside]
    return [(y, x) for y in current for x in outsiders]


def _anneal(
    objective: Callable[[Vertex], float],
    swaps: Callable[[Vertex, set[int]], list[Swap]],
    params: SaParams,
    initial: Vertex,
    rng: np.random.Generator,
) -> Iterator[tuple[Vertex, float]]:
    current = tuple(sorted(initial))
    current_e = objective(current)
    inside = set(current)
    yield current, current_e
    for j in range(1, params.max_iters + 1):
        options = swaps(current, inside)
        if not options:
            return
        out, new = options[int(rng.integers(len(options)))]
        candidate = _swap(current, out, new)
        cand_e = objective(candidate)
        if cand_e >= current_e or rng.random() <= acceptance_probability(
            cand_e, current_e, params.temperature(j)
        ):
            current, current_e = candidate, cand_e
            inside.discard(out)
            inside.add(new)
        yield current, current_e


def _cached(fn: Callable[[Vertex], float]) -> Callable[[Vertex], float]:
    cache: dict[Vertex, float] = {}

    def wrapped(v: Vertex) -> float:
        value = cache.get(v)
        if value is None:
            value = cache[v] = fn(v)
        return value

    return wrapped


def _energy_fn(ucb, g_values, p_values, cfg: RewardConfig) -> Callable[[Vertex], float]:
    ucb, g, p = list(map(float, ucb)), list(map(float, g_values)), list(map(float, p_values))
    return _cached(lambda v: energy(v, ucb, g, p, cfg))


def anneal_path(
    ucb,
    g_values,
    p_values,
    cfg: RewardConfig,
    params: SaParams,
    initial: Vertex,
    dense: bool = False,
    rng: np.random.Generator | None = None,
) -> Iterator[tuple[Vertex, float]]:
    """The chain ``V_1, V_2, ...`` with energies, for inspection and tests."""
    rng = np.random.default_rng(params.seed) if rng is None else rng
    num_users = len(ucb)
    if dense:
        swaps = partial(_dense_swaps, num_users=num_users)
    else:
        ranking = UcbOrder(ucb)
        swaps = partial(_tailored_swaps, order=ranking.order.tolist(), rank=ranking.rank.tolist())
    return _anneal(_energy_fn(ucb, g_values, p_values, cfg), swaps, params, initial, rng)


def _best_visited(path: Iterator[tuple[Vertex, float]]) -> Vertex:
    best, best_e = next(path)
    for v, e in path:
        if e > best_e:
            best, best_e = v, e
    return best


def sa_search(
    ucb,
    g_values,
    p_values,
    cfg: RewardConfig,
    params: SaParams,
    initial: Vertex,
    rng: np.random.Generator | None = None,
) -> Vertex:
    """Best vertex visited by ``params.max_iters`` annealing steps on the sparse graph."""
    return _best_visited(anneal_path(ucb, g_values, p_values, cfg, params, initial, False, rng))


def vanilla_sa_search(
    ucb,
    g_values,
    p_values,
    cfg: RewardConfig,
    params: SaParams,
    initial: Vertex,
    rng: np.random.Generator | None = None,
) -> Vertex:
    """Same search over plain single-swap adjacency (``m (K - m)`` neighbors per vertex)."""
    return _best_visited(anneal_path(ucb, g_values, p_values, cfg, params, initial, True, rng))


def random_vertex(num_users: int, m: int, rng: np.random.Generator) -> Vertex:
    return tuple(sorted(int(k) for k in rng.choice(num_users, size=m, replace=False)))
