"""Per-participation privacy budgets, leakage accounting and the Laplace mechanism.

Every time a user uploads an update it is perturbed at the budget
``eps_at(i)`` where ``i`` counts that user's participations so far.  The
budgets form a geometric series whose total is ``eps_bar``, so cumulative
leakage under sequential composition stays strictly below ``eps_bar`` no
matter how many rounds are run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np


@dataclass(frozen=True)
class PrivacySchedule:
    """Geometric budget sequence ``eps_i = eps_bar (e^eta - 1) e^{-eta i}``."""

    eps_bar: float
    eta: float = 0.05

    def __post_init__(self) -> None:
        if not (self.eps_bar > 0 and math.isfinite(self.eps_bar)):
            raise ValueError(f"eps_bar must be positive and finite, got {self.eps_bar}")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ValueError(f"eta must be positive and finite, got {self.eta}")

    def eps_at(self, i: int) -> float:
        """Budget spent on a user's ``i``-th participation (``i >= 1``)."""
        if i < 1:
            raise ValueError(f"participation index must be >= 1, got {i}")
        return self.eps_bar * math.expm1(self.eta) * math.exp(-self.eta * i)

    def partial_sum(self, n: int) -> float:
        """Closed form of ``sum_{i=1..n} eps_at(i)``, i.e. ``eps_bar (1 - e^{-eta n})``."""
        if n < 0:
            raise ValueError(f"n must be nonnegative, got {n}")
        return -self.eps_bar * math.expm1(-self.eta * n)

    def remaining(self, n: int) -> float:
        """Budget left after ``n`` participations, ``eps_bar e^{-eta n}``."""
        return self.eps_bar * math.exp(-self.eta * n)

    def exact_partial_sum(self, n: int) -> mpmath.mpf:
        """High-precision partial sum.

        Working precision grows with ``eta * n`` so that ``e^{-eta n}`` is
        still resolved next to ``eps_bar``; the float version saturates at
        ``eps_bar`` once ``eta * n`` exceeds roughly 37.
        """
        digits = int(self.eta * n / math.log(10)) + 30
        with mpmath.workdps(digits):
            eta = mpmath.mpf(self.eta)
            return mpmath.mpf(self.eps_bar) * (1 - mpmath.exp(-eta * n))


@dataclass
class LeakageLedger:
    """Per-user participation counts and the leakage they imply.

    Only the integer counts are stored; spent budget is derived from them in
    closed form so it never drifts from the schedule.
    """

    schedule: PrivacySchedule
    participation: np.ndarray = field(repr=False)

    @classmethod
    def fresh(cls, schedule: PrivacySchedule, num_users: int) -> "LeakageLedger":
        return cls(schedule, np.zeros(num_users, dtype=np.int64))

    @property
    def num_users(self) -> int:
        return len(self.participation)

    @property
    def spent(self) -> np.ndarray:
        return -self.schedule.eps_bar * np.expm1(-self.schedule.eta * self.participation)

    def charge(self, k: int) -> float:
        """Record one more upload from user ``k``; return the budget it must use."""
        self.participation[k] += 1
        return self.schedule.eps_at(int(self.participation[k]))

    def max_spent(self) -> float:
        if self.num_users == 0:
            return 0.0
        return self.schedule.partial_sum(int(self.participation.max()))

    def exact_max_spent(self) -> mpmath.mpf:
        return self.schedule.exact_partial_sum(int(self.participation.max(initial=0)))


def clip_l1(update: np.ndarray, bound: float) -> np.ndarray:
    """Scale ``update`` down so its L1 norm is at most ``bound``."""
    if bound <= 0:
        raise ValueError(f"clip bound must be positive, got {bound}")
    update = np.asarray(update, dtype=float)
    norm = np.abs(update).sum()
    if norm <= bound:
        return update.copy()
    return update * (bound / norm)


def laplace_scale(sensitivity: float, eps: float) -> float:
    if not sensitivity > 0:
        raise ValueError(f"sensitivity must be positive, got {sensitivity}")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return sensitivity / eps


def privatize_update(
    update: np.ndarray,
    sensitivity: float,
    eps: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Laplace mechanism: add i.i.d. ``Laplace(0, sensitivity / eps)`` noise."""
    scale = laplace_scale(sensitivity, eps)
    update = np.asarray(update, dtype=float)
    return update + rng.laplace(0.0, scale, size=update.shape)
