"""Inverse-probability-weighted cumulative gain and its always-valid radius.

The cumulative gain of an arm is the total expected reward it would have
collected had every customer been shown that arm. Its IPW estimate adds
``r / p`` each day the arm was eligible. Pairs of arms are compared through
a mixture-martingale confidence radius that is valid uniformly over days,
so the comparison can be repeated every day without inflating error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import DayObservation
from .errors import ContractViolation, SequencingError, UndefinedValueError, UsageError


@dataclass(frozen=True)
class RadiusParams:
    rho: float = 1.0
    delta: float = 0.1

    def __post_init__(self):
        if not self.rho > 0:
            raise ContractViolation(f"rho must be positive, got {self.rho!r}")
        if not 0.0 < self.delta < 1.0:
            raise ContractViolation(f"delta must lie in (0, 1), got {self.delta!r}")

    def with_delta(self, delta: float) -> "RadiusParams":
        return RadiusParams(self.rho, delta)


@dataclass(frozen=True, eq=False)
class GainState:
    """Running IPW gains plus the full per-day history.

    ``probs``, ``impressions`` and ``successes`` are ``(day, k)`` arrays;
    ``traffic`` holds the day totals. Treat instances as immutable values.
    """

    gains: np.ndarray
    traffic: np.ndarray
    probs: np.ndarray
    impressions: np.ndarray
    successes: np.ndarray

    @classmethod
    def initial(cls, k: int) -> "GainState":
        if k < 1:
            raise UsageError("need at least one arm")
        return cls(
            gains=np.zeros(k),
            traffic=np.zeros(0, dtype=np.int64),
            probs=np.zeros((0, k)),
            impressions=np.zeros((0, k), dtype=np.int64),
            successes=np.zeros((0, k), dtype=np.int64),
        )

    @property
    def k(self) -> int:
        return self.gains.size

    @property
    def day(self) -> int:
        return self.traffic.size

    @property
    def daily_means(self) -> np.ndarray:
        """Per-day empirical means, NaN where an arm had no impressions."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.impressions > 0, self.successes / self.impressions, np.nan)

    def _check_arm(self, i: int) -> None:
        if not 0 <= i < self.k:
            raise UsageError(f"arm {i} outside 0..{self.k - 1}")


def update_gain(state: GainState, obs: DayObservation) -> GainState:
    if obs.day != state.day + 1:
        raise SequencingError(f"expected day {state.day + 1}, got day {obs.day}")
    p = obs.allocation.probs
    r = np.asarray(obs.successes, dtype=np.int64)
    n = np.asarray(obs.impressions, dtype=np.int64)
    if p.size != state.k or r.size != state.k or n.size != state.k:
        raise ContractViolation("observation arm count does not match the gain state")
    if np.any((p == 0.0) & ((r > 0) | (n > 0))):
        raise ContractViolation("arm with zero allocation probability has impressions or rewards")
    if np.any(r < 0) or np.any(r > n):
        raise ContractViolation("successes must lie in [0, impressions]")

    live = p > 0.0
    gains = state.gains.copy()
    gains[live] = gains[live] + r[live] / p[live]
    return GainState(
        gains=gains,
        traffic=np.append(state.traffic, n.sum()),
        probs=np.vstack([state.probs, p]),
        impressions=np.vstack([state.impressions, n]),
        successes=np.vstack([state.successes, r]),
    )


def _variance_terms(state: GainState, i: int) -> np.ndarray:
    """Per-day ``mu_hat (1 - mu_hat) / p`` for one arm; zero where undefined."""
    n = state.impressions[:, i]
    p = state.probs[:, i]
    out = np.zeros(state.day)
    ok = (n > 0) & (p > 0.0)
    mu = state.successes[ok, i] / n[ok]
    out[ok] = mu * (1.0 - mu) / p[ok]
    return out


def pair_variance(state: GainState, i: int, j: int) -> float:
    """Plug-in variance of the IPW gain difference between arms ``i`` and ``j``.

    Only days on which both arms were eligible contribute. The sum is
    correctly rounded (``math.fsum``) so it does not depend on summation order.
    """
    if i == j:
        raise UsageError("pair_variance needs two distinct arms")
    state._check_arm(i)
    state._check_arm(j)
    both = (state.probs[:, i] > 0.0) & (state.probs[:, j] > 0.0)
    per_day = state.traffic * (_variance_terms(state, i) + _variance_terms(state, j))
    return math.fsum(per_day[both])


def confidence_radius(variance: float, rho: float = 1.0, delta: float = 0.1) -> float:
    """``sqrt((V + rho) * log((V + rho) / (rho * delta**2)))``.

    ``delta = 1`` is accepted and gives a zero radius at ``V = 0``.
    """
    if not variance >= 0.0:
        raise ContractViolation(f"variance must be non-negative, got {variance!r}")
    if not rho > 0.0:
        raise ContractViolation(f"rho must be positive, got {rho!r}")
    if not 0.0 < delta <= 1.0:
        raise ContractViolation(f"delta must lie in (0, 1], got {delta!r}")
    s = variance + rho
    return math.sqrt(s * math.log(s / (rho * delta**2)))


def pair_radius(state: GainState, i: int, j: int, params: RadiusParams) -> float:
    return confidence_radius(pair_variance(state, i, j), params.rho, params.delta)


def should_eliminate(state: GainState, i: int, j: int, params: RadiusParams) -> bool:
    """True when arm ``i`` beats arm ``j`` by more than the pair's radius."""
    if i == j:
        raise UsageError("should_eliminate needs two distinct arms")
    phi = pair_radius(state, i, j, params)
    return bool(state.gains[i] - state.gains[j] - phi > 0.0)


def running_empirical_mean(state: GainState, i: int, upto: int | None = None) -> float:
    """Pooled success rate of arm ``i`` over days ``1..upto``."""
    state._check_arm(i)
    t = state.day if upto is None else upto
    n = int(state.impressions[:t, i].sum())
    if n == 0:
        raise UndefinedValueError(f"arm {i} has no impressions through day {t}")
    return int(state.successes[:t, i].sum()) / n


def recompute_gains(state: GainState) -> np.ndarray:
    """Rebuild the gain vector from history by a sequential fold."""
    gains = np.zeros(state.k)
    for s in range(state.day):
        for i in range(state.k):
            p = state.probs[s, i]
            if p > 0.0:
                gains[i] = gains[i] + state.successes[s, i] / p
    return gains
