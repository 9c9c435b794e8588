"""Ground-truth scenarios and batched Bernoulli sampling.

A scenario fixes, for every day ``t = 1..horizon``, the success probability of
each arm and the number of customers arriving that day. Days are 1-based.
Sampling a day draws the per-arm impressions from a single multinomial over
the day's allocation, then the successes from independent binomials.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError, ContractViolation

PROB_TOL = 1e-12

SCHEDULE_KINDS = ("constant", "piecewise", "sinusoid", "table")


# ----------------------------------------------------------------------------
# Schedules
# ----------------------------------------------------------------------------


def _number(value, field_name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", field=field_name)
    return float(value)


def _evaluate_schedule(sched: Mapping[str, Any], horizon: int, where: str) -> np.ndarray:
    """Return the schedule's values on days 1..horizon as a float array."""
    if not isinstance(sched, Mapping):
        raise ConfigError("schedule must be a mapping", field=where)
    kind = sched.get("kind")
    if kind not in SCHEDULE_KINDS:
        raise ConfigError(
            f"unknown schedule kind {kind!r}; expected one of {', '.join(SCHEDULE_KINDS)}",
            field=f"{where}.kind",
        )
    days = np.arange(1, horizon + 1, dtype=np.float64)

    if kind == "constant":
        if "value" not in sched:
            raise ConfigError("missing value", field=f"{where}.value")
        return np.full(horizon, _number(sched["value"], f"{where}.value"))

    if kind == "piecewise":
        breaks = sched.get("breaks")
        values = sched.get("values")
        if not isinstance(breaks, list) or not isinstance(values, list):
            raise ConfigError("piecewise needs lists 'breaks' and 'values'", field=where)
        if len(values) != len(breaks) + 1:
            raise ConfigError(
                "piecewise needs exactly one more value than breaks", field=f"{where}.values"
            )
        for b in breaks:
            if isinstance(b, bool) or not isinstance(b, int) or b < 2:
                raise ConfigError(f"break days must be integers >= 2, got {b!r}", field=f"{where}.breaks")
        if any(b2 <= b1 for b1, b2 in zip(breaks, breaks[1:])):
            raise ConfigError("break days must be strictly increasing", field=f"{where}.breaks")
        vals = [_number(v, f"{where}.values") for v in values]
        # a break day is the first day of the new segment
        segment = np.searchsorted(np.asarray(breaks), days, side="right")
        return np.asarray(vals)[segment]

    if kind == "sinusoid":
        base = _number(sched.get("base"), f"{where}.base")
        amplitude = _number(sched.get("amplitude", 0.0), f"{where}.amplitude")
        period = _number(sched.get("period"), f"{where}.period")
        phase = _number(sched.get("phase", 0.0), f"{where}.phase")
        if period <= 0:
            raise ConfigError("period must be positive", field=f"{where}.period")
        return np.array([base + amplitude * math.sin(2.0 * math.pi * t / period + phase) for t in range(1, horizon + 1)])

    values = sched.get("values")
    if not isinstance(values, list):
        raise ConfigError("table needs a list 'values'", field=f"{where}.values")
    if len(values) < horizon:
        raise ConfigError(
            f"table has {len(values)} values but horizon is {horizon}", field=f"{where}.values"
        )
    return np.array([_number(v, f"{where}.values") for v in values[:horizon]])


# ----------------------------------------------------------------------------
# Scenario
# ----------------------------------------------------------------------------


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True, eq=False)
class Scenario:
    """Hidden ground truth for one experiment.

    Build instances with :meth:`from_config`; the config mapping is kept so
    the scenario can be serialized and hashed.
    """

    name: str
    k: int
    horizon: int
    means: np.ndarray = field(repr=False)
    traffic: np.ndarray = field(repr=False)
    config: dict = field(repr=False)

    @classmethod
    def from_config(cls, config: Mapping[str, Any], name: str | None = None) -> "Scenario":
        if not isinstance(config, Mapping):
            raise ConfigError("scenario must be a mapping", field="scenario")
        cfg = copy.deepcopy(dict(config))
        k = cfg.get("k")
        horizon = cfg.get("horizon")
        if isinstance(k, bool) or not isinstance(k, int) or k < 2:
            raise ConfigError(f"k must be an integer >= 2, got {k!r}", field="k")
        if isinstance(horizon, bool) or not isinstance(horizon, int) or horizon < 1:
            raise ConfigError(f"horizon must be an integer >= 1, got {horizon!r}", field="horizon")

        arms = cfg.get("arms")
        if not isinstance(arms, list) or len(arms) != k:
            raise ConfigError(f"arms must be a list of {k} entries", field="arms")
        columns = []
        for i, arm in enumerate(arms):
            where = f"arms[{i}]"
            if not isinstance(arm, Mapping) or "schedule" not in arm:
                raise ConfigError("arm entry needs a 'schedule'", field=where)
            col = _evaluate_schedule(arm["schedule"], horizon, f"{where}.schedule")
            if np.any(~np.isfinite(col)) or np.any(col < 0.0) or np.any(col > 1.0):
                bad = int(np.flatnonzero((col < 0.0) | (col > 1.0) | ~np.isfinite(col))[0]) + 1
                raise ConfigError(f"mean on day {bad} is outside [0, 1]", field=f"{where}.schedule")
            columns.append(col)
        means = np.column_stack(columns)

        traffic_cfg = cfg.get("traffic")
        if isinstance(traffic_cfg, list):
            if len(traffic_cfg) < horizon:
                raise ConfigError(
                    f"traffic list has {len(traffic_cfg)} entries but horizon is {horizon}",
                    field="traffic",
                )
            raw = traffic_cfg[:horizon]
        else:
            raw = [traffic_cfg] * horizon
        for v in raw:
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"daily traffic must be a positive integer, got {v!r}", field="traffic")
        traffic = np.asarray(raw, dtype=np.int64)

        means.setflags(write=False)
        traffic.setflags(write=False)
        scenario_name = name or cfg.get("name") or "custom"
        return cls(str(scenario_name), k, horizon, means, traffic, cfg)

    @classmethod
    def stationary(cls, means, traffic: int, horizon: int, name: str = "stationary") -> "Scenario":
        return cls.from_config(
            {
                "name": name,
                "k": len(means),
                "horizon": horizon,
                "traffic": traffic,
                "arms": [{"schedule": {"kind": "constant", "value": float(m)}} for m in means],
            }
        )

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(_canonical_json(self.config).encode()).hexdigest()[:16]

    def means_at(self, day: int) -> np.ndarray:
        return means_at(self, day)

    def traffic_at(self, day: int) -> int:
        _check_day(self, day)
        return int(self.traffic[day - 1])

    def cumulative_gains(self, upto: int | None = None) -> np.ndarray:
        """True cumulative gain of every arm through ``upto`` (default: horizon)."""
        t = self.horizon if upto is None else upto
        _check_day(self, t)
        return self.traffic[:t].astype(np.float64) @ self.means[:t]


def _check_day(scenario: Scenario, day: int) -> None:
    if not 1 <= day <= scenario.horizon:
        raise IndexError(f"day {day} outside 1..{scenario.horizon}")


def means_at(scenario: Scenario, day: int) -> np.ndarray:
    _check_day(scenario, day)
    return scenario.means[day - 1].copy()


# ----------------------------------------------------------------------------
# Allocation and sampling
# ----------------------------------------------------------------------------


class Allocation:
    """A sampling distribution over arms for one day."""

    __slots__ = ("probs",)

    def __init__(self, probs):
        p = np.array(probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ContractViolation("allocation must be a non-empty vector")
        if np.any(~np.isfinite(p)) or np.any(p < 0.0):
            raise ContractViolation(f"allocation has negative or non-finite entries: {p.tolist()}")
        if abs(p.sum() - 1.0) > PROB_TOL:
            raise ContractViolation(f"allocation sums to {p.sum()!r}, not 1")
        p.setflags(write=False)
        self.probs = p

    @property
    def k(self) -> int:
        return self.probs.size

    @property
    def support(self) -> frozenset[int]:
        return frozenset(int(i) for i in np.flatnonzero(self.probs > 0.0))

    def __eq__(self, other):
        return isinstance(other, Allocation) and np.array_equal(self.probs, other.probs)

    def __repr__(self):
        return f"Allocation({self.probs.tolist()})"


@dataclass(frozen=True, eq=False)
class DayObservation:
    day: int
    impressions: np.ndarray
    successes: np.ndarray
    allocation: Allocation

    @property
    def traffic(self) -> int:
        return int(self.impressions.sum())

    def __eq__(self, other):
        return (
            isinstance(other, DayObservation)
            and self.day == other.day
            and np.array_equal(self.impressions, other.impressions)
            and np.array_equal(self.successes, other.successes)
            and self.allocation == other.allocation
        )


def _as_allocation(alloc) -> Allocation:
    return alloc if isinstance(alloc, Allocation) else Allocation(alloc)


def allocate_traffic(n_t: int, alloc, rng: np.random.Generator) -> np.ndarray:
    """Split ``n_t`` customers across arms with one multinomial draw."""
    if isinstance(n_t, bool) or int(n_t) != n_t or n_t < 1:
        raise ContractViolation(f"daily traffic must be a positive integer, got {n_t!r}")
    alloc = _as_allocation(alloc)
    return rng.multinomial(int(n_t), alloc.probs).astype(np.int64)


def sample_day(scenario: Scenario, day: int, alloc, rng: np.random.Generator) -> DayObservation:
    alloc = _as_allocation(alloc)
    if alloc.k != scenario.k:
        raise ContractViolation(f"allocation has {alloc.k} arms, scenario has {scenario.k}")
    mu = means_at(scenario, day)
    impressions = allocate_traffic(scenario.traffic_at(day), alloc, rng)
    successes = rng.binomial(impressions, mu).astype(np.int64)
    return DayObservation(day, impressions, successes, alloc)
