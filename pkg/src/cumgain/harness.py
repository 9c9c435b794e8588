"""Experiment runs, traces, counterfactual metrics and seed sweeps."""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from sklearn.base import clone

from .env import Allocation, DayObservation, Scenario, sample_day
from .errors import ContractViolation, IntegrityError, UsageError
from .estimation import GainState, confidence_radius, pair_variance, recompute_gains, update_gain
from .policies import _Policy, make_policy

TRACE_FORMAT = "cumgain-trace/1"

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seeds(master_seed: int, count: int) -> list[int]:
    """Per-run seeds: ``splitmix64(master_seed + index * golden_gamma)``.

    ``index`` runs from 0; the result depends only on integer arithmetic
    modulo 2**64, so it is identical on every platform.
    """
    if not 0 <= master_seed <= MASK64:
        raise UsageError(f"master seed must fit in 64 unsigned bits, got {master_seed}")
    if count < 1:
        raise UsageError("need at least one seed")
    return [splitmix64((master_seed + i * 0x9E3779B97F4A7C15) & MASK64) for i in range(count)]


# ----------------------------------------------------------------------------
# Trace
# ----------------------------------------------------------------------------


@dataclass(eq=False)
class Trace:
    """Complete per-day record of one run.

    ``active[t]`` is the set the policy allocated over on day ``t + 1``;
    ``gains[t]`` is the IPW gain vector after folding in that day.
    """

    scenario_name: str
    scenario_hash: str
    scenario_config: dict
    policy: dict
    seed: int
    probs: np.ndarray
    impressions: np.ndarray
    successes: np.ndarray
    gains: np.ndarray
    active: np.ndarray
    status: str
    winner: int | None
    final_active: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.probs.shape[1]

    @property
    def stopping_day(self) -> int:
        return self.probs.shape[0]

    @property
    def traffic(self) -> np.ndarray:
        return self.impressions.sum(axis=1)

    @property
    def realized_reward(self) -> int:
        return int(self.successes.sum())

    def observations(self) -> list[DayObservation]:
        return [
            DayObservation(t + 1, self.impressions[t].copy(), self.successes[t].copy(), Allocation(self.probs[t]))
            for t in range(self.stopping_day)
        ]

    def gain_state(self, upto: int | None = None) -> GainState:
        gs = GainState.initial(self.k)
        for obs in self.observations()[:upto]:
            gs = update_gain(gs, obs)
        return gs

    def metadata(self) -> dict:
        return {
            "format": TRACE_FORMAT,
            "scenario": {"name": self.scenario_name, "hash": self.scenario_hash, "config": self.scenario_config},
            "policy": self.policy,
            "seed": self.seed,
            "k": self.k,
            "status": self.status,
            "winner": self.winner,
            "stopping_day": self.stopping_day,
            "final_active": list(self.final_active),
            "realized_reward": self.realized_reward,
        }


def trace_from_observations(
    observations: Sequence[DayObservation],
    scenario: Scenario | None = None,
    policy: Mapping[str, Any] | None = None,
    seed: int = 0,
) -> Trace:
    """Wrap externally produced observations (logged or scripted) in a trace."""
    if not observations:
        raise UsageError("need at least one observation")
    k = len(observations[0].impressions)
    gs = GainState.initial(k)
    gains = []
    for obs in observations:
        gs = update_gain(gs, obs)
        gains.append(gs.gains)
    probs = np.array([obs.allocation.probs for obs in observations])
    return Trace(
        scenario_name=scenario.name if scenario else "external",
        scenario_hash=scenario.config_hash if scenario else "",
        scenario_config=scenario.config if scenario else {},
        policy=dict(policy or {"name": "external"}),
        seed=seed,
        probs=probs,
        impressions=np.array([obs.impressions for obs in observations], dtype=np.int64),
        successes=np.array([obs.successes for obs in observations], dtype=np.int64),
        gains=np.array(gains),
        active=probs > 0.0,
        status="inconclusive",
        winner=None,
        final_active=list(range(k)),
    )


def verify_trace(trace: Trace) -> None:
    """Raise :class:`IntegrityError` unless the trace is internally consistent."""
    shapes = {a.shape for a in (trace.probs, trace.impressions, trace.successes, trace.gains, trace.active)}
    if len(shapes) != 1:
        raise IntegrityError(f"per-day arrays disagree in shape: {sorted(shapes)}")
    if trace.stopping_day < 1:
        raise IntegrityError("trace has no days")
    try:
        gs = trace.gain_state()
    except ContractViolation as exc:
        raise IntegrityError(f"trace observations are invalid: {exc}") from exc
    if not np.array_equal(recompute_gains(gs), trace.gains[-1]):
        raise IntegrityError("recorded gains differ from recomputation")
    running = GainState.initial(trace.k)
    for t, obs in enumerate(trace.observations()):
        running = update_gain(running, obs)
        if not np.array_equal(running.gains, trace.gains[t]):
            raise IntegrityError(f"recorded gains on day {t + 1} differ from recomputation")
    if trace.policy.get("name") == "secg":
        support = trace.probs > 0.0
        if not np.array_equal(support, trace.active):
            raise IntegrityError("allocation support differs from the recorded active set")
        if np.any(trace.active[1:] & ~trace.active[:-1]):
            raise IntegrityError("an eliminated arm re-entered the active set")


# ----------------------------------------------------------------------------
# Running experiments
# ----------------------------------------------------------------------------


def _policy_from(policy_config) -> _Policy:
    if isinstance(policy_config, _Policy):
        return clone(policy_config)
    return make_policy(policy_config)


def run_experiment(scenario: Scenario, policy_config: Mapping[str, Any] | _Policy, seed: int) -> Trace:
    """Run the day loop until the policy stops or the horizon is reached."""
    policy = _policy_from(policy_config).start(scenario.k)
    rng = np.random.default_rng(seed)
    gs = GainState.initial(scenario.k)
    probs, impressions, successes, gains, active = [], [], [], [], []

    for day in range(1, scenario.horizon + 1):
        act = np.zeros(scenario.k, dtype=bool)
        act[sorted(policy.active_)] = True
        alloc = policy.allocate(rng)
        obs = sample_day(scenario, day, alloc, rng)
        policy.partial_fit(obs)
        gs = update_gain(gs, obs)
        probs.append(alloc.probs)
        impressions.append(obs.impressions)
        successes.append(obs.successes)
        gains.append(gs.gains)
        active.append(act)
        if policy.finished:
            break

    winner = policy.winner_
    return Trace(
        scenario_name=scenario.name,
        scenario_hash=scenario.config_hash,
        scenario_config=scenario.config,
        policy=policy.to_config(),
        seed=int(seed),
        probs=np.array(probs),
        impressions=np.array(impressions, dtype=np.int64),
        successes=np.array(successes, dtype=np.int64),
        gains=np.array(gains),
        active=np.array(active, dtype=bool),
        status="winner" if winner is not None else "inconclusive",
        winner=winner,
        final_active=sorted(int(i) for i in policy.active_),
    )


# ----------------------------------------------------------------------------
# Metrics
# ----------------------------------------------------------------------------


@dataclass
class RunMetrics:
    seed: int
    horizon: int
    true_gains: list
    counterfactual_best: int
    stopping_day: int
    stopping_impressions: int
    expected_reward: float
    realized_reward: int
    regret: float
    gaps: list
    winner: int | None
    correct: bool | None
    coverage_violation: bool


def coverage_violation(trace: Trace, scenario: Scenario, delta: float = 0.1, rho: float = 1.0) -> bool:
    """Did any pair's gain-difference estimate leave its radius on any day?

    A pair is checked on day ``t`` only while both arms had positive
    probability on every day so far, since the estimate of an arm frozen by
    elimination no longer tracks its true gain.
    """
    k = trace.k
    true_cum = np.cumsum(scenario.traffic[: trace.stopping_day, None] * scenario.means[: trace.stopping_day], axis=0)
    eligible = np.logical_and.accumulate(trace.probs > 0.0, axis=0)
    gs = GainState.initial(k)
    for t, obs in enumerate(trace.observations()):
        gs = update_gain(gs, obs)
        for i in range(k):
            for j in range(i + 1, k):
                if not (eligible[t, i] and eligible[t, j]):
                    continue
                err = (gs.gains[i] - gs.gains[j]) - (true_cum[t, i] - true_cum[t, j])
                if abs(err) >= confidence_radius(pair_variance(gs, i, j), rho, delta):
                    return True
    return False


def compute_metrics(trace: Trace, scenario: Scenario) -> RunMetrics:
    if trace.scenario_hash != scenario.config_hash:
        raise IntegrityError(
            f"trace was generated from scenario {trace.scenario_hash}, not {scenario.config_hash}"
        )
    if trace.k != scenario.k or trace.stopping_day > scenario.horizon:
        raise IntegrityError("trace shape does not fit the scenario")
    s = trace.stopping_day
    true_gains = scenario.cumulative_gains()
    best = int(np.argmax(true_gains))
    gains_at_stop = scenario.cumulative_gains(s)
    expected_reward = float(np.sum(trace.impressions * scenario.means[:s]))
    total_traffic = float(scenario.traffic.sum())
    policy = trace.policy
    return RunMetrics(
        seed=trace.seed,
        horizon=scenario.horizon,
        true_gains=true_gains.tolist(),
        counterfactual_best=best,
        stopping_day=s,
        stopping_impressions=int(trace.impressions.sum()),
        expected_reward=expected_reward,
        realized_reward=trace.realized_reward,
        regret=float(gains_at_stop.max()) - expected_reward,
        gaps=((true_gains[best] - true_gains) / total_traffic).tolist(),
        winner=trace.winner,
        correct=None if trace.winner is None else trace.winner == best,
        coverage_violation=coverage_violation(trace, scenario, policy.get("delta", 0.1), policy.get("rho", 1.0)),
    )


# ----------------------------------------------------------------------------
# Simpson's paradox and the classical test
# ----------------------------------------------------------------------------


@dataclass
class SimpsonReport:
    pair: tuple
    paradox_days: list
    skipped_days: list
    evaluated_days: int

    @property
    def fraction(self) -> float:
        return len(self.paradox_days) / self.evaluated_days if self.evaluated_days else 0.0


def detect_simpsons(trace: Trace) -> dict[tuple, SimpsonReport]:
    """Days on which the daily ordering of a pair contradicts the pooled one.

    Days where either arm has no impressions that day (or none so far) are
    skipped. Returns one report per unordered pair ``(i, j)``, ``i < j``.
    """
    n = trace.impressions
    r = trace.successes
    cum_n = np.cumsum(n, axis=0)
    cum_r = np.cumsum(r, axis=0)
    reports = {}
    for i in range(trace.k):
        for j in range(i + 1, trace.k):
            paradox, skipped = [], []
            for t in range(trace.stopping_day):
                if n[t, i] == 0 or n[t, j] == 0 or cum_n[t, i] == 0 or cum_n[t, j] == 0:
                    skipped.append(t + 1)
                    continue
                daily = np.sign(r[t, i] / n[t, i] - r[t, j] / n[t, j])
                pooled = np.sign(cum_r[t, i] / cum_n[t, i] - cum_r[t, j] / cum_n[t, j])
                if daily * pooled < 0:
                    paradox.append(t + 1)
            reports[(i, j)] = SimpsonReport((i, j), paradox, skipped, trace.stopping_day - len(skipped))
    return reports


def two_sample_z_test(r1: int, n1: int, r2: int, n2: int) -> float:
    """Two-sided pooled two-proportion z-test p-value."""
    if n1 <= 0 or n2 <= 0:
        raise UsageError("both samples need at least one trial")
    pooled = (r1 + r2) / (n1 + n2)
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2))
    if se == 0.0:
        return 1.0
    z = (r1 / n1 - r2 / n2) / se
    return math.erfc(abs(z) / math.sqrt(2.0))


# ----------------------------------------------------------------------------
# Sweeps
# ----------------------------------------------------------------------------


@dataclass
class SweepSummary:
    scenario: str
    policy: dict
    seeds: list
    runs: list
    n_runs: int
    identification_rate: float
    winner_rate: float
    inconclusive_rate: float
    mean_stopping_day: float
    median_stopping_day: float
    median_stopping_impressions: float
    mean_regret: float
    coverage_violation_rate: float

    def aggregates(self) -> dict:
        return {
            "scenario": self.scenario,
            "policy": self.policy,
            "n_runs": self.n_runs,
            "identification_rate": self.identification_rate,
            "winner_rate": self.winner_rate,
            "inconclusive_rate": self.inconclusive_rate,
            "mean_stopping_day": self.mean_stopping_day,
            "median_stopping_day": self.median_stopping_day,
            "median_stopping_impressions": self.median_stopping_impressions,
            "mean_regret": self.mean_regret,
            "coverage_violation_rate": self.coverage_violation_rate,
        }


class SweepError(RuntimeError):
    def __init__(self, seed, exc):
        self.seed = seed
        super().__init__(f"run with seed {seed} failed: {exc}")


def summarize(scenario: Scenario, policy: dict, runs: Sequence[RunMetrics]) -> SweepSummary:
    m = len(runs)
    stops = [r.stopping_day for r in runs]
    return SweepSummary(
        scenario=scenario.name,
        policy=policy,
        seeds=[r.seed for r in runs],
        runs=list(runs),
        n_runs=m,
        identification_rate=sum(bool(r.correct) for r in runs) / m,
        winner_rate=sum(r.winner is not None for r in runs) / m,
        inconclusive_rate=sum(r.winner is None for r in runs) / m,
        mean_stopping_day=statistics.fmean(stops),
        median_stopping_day=float(statistics.median(stops)),
        median_stopping_impressions=float(statistics.median(r.stopping_impressions for r in runs)),
        mean_regret=statistics.fmean(r.regret for r in runs),
        coverage_violation_rate=sum(r.coverage_violation for r in runs) / m,
    )


def sweep(scenario: Scenario, policy_config, seeds: Sequence[int], keep_traces: bool = False):
    """Run every seed and aggregate.

    Returns the :class:`SweepSummary`, or ``(summary, traces)`` when
    ``keep_traces`` is set.
    """
    if len(seeds) < 1:
        raise UsageError("sweep needs at least one seed")
    policy = _policy_from(policy_config)
    runs, traces = [], []
    for seed in seeds:
        try:
            trace = run_experiment(scenario, policy, seed)
            runs.append(compute_metrics(trace, scenario))
        except Exception as exc:
            raise SweepError(seed, exc) from exc
        if keep_traces:
            traces.append(trace)
    summary = summarize(scenario, policy.to_config(), runs)
    return (summary, traces) if keep_traces else summary


# ----------------------------------------------------------------------------
# Serialization
# ----------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def trace_header(k: int) -> list[str]:
    cols = ["day", "traffic"]
    for prefix in ("p", "n", "r", "G", "active"):
        cols += [f"{prefix}_{i}" for i in range(k)]
    return cols


def trace_to_csv(trace: Trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace_header(trace.k))
    traffic = trace.traffic
    for t in range(trace.stopping_day):
        row = [t + 1, traffic[t]]
        for arr in (trace.probs, trace.impressions, trace.successes, trace.gains, trace.active):
            row += list(arr[t])
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def trace_metadata_json(trace: Trace) -> str:
    return json.dumps(trace.metadata(), indent=2, sort_keys=True) + "\n"


def write_trace(trace: Trace, directory, stem: str) -> tuple[Path, Path]:
    directory = Path(directory)
    csv_path = directory / f"{stem}.csv"
    meta_path = directory / f"{stem}.json"
    with open(csv_path, "w", newline="") as fh:
        fh.write(trace_to_csv(trace))
    with open(meta_path, "w", newline="") as fh:
        fh.write(trace_metadata_json(trace))
    return csv_path, meta_path


def read_trace(csv_path) -> Trace:
    """Load a trace CSV and its ``.json`` sidecar, then verify it."""
    csv_path = Path(csv_path)
    meta_path = csv_path.with_suffix(".json")
    try:
        meta = json.loads(meta_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{meta_path}: unreadable trace metadata ({exc})") from exc
    if meta.get("format") != TRACE_FORMAT:
        raise IntegrityError(f"{meta_path}: unknown trace format {meta.get('format')!r}")
    k = meta["k"]
    header = trace_header(k)
    try:
        lines = csv_path.read_text().splitlines()
    except OSError as exc:
        raise IntegrityError(f"{csv_path}: unreadable ({exc})") from exc
    rows = list(csv.reader(lines))
    if not rows or rows[0] != header:
        raise IntegrityError(f"{csv_path}:1: unexpected header")
    probs, n, r, g, act = [], [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise IntegrityError(f"{csv_path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            if int(row[0]) != lineno - 1:
                raise IntegrityError(f"{csv_path}:{lineno}: days are not contiguous")
            vals = row[2:]
            probs.append([float(x) for x in vals[0:k]])
            n.append([int(x) for x in vals[k : 2 * k]])
            r.append([int(x) for x in vals[2 * k : 3 * k]])
            g.append([float(x) for x in vals[3 * k : 4 * k]])
            flags = vals[4 * k : 5 * k]
            if any(x not in ("0", "1") for x in flags):
                raise ValueError("active flags must be 0 or 1")
            act.append([x == "1" for x in flags])
            if int(row[1]) != sum(n[-1]):
                raise IntegrityError(f"{csv_path}:{lineno}: traffic does not equal the sum of impressions")
        except ValueError as exc:
            raise IntegrityError(f"{csv_path}:{lineno}: {exc}") from exc
    if len(probs) != meta["stopping_day"]:
        raise IntegrityError(f"{csv_path}: has {len(probs)} days, metadata says {meta['stopping_day']}")
    trace = Trace(
        scenario_name=meta["scenario"]["name"],
        scenario_hash=meta["scenario"]["hash"],
        scenario_config=meta["scenario"]["config"],
        policy=meta["policy"],
        seed=meta["seed"],
        probs=np.array(probs, dtype=np.float64).reshape(-1, k),
        impressions=np.array(n, dtype=np.int64).reshape(-1, k),
        successes=np.array(r, dtype=np.int64).reshape(-1, k),
        gains=np.array(g, dtype=np.float64).reshape(-1, k),
        active=np.array(act, dtype=bool).reshape(-1, k),
        status=meta["status"],
        winner=meta["winner"],
        final_active=meta["final_active"],
    )
    try:
        verify_trace(trace)
    except IntegrityError as exc:
        raise IntegrityError(f"{csv_path}: {exc}") from exc
    return trace


# ----------------------------------------------------------------------------
# Figure data
# ----------------------------------------------------------------------------

FIGURE_PANELS = ("play_probability", "daily_mean", "running_mean", "cumulative_gain")


def figure_tables(trace: Trace) -> dict[str, list[list]]:
    """Per-day tables for the four panels; ``None`` marks an undefined mean."""
    n = trace.impressions
    r = trace.successes
    cum_n = np.cumsum(n, axis=0)
    cum_r = np.cumsum(r, axis=0)

    def ratio(num, den):
        return [[None if d == 0 else int(a) / int(d) for a, d in zip(nr, dr)] for nr, dr in zip(num, den)]

    return {
        "play_probability": trace.probs.tolist(),
        "daily_mean": ratio(r, n),
        "running_mean": ratio(cum_r, cum_n),
        "cumulative_gain": trace.gains.tolist(),
    }


def figure_csv(rows: list[list], k: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["day"] + [f"arm_{i}" for i in range(k)])
    for t, row in enumerate(rows, start=1):
        w.writerow([t] + ["" if x is None else repr(float(x)) for x in row])
    return buf.getvalue()
