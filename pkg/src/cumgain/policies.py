"""Day-level allocation policies.

Each policy exists twice: as a small state value with pure transition
functions (``secg_*``, ``thompson_*``, ``uniform_allocation``), and as an
estimator-style wrapper (``SuccessiveElimination``, ``ThompsonSampling``,
``UniformAllocation``) that carries hyperparameters through ``get_params`` /
``set_params`` and exposes ``start`` / ``allocate`` / ``partial_fit`` for the
day loop, plus ``fit`` for replaying logged per-day counts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Mapping

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .env import Allocation, DayObservation
from .errors import ConfigError, ContractViolation, SequencingError, UsageError
from .estimation import GainState, RadiusParams, should_eliminate, update_gain

DEFAULT_TAU = 2
DEFAULT_DELTA = 0.1
DEFAULT_RHO = 1.0
DEFAULT_MC_DRAWS = 10_000


def uniform_allocation(k: int) -> Allocation:
    if k < 1:
        raise UsageError("need at least one arm")
    return Allocation(np.full(k, 1.0 / k))


# ----------------------------------------------------------------------------
# Successive elimination on cumulative gain
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SecgState:
    active: frozenset
    tau: int
    delta: float
    rho: float
    gain_state: GainState

    @property
    def k(self) -> int:
        return self.gain_state.k

    @property
    def day(self) -> int:
        return self.gain_state.day


def secg_init(k: int, tau: int = DEFAULT_TAU, delta: float = DEFAULT_DELTA, rho: float = DEFAULT_RHO) -> SecgState:
    if k < 1:
        raise UsageError("need at least one arm")
    if tau < 1:
        raise ContractViolation(f"tau must be >= 1, got {tau!r}")
    RadiusParams(rho, delta)
    return SecgState(frozenset(range(k)), int(tau), float(delta), float(rho), GainState.initial(k))


def secg_allocation(state: SecgState) -> Allocation:
    p = np.zeros(state.k)
    p[sorted(state.active)] = 1.0 / len(state.active)
    return Allocation(p)


def secg_update(state: SecgState, obs: DayObservation) -> SecgState:
    """Fold in one day; from day ``tau`` on, drop every dominated active arm.

    All dominated arms are removed in one pass against the active set as it
    stood before the update, at per-comparison level ``delta / k``.
    """
    if obs.day != state.day + 1:
        raise SequencingError(f"expected day {state.day + 1}, got day {obs.day}")
    missing = state.active - obs.allocation.support
    if missing:
        raise ContractViolation(f"active arms {sorted(missing)} had zero allocation probability")
    gs = update_gain(state.gain_state, obs)
    active = state.active
    if obs.day >= state.tau and len(active) > 1:
        params = RadiusParams(state.rho, state.delta / state.k)
        dominated = {
            j for j in active if any(should_eliminate(gs, i, j, params) for i in active if i != j)
        }
        active = active - dominated
    return replace(state, active=active, gain_state=gs)


def secg_finished(state: SecgState) -> int | None:
    if len(state.active) == 1:
        return next(iter(state.active))
    return None


# ----------------------------------------------------------------------------
# Thompson sampling
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ThompsonState:
    alpha: np.ndarray
    beta: np.ndarray
    mc_draws: int = DEFAULT_MC_DRAWS

    @property
    def k(self) -> int:
        return self.alpha.size


def thompson_init(k: int, mc_draws: int = DEFAULT_MC_DRAWS, prior_alpha: float = 1.0, prior_beta: float = 1.0) -> ThompsonState:
    if k < 1:
        raise UsageError("need at least one arm")
    if mc_draws < 1:
        raise ContractViolation(f"mc_draws must be >= 1, got {mc_draws!r}")
    if not (prior_alpha > 0 and prior_beta > 0):
        raise ContractViolation("Beta prior parameters must be positive")
    return ThompsonState(np.full(k, float(prior_alpha)), np.full(k, float(prior_beta)), int(mc_draws))


def thompson_allocation(state: ThompsonState, rng: np.random.Generator) -> Allocation:
    """Monte Carlo estimate of each arm's posterior probability of being best."""
    if state.k == 1:
        return Allocation([1.0])
    draws = rng.beta(state.alpha, state.beta, size=(state.mc_draws, state.k))
    # argmax returns the lowest index among ties
    wins = np.bincount(np.argmax(draws, axis=1), minlength=state.k)
    return Allocation(wins / state.mc_draws)


def thompson_update(state: ThompsonState, obs: DayObservation) -> ThompsonState:
    r = np.asarray(obs.successes, dtype=np.float64)
    n = np.asarray(obs.impressions, dtype=np.float64)
    return ThompsonState(state.alpha + r, state.beta + (n - r), state.mc_draws)


# ----------------------------------------------------------------------------
# Estimator-style wrappers
# ----------------------------------------------------------------------------


def _logged_days(impressions, successes, probabilities):
    n = check_array(impressions, dtype=np.int64)
    r = check_array(successes, dtype=np.int64)
    p = check_array(probabilities, dtype=np.float64)
    if not (n.shape == r.shape == p.shape):
        raise ValueError(f"shape mismatch: impressions {n.shape}, successes {r.shape}, probabilities {p.shape}")
    for t in range(n.shape[0]):
        yield DayObservation(t + 1, n[t], r[t], Allocation(p[t]))


class _Policy(BaseEstimator):
    name = "policy"

    def start(self, k: int):
        raise NotImplementedError

    def allocate(self, rng: np.random.Generator | None = None) -> Allocation:
        raise NotImplementedError

    def partial_fit(self, obs: DayObservation):
        raise NotImplementedError

    @property
    def finished(self) -> bool:
        return False

    @property
    def winner_(self) -> int | None:
        return None

    @property
    def active_(self) -> frozenset:
        check_is_fitted(self, "k_")
        return frozenset(range(self.k_))

    def fit(self, impressions, successes, probabilities):
        """Replay logged per-day arrays of shape ``(days, arms)``."""
        n = check_array(impressions, dtype=np.int64)
        self.start(n.shape[1])
        for obs in _logged_days(n, successes, probabilities):
            self.partial_fit(obs)
        return self

    def to_config(self) -> dict:
        return {"name": self.name, **self.get_params()}


class SuccessiveElimination(_Policy):
    """Successive elimination on IPW cumulative gain.

    Parameters
    ----------
    tau : int
        Settling period; no arm is eliminated before day ``tau``.
    delta : float
        Overall error level, split as ``delta / k`` per comparison.
    rho : float
        Mixture constant of the confidence radius.
    """

    name = "secg"

    def __init__(self, tau=DEFAULT_TAU, delta=DEFAULT_DELTA, rho=DEFAULT_RHO):
        self.tau = tau
        self.delta = delta
        self.rho = rho

    def start(self, k):
        self.k_ = k
        self.state_ = secg_init(k, self.tau, self.delta, self.rho)
        return self

    def allocate(self, rng=None):
        check_is_fitted(self, "state_")
        return secg_allocation(self.state_)

    def partial_fit(self, obs):
        if not hasattr(self, "state_"):
            self.start(len(obs.impressions))
        self.state_ = secg_update(self.state_, obs)
        return self

    def fit(self, impressions, successes, probabilities):
        """Replay a logged experiment, stopping once a single arm survives."""
        n = check_array(impressions, dtype=np.int64)
        self.start(n.shape[1])
        for obs in _logged_days(n, successes, probabilities):
            if self.finished:
                break
            self.state_ = secg_update(self.state_, obs)
        return self

    @property
    def finished(self):
        return secg_finished(self.state_) is not None

    @property
    def winner_(self):
        check_is_fitted(self, "state_")
        return secg_finished(self.state_)

    @property
    def active_(self):
        check_is_fitted(self, "state_")
        return self.state_.active

    @property
    def gains_(self):
        check_is_fitted(self, "state_")
        return self.state_.gain_state.gains


class ThompsonSampling(_Policy):
    """Batched Beta-Bernoulli Thompson sampling; never stops early."""

    name = "thompson"

    def __init__(self, mc_draws=DEFAULT_MC_DRAWS, prior_alpha=1.0, prior_beta=1.0):
        self.mc_draws = mc_draws
        self.prior_alpha = prior_alpha
        self.prior_beta = prior_beta

    def start(self, k):
        self.k_ = k
        self.state_ = thompson_init(k, self.mc_draws, self.prior_alpha, self.prior_beta)
        return self

    def allocate(self, rng=None):
        check_is_fitted(self, "state_")
        if rng is None:
            raise UsageError("Thompson sampling needs an rng")
        return thompson_allocation(self.state_, rng)

    def partial_fit(self, obs):
        if not hasattr(self, "state_"):
            self.start(len(obs.impressions))
        self.state_ = thompson_update(self.state_, obs)
        return self


class UniformAllocation(_Policy):
    """Fixed equal split over all arms (classic A/B/N)."""

    name = "uniform"

    def start(self, k):
        self.k_ = k
        self.days_ = 0
        return self

    def allocate(self, rng=None):
        check_is_fitted(self, "k_")
        return uniform_allocation(self.k_)

    def partial_fit(self, obs):
        if not hasattr(self, "k_"):
            self.start(len(obs.impressions))
        self.days_ += 1
        return self


POLICIES = {cls.name: cls for cls in (SuccessiveElimination, ThompsonSampling, UniformAllocation)}


def make_policy(config: Mapping[str, Any]) -> _Policy:
    """Build a policy from ``{"name": ..., <hyperparameters>}``.

    Hyperparameters the chosen policy does not use are ignored.
    """
    name = config.get("name")
    if name not in POLICIES:
        raise ConfigError(f"unknown policy {name!r}; expected one of {', '.join(POLICIES)}", field="policy.name")
    cls = POLICIES[name]
    params = {key: config[key] for key in cls._get_param_names() if key in config}
    policy = cls(**params)
    validate_policy(policy)
    return policy


def validate_policy(policy: _Policy) -> None:
    params = policy.get_params()
    if "tau" in params:
        tau = params["tau"]
        if isinstance(tau, bool) or not isinstance(tau, (int, np.integer)) or tau < 1:
            raise ConfigError(f"tau must be an integer >= 1, got {tau!r}", field="tau")
    if "delta" in params and not (isinstance(params["delta"], (int, float)) and 0.0 < params["delta"] < 1.0):
        raise ConfigError(f"delta must lie in (0, 1), got {params['delta']!r}", field="delta")
    if "rho" in params and not (isinstance(params["rho"], (int, float)) and params["rho"] > 0.0):
        raise ConfigError(f"rho must be positive, got {params['rho']!r}", field="rho")
    if "mc_draws" in params:
        m = params["mc_draws"]
        if isinstance(m, bool) or not isinstance(m, (int, np.integer)) or m < 1:
            raise ConfigError(f"mc_draws must be an integer >= 1, got {m!r}", field="mc_draws")
