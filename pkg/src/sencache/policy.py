"""Cache/reuse decision policies.

``SenCachePolicy`` reuses the cached output while the predicted output
change ``alpha_x * ||d|| + alpha_t * |tau|`` stays under the tolerance, where
``d`` and ``tau`` are the latent and time changes accumulated since the last
fresh evaluation.  The TeaCache-like and MagCache-like baselines keep only the
timestep or only the latent term of that score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, DomainError, PreconditionError
from .metrics import StepDecision
from .sampler import TimestepGrid, Trajectory
from .sensitivity import SensitivityProfile


class Decision(NamedTuple):
    hit: bool
    score: float = math.nan
    epsilon: float = math.nan


@dataclass(frozen=True)
class CachePolicyConfig:
    """Tolerance schedule and reuse budget.

    Without an explicit ``epsilon_schedule`` the tolerance is
    ``epsilon_guard`` for step fractions below ``guard_fraction`` and
    ``epsilon`` afterwards.  An explicit schedule is a sequence of
    ``(start_fraction, epsilon)`` pairs; the last pair whose start is at or
    below the step fraction applies.  Step fraction is the transition index
    divided by K.
    """

    epsilon: float = 0.1
    max_reuse: int = 3
    epsilon_guard: float = 0.01
    guard_fraction: float = 0.2
    epsilon_schedule: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")
        if not self.epsilon_guard > 0:
            raise ConfigError("epsilon_guard must be > 0")
        if not 0.0 <= self.guard_fraction <= 1.0:
            raise ConfigError("guard_fraction must lie in [0, 1]")
        if int(self.max_reuse) != self.max_reuse or self.max_reuse < 1:
            raise ConfigError("max_reuse must be a positive integer")
        if self.epsilon_schedule is not None:
            sched = tuple((float(f), float(e)) for f, e in self.epsilon_schedule)
            if not sched or sched[0][0] != 0.0:
                raise ConfigError("epsilon_schedule must start at fraction 0")
            if any(b[0] <= a[0] for a, b in zip(sched, sched[1:])):
                raise ConfigError("epsilon_schedule fractions must increase")
            if any(e <= 0 for _, e in sched):
                raise ConfigError("epsilon_schedule values must be > 0")
            object.__setattr__(self, "epsilon_schedule", sched)

    @classmethod
    def unguarded(cls, epsilon: float, max_reuse: int) -> CachePolicyConfig:
        return cls(epsilon=epsilon, max_reuse=max_reuse, epsilon_guard=epsilon, guard_fraction=0.0)

    def epsilon_at(self, step_fraction: float) -> float:
        if self.epsilon_schedule is not None:
            eps = self.epsilon_schedule[0][1]
            for start, value in self.epsilon_schedule:
                if step_fraction >= start:
                    eps = value
            return eps
        return self.epsilon_guard if step_fraction < self.guard_fraction else self.epsilon


def sensitivity_score(alpha_x: float, alpha_t: float, d_norm: float, tau_abs: float) -> float:
    """First-order predicted output change ``alpha_x * d_norm + alpha_t * tau_abs``."""
    if min(alpha_x, alpha_t, d_norm, tau_abs) < 0:
        raise DomainError("sensitivity score inputs must be non-negative")
    return alpha_x * d_norm + alpha_t * tau_abs


def _timestep_score(alpha_x, alpha_t, d_norm, tau_abs):
    return sensitivity_score(0.0, alpha_t, 0.0, tau_abs)


def _latent_score(alpha_x, alpha_t, d_norm, tau_abs):
    return sensitivity_score(alpha_x, 0.0, d_norm, 0.0)


SCORES: dict[str, Callable[[float, float, float, float], float]] = {
    "sencache": sensitivity_score,
    "teacache_like": _timestep_score,
    "magcache_like": _latent_score,
}


@dataclass
class CacheState:
    """Running accumulators between fresh evaluations."""

    x_ref: np.ndarray
    t_ref: float
    y_ref: np.ndarray
    d_accum: np.ndarray
    tau_accum: float = 0.0
    reuse_count: int = 0
    alpha_x: float | None = None
    alpha_t: float | None = None

    @classmethod
    def initial(cls, x, t, y, profile: SensitivityProfile | None) -> CacheState:
        state = cls(x, t, y, np.zeros_like(x))
        state.refresh(x, t, y, profile)
        return state

    def refresh(self, x, t, y, profile: SensitivityProfile | None) -> None:
        self.x_ref, self.t_ref, self.y_ref = x, t, y
        self.d_accum = np.zeros_like(x)
        self.tau_accum = 0.0
        self.reuse_count = 0
        if profile is not None:
            self.alpha_x, self.alpha_t = profile.lookup(t)


def _threshold_decide(state: CacheState, config: CachePolicyConfig, dx_step, dt_step: float,
                      step_fraction: float, score_fn) -> Decision:
    if state.alpha_x is None or state.alpha_t is None:
        raise ConfigError("no sensitivity profile: the cache state has no alpha values")
    if not dt_step < 0:
        raise PreconditionError("dt_step must be negative (integration runs toward t=0)")
    state.d_accum = state.d_accum + dx_step
    state.tau_accum += dt_step
    score = score_fn(state.alpha_x, state.alpha_t,
                     float(np.linalg.norm(state.d_accum)), abs(state.tau_accum))
    eps = config.epsilon_at(step_fraction)
    hit = score <= eps and state.reuse_count < config.max_reuse
    if hit:
        state.reuse_count += 1
    return Decision(hit, score, eps)


def sencache_decide(state: CacheState, config: CachePolicyConfig, dx_step, dt_step: float,
                    step_fraction: float) -> Decision:
    """Accumulate the step into ``state`` and decide hit or miss.

    A hit increments the reuse count.  On a miss the caller evaluates the
    field and calls ``state.refresh``.
    """
    return _threshold_decide(state, config, dx_step, dt_step, step_fraction, sensitivity_score)


def teacache_like_decide(state, config, dx_step, dt_step, step_fraction) -> Decision:
    return _threshold_decide(state, config, dx_step, dt_step, step_fraction, _timestep_score)


def magcache_like_decide(state, config, dx_step, dt_step, step_fraction) -> Decision:
    return _threshold_decide(state, config, dx_step, dt_step, step_fraction, _latent_score)


class CachePolicy:
    """Per-run policy object driven by ``sample_with_policy``.

    Holds mutable run state, so use one instance per concurrent run.
    ``start`` resets it, which makes sequential reuse safe.
    """

    name = "base"

    def start(self, grid: TimestepGrid, x, t: float, y) -> None:
        self.K = grid.K

    def decide(self, index: int, x, t: float, dx, dt: float) -> Decision:
        raise NotImplementedError

    def refresh(self, x, t: float, y) -> None:
        pass


class NoCachePolicy(CachePolicy):
    name = "none"

    def decide(self, index, x, t, dx, dt):
        return Decision(False)


class AlwaysCachePolicy(CachePolicy):
    """Reuse regardless of any score, refreshing only after ``max_reuse`` hits."""

    name = "always"

    def __init__(self, max_reuse: int):
        if max_reuse < 1:
            raise ConfigError("max_reuse must be >= 1")
        self.max_reuse = max_reuse

    def start(self, grid, x, t, y):
        super().start(grid, x, t, y)
        self.m = 0

    def decide(self, index, x, t, dx, dt):
        hit = self.m < self.max_reuse
        self.m = self.m + 1 if hit else 0
        return Decision(hit)


class UniformSkipPolicy(CachePolicy):
    """Evaluate at grid indices ``k`` with ``(K - k) % keep_every == 0``."""

    name = "uniform"

    def __init__(self, keep_every: int):
        if keep_every < 1:
            raise ConfigError("keep_every must be >= 1")
        self.keep_every = keep_every

    def decide(self, index, x, t, dx, dt):
        k = self.K - index - 1
        return Decision((self.K - k) % self.keep_every != 0)


def uniform_skip_policy(keep_every: int) -> UniformSkipPolicy:
    return UniformSkipPolicy(keep_every)


class ThresholdPolicy(CachePolicy):
    """Accumulate-and-threshold rule shared by SenCache and the baselines."""

    score = "sencache"

    def __init__(self, profile: SensitivityProfile | None, config: CachePolicyConfig):
        if profile is None:
            raise ConfigError(f"{self.name} needs a sensitivity profile")
        self.profile = profile
        self.config = config
        self._score_fn = SCORES[self.score]

    @property
    def name(self) -> str:
        return self.score

    def start(self, grid, x, t, y):
        super().start(grid, x, t, y)
        self.state = CacheState.initial(x, t, y, self.profile)

    def decide(self, index, x, t, dx, dt):
        return _threshold_decide(self.state, self.config, dx, dt, index / self.K, self._score_fn)

    def refresh(self, x, t, y):
        self.state.refresh(x, t, y, self.profile)


class SenCachePolicy(ThresholdPolicy):
    score = "sencache"


class TeaCacheLikePolicy(ThresholdPolicy):
    score = "teacache_like"


class MagCacheLikePolicy(ThresholdPolicy):
    score = "magcache_like"


POLICIES = {
    "sencache": SenCachePolicy,
    "teacache_like": TeaCacheLikePolicy,
    "magcache_like": MagCacheLikePolicy,
}


def make_policy(name: str, profile: SensitivityProfile | None = None,
                config: CachePolicyConfig | None = None, keep_every: int = 1) -> CachePolicy:
    if name == "none":
        return NoCachePolicy()
    if name == "uniform":
        return UniformSkipPolicy(keep_every)
    if name in POLICIES:
        return POLICIES[name](profile, config or CachePolicyConfig())
    raise ConfigError(f"unknown policy {name!r}")


# -- teacher-forced (static) mode ---------------------------------------------

def transition_scores(reference: Trajectory, profile: SensitivityProfile,
                      score: str = "sencache") -> np.ndarray:
    """Per-transition score on a frozen reference, with sensitivities looked up
    at the start of each transition."""
    score_fn = SCORES[score]
    dx_norm = np.linalg.norm(np.diff(reference.states, axis=0), axis=1)
    dt_abs = np.abs(np.diff(reference.times))
    out = np.empty(reference.K)
    for i in range(reference.K):
        ax, at = profile.lookup(float(reference.times[i]))
        out[i] = score_fn(ax, at, float(dx_norm[i]), float(dt_abs[i]))
    return out


def static_decisions(reference: Trajectory, profile: SensitivityProfile,
                     config: CachePolicyConfig, score: str = "sencache") -> list[StepDecision]:
    """Decisions against fixed per-transition scores of the uncached run.

    Scores do not depend on earlier decisions, so for an unbounded reuse
    budget the hit set grows monotonically with the tolerance.
    """
    scores = transition_scores(reference, profile, score)
    K = reference.K
    out = []
    m = 0
    for i, s in enumerate(scores):
        eps = config.epsilon_at(i / K)
        hit = bool(s <= eps and m < config.max_reuse)
        m = m + 1 if hit else 0
        out.append(StepDecision(K - i - 1, float(reference.times[i + 1]), hit, float(s), eps))
    return out


def static_nfe(decisions: list[StepDecision]) -> int:
    return 1 + sum(not d.hit for d in decisions)


# -- static step planner ------------------------------------------------------

def plan_schedule(profile: SensitivityProfile, reference: Trajectory, budget: int) -> TimestepGrid:
    """Pick ``budget`` steps from the reference grid so each planned step
    covers an equal share of the cumulative transition score.

    Both endpoints are always kept.  Boundary ``j`` goes to the grid point
    whose cumulative score is nearest ``j / budget`` of the total, clamped so
    every planned step spans at least one original transition.
    """
    if not reference.fully_evaluated:
        raise PreconditionError("planning needs a fully evaluated reference")
    K = reference.K
    if budget < 2:
        raise DomainError("budget must be >= 2")
    if budget > K:
        raise DomainError(f"budget {budget} exceeds the {K} available steps")

    scores = transition_scores(reference, profile)
    cumulative = np.concatenate([[0.0], np.cumsum(scores)])
    total = cumulative[-1]
    if total <= 0:
        targets = np.arange(1, budget) * K / budget
        cumulative = np.arange(K + 1, dtype=np.float64)
    else:
        targets = np.arange(1, budget) * total / budget

    picks = [0]
    for j, target in enumerate(targets, start=1):
        lo = picks[-1] + 1
        hi = K - (budget - j)
        idx = int(np.searchsorted(cumulative, target))
        # nearest of the two neighbours; ties go to the earlier (larger t) point
        if idx > 0 and (idx > K or target - cumulative[idx - 1] <= cumulative[idx] - target):
            idx -= 1
        picks.append(min(max(idx, lo), hi))
    picks.append(K)
    return reference.grid.subgrid(picks)
