"""Interpolation schedules ``x_t = alpha(t) * x0 + sigma(t) * eps``.

Time runs from ``t = 0`` (data) to ``t = T = 1`` (pure noise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError

_ALIASES = {
    "linear": "linear",
    "linear-rectified-flow": "linear",
    "rf": "linear",
    "trig": "trig",
    "trigonometric": "trig",
    "cosine": "trig",
}

_HALF_PI = 0.5 * math.pi


@dataclass(frozen=True)
class InterpolantSchedule:
    kind: str = "linear"
    T: float = 1.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", _ALIASES[self.kind])
        except KeyError:
            raise DomainError(f"unknown schedule family {self.kind!r}") from None
        if self.T != 1.0:
            raise DomainError("terminal time is fixed to 1.0")

    @property
    def schedule_id(self) -> str:
        return self.kind

    def _check(self, t: float) -> float:
        t = float(t)
        if not 0.0 <= t <= self.T:
            raise DomainError(f"t={t!r} outside [0, {self.T}]")
        return t

    def alpha(self, t: float) -> float:
        t = self._check(t)
        if self.kind == "linear":
            return 1.0 - t
        if t == self.T:
            return 0.0
        return math.cos(_HALF_PI * t)

    def sigma(self, t: float) -> float:
        t = self._check(t)
        if self.kind == "linear":
            return t
        if t == self.T:
            return 1.0
        return math.sin(_HALF_PI * t)

    def alpha_dot(self, t: float) -> float:
        t = self._check(t)
        if self.kind == "linear":
            return -1.0
        return -_HALF_PI * math.sin(_HALF_PI * t)

    def sigma_dot(self, t: float) -> float:
        t = self._check(t)
        if self.kind == "linear":
            return 1.0
        if t == self.T:
            return 0.0
        return _HALF_PI * math.cos(_HALF_PI * t)

    # Second derivatives feed the exact time-Jacobian of analytic fields.
    def alpha_ddot(self, t: float) -> float:
        t = self._check(t)
        if self.kind == "linear":
            return 0.0
        return -_HALF_PI**2 * self.alpha(t)

    def sigma_ddot(self, t: float) -> float:
        t = self._check(t)
        if self.kind == "linear":
            return 0.0
        return -_HALF_PI**2 * self.sigma(t)


def alpha(schedule: InterpolantSchedule, t: float) -> float:
    return schedule.alpha(t)


def sigma(schedule: InterpolantSchedule, t: float) -> float:
    return schedule.sigma(t)


def alpha_dot(schedule: InterpolantSchedule, t: float) -> float:
    return schedule.alpha_dot(t)


def sigma_dot(schedule: InterpolantSchedule, t: float) -> float:
    return schedule.sigma_dot(t)
