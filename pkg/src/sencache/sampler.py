"""Explicit Euler integration of the probability-flow ODE from t=1 to t=0."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DivergedTrajectoryError, DomainError, PreconditionError
from .field import VelocityField
from .metrics import RunReport, StepDecision
from .rng import NormalStream


@dataclass(frozen=True)
class TimestepGrid:
    """Strictly decreasing times ``t_K = 1 > ... > t_0 = 0``.

    ``times[i]`` is grid index ``k = K - i``.
    """

    times: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=np.float64)
        if times.ndim != 1 or times.shape[0] < 2:
            raise DomainError("a grid needs at least two times")
        if times[0] != 1.0 or times[-1] != 0.0:
            raise DomainError("grid must start at t=1 and end at t=0")
        if not np.all(np.diff(times) < 0):
            raise DomainError("grid times must be strictly decreasing")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(cls, K: int) -> TimestepGrid:
        if K < 1:
            raise DomainError("K must be >= 1")
        times = np.linspace(1.0, 0.0, K + 1)
        times[0], times[-1] = 1.0, 0.0
        return cls(times)

    @property
    def K(self) -> int:
        return self.times.shape[0] - 1

    def __len__(self) -> int:
        return self.times.shape[0]

    def spacing(self, i: int) -> float:
        """Width of transition ``i`` (from ``times[i]`` to ``times[i+1]``)."""
        return float(self.times[i] - self.times[i + 1])

    @property
    def grid_hash(self) -> str:
        return hashlib.sha256(self.times.astype("<f8").tobytes()).hexdigest()

    def subgrid(self, indices) -> TimestepGrid:
        return TimestepGrid(self.times[np.asarray(indices)])

    def __eq__(self, other):
        if not isinstance(other, TimestepGrid):
            return NotImplemented
        return np.array_equal(self.times, other.times)

    def __hash__(self):
        return hash(self.grid_hash)


@dataclass
class Trajectory:
    """States ordered by decreasing t; row ``i`` sits at grid index ``K - i``.

    ``velocities[i]`` is the output used at state ``i`` (the Euler direction
    for ``i < K``); rows with ``evaluated[i] == False`` repeat the most
    recent evaluated output.
    """

    times: np.ndarray
    states: np.ndarray
    velocities: np.ndarray
    evaluated: np.ndarray
    seed: int

    @property
    def K(self) -> int:
        return self.times.shape[0] - 1

    @property
    def grid(self) -> TimestepGrid:
        return TimestepGrid(self.times)

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]

    @property
    def fully_evaluated(self) -> bool:
        return bool(np.all(self.evaluated))

    @property
    def nfe(self) -> int:
        return int(np.count_nonzero(self.evaluated))

    def to_csv(self, path) -> None:
        path = Path(path)
        dim = self.states.shape[1]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step_index", "t", "evaluated", *(f"x{j}" for j in range(dim))])
            for i in range(self.K + 1):
                w.writerow([
                    self.K - i,
                    format(self.times[i], ".17g"),
                    int(self.evaluated[i]),
                    *(format(v, ".17g") for v in self.states[i]),
                ])

    @classmethod
    def from_csv(cls, path, seed: int = 0) -> Trajectory:
        """Read back states; velocities are not stored and come back as NaN."""
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        times = np.array([float(r[1]) for r in rows])
        evaluated = np.array([r[2] == "1" for r in rows])
        states = np.array([[float(v) for v in r[3:]] for r in rows])
        return cls(times, states, np.full_like(states, np.nan), evaluated, seed)


def initial_state(dim: int, seed: int) -> np.ndarray:
    return NormalStream(seed).standard_normal(dim)


def _euler(x: np.ndarray, y: np.ndarray, dt: float, k: int) -> np.ndarray:
    x_new = x + dt * y
    if not np.all(np.isfinite(x_new)):
        raise DivergedTrajectoryError(k)
    return x_new


def sample_reference(field: VelocityField, grid: TimestepGrid, seed: int) -> Trajectory:
    """Uncached run: the field is evaluated at every one of the K+1 states."""
    times = grid.times
    K = grid.K
    states = np.empty((K + 1, field.dim))
    velocities = np.empty_like(states)
    x = initial_state(field.dim, seed)
    states[0] = x
    for i in range(K + 1):
        y = field.evaluate(x, times[i])
        velocities[i] = y
        if i < K:
            x = _euler(x, y, times[i + 1] - times[i], K - i - 1)
            states[i + 1] = x
    return Trajectory(times.copy(), states, velocities, np.ones(K + 1, dtype=bool), seed)


def sample_with_policy(field: VelocityField, grid: TimestepGrid, seed: int, policy
                       ) -> tuple[Trajectory, RunReport]:
    """Euler run where ``policy`` decides, per transition, whether to reuse the
    cached output or evaluate the field at the new state.

    The policy sees the actual (cache-influenced) latent change.  Every state,
    including t=0, receives an output, so ``nfe + hits == K + 1``.
    """
    times = grid.times
    K = grid.K
    states = np.empty((K + 1, field.dim))
    velocities = np.empty_like(states)
    evaluated = np.zeros(K + 1, dtype=bool)

    x = initial_state(field.dim, seed)
    y = field.evaluate(x, times[0])
    states[0], velocities[0], evaluated[0] = x, y, True
    policy.start(grid, x, float(times[0]), y)

    decisions = []
    for i in range(K):
        t_new = float(times[i + 1])
        dt = t_new - float(times[i])
        x_new = _euler(x, y, dt, K - i - 1)
        dec = policy.decide(i, x_new, t_new, x_new - x, dt)
        if not dec.hit:
            y = field.evaluate(x_new, t_new)
            policy.refresh(x_new, t_new, y)
        x = x_new
        states[i + 1], velocities[i + 1], evaluated[i + 1] = x, y, not dec.hit
        decisions.append(StepDecision(K - i - 1, t_new, dec.hit, dec.score, dec.epsilon))

    traj = Trajectory(times.copy(), states, velocities, evaluated, seed)
    hits = sum(d.hit for d in decisions)
    report = RunReport(
        policy=getattr(policy, "name", type(policy).__name__),
        seed=seed,
        K=K,
        nfe=traj.nfe,
        hits=hits,
        decisions=decisions,
        terminal_output_evaluated=bool(evaluated[-1]),
    )
    if report.nfe + report.hits != K + 1:
        raise PreconditionError("policy broke the one-decision-per-transition contract")
    return traj, report
