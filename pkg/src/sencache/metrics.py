"""Efficiency and fidelity measurements for cached runs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .errors import DomainError, PreconditionError

if TYPE_CHECKING:
    from .field import VelocityField
    from .sampler import Trajectory

# Zero-MSE PSNR is reported as this value instead of +inf.
PSNR_CAP = 200.0


@dataclass(frozen=True)
class StepDecision:
    step: int  # grid index k of the state that received the output
    t: float
    hit: bool
    score: float = math.nan
    epsilon: float = math.nan


@dataclass
class RunReport:
    """Per-run accounting.

    ``nfe`` counts every field evaluation, including the mandatory first one,
    so ``nfe + hits == K + 1``.  ``solver_nfe`` leaves out the output at
    t=0, which the Euler update never consumes.
    """

    policy: str
    seed: int
    K: int
    nfe: int
    hits: int
    decisions: list[StepDecision] = field(default_factory=list)
    terminal_output_evaluated: bool = True
    terminal_mse: float | None = None
    terminal_psnr: float | None = None
    trajectory_rel_l2: float | None = None

    @property
    def cache_ratio(self) -> float:
        return self.hits / self.K

    @property
    def solver_nfe(self) -> int:
        return self.nfe - int(self.terminal_output_evaluated)

    def hit_mask(self) -> np.ndarray:
        return np.array([d.hit for d in self.decisions], dtype=bool)

    def max_consecutive_hits(self) -> int:
        best = run = 0
        for d in self.decisions:
            run = run + 1 if d.hit else 0
            best = max(best, run)
        return best

    def attach(self, fidelity: Fidelity) -> RunReport:
        self.terminal_mse = fidelity.terminal_mse
        self.terminal_psnr = fidelity.terminal_psnr
        self.trajectory_rel_l2 = fidelity.trajectory_rel_l2
        return self


@dataclass(frozen=True)
class Fidelity:
    terminal_mse: float
    terminal_psnr: float
    trajectory_rel_l2: float


def mse(reference, candidate) -> float:
    reference = np.asarray(reference, dtype=np.float64)
    candidate = np.asarray(candidate, dtype=np.float64)
    if reference.shape != candidate.shape:
        raise DomainError(f"shape mismatch {reference.shape} vs {candidate.shape}")
    return float(np.mean((candidate - reference) ** 2))


def psnr_from_mse(value: float, peak: float) -> float:
    if peak <= 0:
        raise DomainError("peak must be positive")
    if value <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / value))


def psnr(reference, candidate, peak: float) -> float:
    """Peak signal-to-noise ratio in dB, capped at ``PSNR_CAP``."""
    return psnr_from_mse(mse(reference, candidate), peak)


def consecutive_step_mae(trajectory: Trajectory, field: VelocityField | None = None) -> np.ndarray:
    """Mean absolute change of the denoiser output across each transition.

    Entry ``i`` compares the outputs at ``times[i]`` and ``times[i + 1]``.
    Outputs are re-evaluated when ``field`` is given, otherwise the recorded
    ones are used.
    """
    if not trajectory.fully_evaluated:
        raise PreconditionError("consecutive-step MAE needs a fully evaluated trajectory")
    if field is None:
        outputs = trajectory.velocities
    else:
        outputs = np.array([field.evaluate(x, t) for x, t in zip(trajectory.states, trajectory.times)])
    return np.mean(np.abs(np.diff(outputs, axis=0)), axis=1)


def compare_runs(reference: Trajectory, cached: Trajectory) -> Fidelity:
    """Fidelity of ``cached`` against the uncached run with the same grid and seed."""
    if not np.array_equal(reference.times, cached.times):
        raise PreconditionError("runs use different grids")
    if reference.seed != cached.seed:
        raise PreconditionError(f"seed mismatch {reference.seed} vs {cached.seed}")
    if reference.states.shape != cached.states.shape:
        raise PreconditionError("state shapes differ")
    terminal_mse = mse(reference.terminal, cached.terminal)
    peak = float(np.max(np.abs(reference.terminal)))
    denom = float(np.linalg.norm(reference.states))
    diff = float(np.linalg.norm(cached.states - reference.states))
    return Fidelity(
        terminal_mse=terminal_mse,
        terminal_psnr=psnr_from_mse(terminal_mse, peak) if peak > 0 else PSNR_CAP,
        trajectory_rel_l2=diff / denom if denom > 0 else diff,
    )


RUN_COLUMNS = ["config_hash", "seed", "policy", "nfe", "cache_ratio",
               "terminal_mse", "terminal_psnr", "trajectory_rel_l2"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_run_reports(path, reports: list[RunReport], config_hash: str) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for r in reports:
            w.writerow([config_hash, r.seed, r.policy, r.nfe, _fmt(r.cache_ratio),
                        _fmt(r.terminal_mse), _fmt(r.terminal_psnr), _fmt(r.trajectory_rel_l2)])


def write_step_csv(path, report: RunReport) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "t", "decision", "S", "epsilon_used"])
        for d in report.decisions:
            w.writerow([d.step, _fmt(d.t), "hit" if d.hit else "miss", _fmt(d.score), _fmt(d.epsilon)])
