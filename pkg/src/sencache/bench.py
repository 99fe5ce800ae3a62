"""Benchmark harness: multi-seed runs, ablation sweeps and NFE matching."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable

import numpy as np
from scipy import stats

from .field import VelocityField
from .metrics import RunReport, compare_runs, consecutive_step_mae
from .policy import (CachePolicy, CachePolicyConfig, make_policy, plan_schedule, static_decisions,
                     static_nfe, transition_scores)
from .sampler import TimestepGrid, Trajectory, sample_reference, sample_with_policy
from .sensitivity import CalibrationConfig, SensitivityProfile, calibrate


@dataclass(frozen=True)
class Summary:
    value: float
    mean_nfe: float
    mean_cache_ratio: float
    mean_terminal_mse: float
    mean_terminal_psnr: float
    mean_rel_l2: float
    runs: int


class ReferenceCache:
    """Uncached runs keyed by seed, computed once per (field, grid)."""

    def __init__(self, field: VelocityField, grid: TimestepGrid):
        self.field = field
        self.grid = grid
        self._runs: dict[int, Trajectory] = {}

    def __getitem__(self, seed: int) -> Trajectory:
        if seed not in self._runs:
            self._runs[seed] = sample_reference(self.field, self.grid, seed)
        return self._runs[seed]


def run_seeds(refs: ReferenceCache, seeds: Iterable[int],
              policy_factory: Callable[[], CachePolicy]) -> list[RunReport]:
    reports = []
    for seed in seeds:
        traj, report = sample_with_policy(refs.field, refs.grid, seed, policy_factory())
        reports.append(report.attach(compare_runs(refs[seed], traj)))
    return reports


def summarize(reports: list[RunReport], value: float = math.nan) -> Summary:
    return Summary(
        value=value,
        mean_nfe=float(np.mean([r.nfe for r in reports])),
        mean_cache_ratio=float(np.mean([r.cache_ratio for r in reports])),
        mean_terminal_mse=float(np.mean([r.terminal_mse for r in reports])),
        mean_terminal_psnr=float(np.mean([r.terminal_psnr for r in reports])),
        mean_rel_l2=float(np.mean([r.trajectory_rel_l2 for r in reports])),
        runs=len(reports),
    )


def n_sweep(refs: ReferenceCache, profile: SensitivityProfile, seeds, config: CachePolicyConfig,
            ns, policy: str = "sencache") -> list[Summary]:
    out = []
    for n in ns:
        cfg = replace(config, max_reuse=int(n))
        reports = run_seeds(refs, seeds, lambda: make_policy(policy, profile, cfg))
        out.append(summarize(reports, n))
    return out


def epsilon_sweep(refs: ReferenceCache, profile: SensitivityProfile, seeds,
                  config: CachePolicyConfig, epsilons, policy: str = "sencache") -> list[Summary]:
    out = []
    for eps in epsilons:
        cfg = replace(config, epsilon=float(eps))
        reports = run_seeds(refs, seeds, lambda: make_policy(policy, profile, cfg))
        out.append(summarize(reports, eps))
    return out


def static_nfe_table(refs: ReferenceCache, profile: SensitivityProfile, seeds,
                     config: CachePolicyConfig, ns) -> np.ndarray:
    """Teacher-forced NFE, shape (len(seeds), len(ns))."""
    table = np.empty((len(seeds), len(ns)), dtype=int)
    for a, seed in enumerate(seeds):
        for b, n in enumerate(ns):
            table[a, b] = static_nfe(static_decisions(refs[seed], profile, replace(config, max_reuse=int(n))))
    return table


def static_hit_sets(reference: Trajectory, profile: SensitivityProfile, epsilons,
                    score: str = "sencache") -> list[frozenset[int]]:
    """Teacher-forced hit steps per tolerance with no guard and no reuse cap."""
    sets = []
    for eps in epsilons:
        cfg = CachePolicyConfig(epsilon=eps, epsilon_guard=eps, guard_fraction=0.0,
                                max_reuse=reference.K + 1)
        sets.append(frozenset(d.step for d in static_decisions(reference, profile, cfg, score) if d.hit))
    return sets


def match_epsilon(refs: ReferenceCache, profile: SensitivityProfile, seeds, policy: str,
                  target_nfe: float, config: CachePolicyConfig, lo: float = 1e-6, hi: float = 1e3,
                  iters: int = 40) -> tuple[float, list[RunReport]]:
    """Bisect the base tolerance (log scale) so mean solver NFE lands nearest
    ``target_nfe``.

    Returns the best tolerance found and its reports.
    """
    best = None

    def trial(eps):
        nonlocal best
        cfg = replace(config, epsilon=eps)
        reports = run_seeds(refs, seeds, lambda: make_policy(policy, profile, cfg))
        nfe = float(np.mean([r.solver_nfe for r in reports]))
        if best is None or abs(nfe - target_nfe) < abs(best[2] - target_nfe):
            best = (eps, reports, nfe)
        return nfe

    a, b = math.log(lo), math.log(hi)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        nfe = trial(math.exp(mid))
        if abs(nfe - target_nfe) < 0.05:
            break
        if nfe > target_nfe:
            a = mid  # too many evaluations: loosen
        else:
            b = mid
    return best[0], best[1]


def calibration_size_study(field: VelocityField, grid: TimestepGrid, sizes,
                           base: CalibrationConfig) -> tuple[list[SensitivityProfile], list[float]]:
    """Profiles for each calibration size and their max pointwise relative
    deviation from the largest one."""
    profiles = [calibrate(field, grid, replace(base, num_samples=int(s))) for s in sizes]
    ref = profiles[int(np.argmax(sizes))]
    devs = [max_relative_deviation(p, ref) for p in profiles]
    return profiles, devs


def max_relative_deviation(profile: SensitivityProfile, reference: SensitivityProfile) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        rx = np.abs(profile.alpha_x - reference.alpha_x) / reference.alpha_x
        rt = np.abs(profile.alpha_t - reference.alpha_t) / reference.alpha_t
    return float(np.nanmax(np.concatenate([rx, rt])))


@dataclass(frozen=True)
class PlanComparison:
    seed: int
    planned_error: float
    uniform_error: float
    planned_grid: TimestepGrid


def plan_vs_uniform(field: VelocityField, grid: TimestepGrid, profile: SensitivityProfile,
                    budget: int, seeds) -> list[PlanComparison]:
    """Terminal MSE of a planned ``budget``-step grid and the uniform one,
    both against the full-grid run of the same seed.

    The planner sees each seed's own full-grid run.
    """
    if grid.K % budget:
        raise ValueError("uniform comparison needs budget to divide K")
    uniform = grid.subgrid(np.arange(0, grid.K + 1, grid.K // budget))
    out = []
    for seed in seeds:
        ref = sample_reference(field, grid, seed)
        planned = plan_schedule(profile, ref, budget)
        e_plan = float(np.mean((sample_reference(field, planned, seed).terminal - ref.terminal) ** 2))
        e_unif = float(np.mean((sample_reference(field, uniform, seed).terminal - ref.terminal) ** 2))
        out.append(PlanComparison(seed, e_plan, e_unif, planned))
    return out


def predictor_correlation(refs: ReferenceCache, profile: SensitivityProfile, seeds) -> list[float]:
    """Spearman correlation between per-transition score and output MAE."""
    out = []
    for seed in seeds:
        ref = refs[seed]
        rho = stats.spearmanr(transition_scores(ref, profile), consecutive_step_mae(ref)).statistic
        out.append(float(rho))
    return out


@dataclass(frozen=True)
class MatchedPoint:
    policy: str
    epsilon: float
    mean_solver_nfe: float
    mean_terminal_mse: float


def matched_nfe_comparison(refs: ReferenceCache, profile: SensitivityProfile, seeds, target_nfe: float,
                           config: CachePolicyConfig,
                           policies=("sencache", "teacache_like", "magcache_like")) -> list[MatchedPoint]:
    """Tune each policy's tolerance to the same mean solver NFE and report its error."""
    out = []
    for name in policies:
        eps, reports = match_epsilon(refs, profile, seeds, name, target_nfe, config)
        out.append(MatchedPoint(name, eps, float(np.mean([r.solver_nfe for r in reports])),
                                float(np.mean([r.terminal_mse for r in reports]))))
    return out
