"""Secant estimates of the denoiser's latent and timestep sensitivities.

Calibration runs a few seeded reference trajectories, probes the field at
every state, and averages the estimates into a per-timestep profile that
the caching policy looks up at inference time.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DivergedTrajectoryError, DomainError, PreconditionError
from .field import VelocityField
from .rng import derive_seed
from .sampler import TimestepGrid, sample_reference

PROFILE_COLUMNS = ["t", "alpha_x", "alpha_t", "samples"]


def estimate_jx(field: VelocityField, x, t: float, dx, base=None) -> float:
    """``||f(x + dx, t) - f(x, t)|| / ||dx||``.

    ``base`` may carry an already computed ``f(x, t)``.
    """
    x = np.asarray(x, dtype=np.float64)
    dx = np.asarray(dx, dtype=np.float64)
    norm = float(np.linalg.norm(dx))
    if norm == 0.0:
        raise DomainError("perturbation dx has zero norm")
    if base is None:
        base = field.evaluate(x, t)
    return float(np.linalg.norm(field.evaluate(x + dx, t) - base)) / norm


def estimate_jt(field: VelocityField, x, t: float, dt: float, base=None) -> float:
    """``||f(x, t + dt) - f(x, t)|| / |dt|``."""
    if dt == 0:
        raise DomainError("dt must be non-zero")
    t2 = t + dt
    if not 0.0 <= t2 <= field.T:
        raise DomainError(f"t + dt = {t2!r} outside [0, {field.T}]")
    if base is None:
        base = field.evaluate(x, t)
    return float(np.linalg.norm(field.evaluate(x, t2) - base)) / abs(dt)


@dataclass(frozen=True)
class CalibrationConfig:
    """``dt_probe=None`` probes at a quarter of each transition's width."""

    num_samples: int = 8
    seed: int = 0
    perturbation_scale: float = 0.1
    dt_probe: float | None = None
    aggregate: str = "mean"

    def __post_init__(self):
        if self.num_samples < 1:
            raise ConfigError("num_samples must be >= 1")
        if not self.perturbation_scale > 0:
            raise ConfigError("perturbation_scale must be > 0")
        if self.dt_probe is not None and not self.dt_probe > 0:
            raise ConfigError("dt_probe must be > 0")
        if self.aggregate not in ("mean", "max"):
            raise ConfigError(f"aggregate must be 'mean' or 'max', got {self.aggregate!r}")

    def validate_for(self, grid: TimestepGrid) -> None:
        if self.dt_probe is not None:
            min_spacing = float(np.min(-np.diff(grid.times)))
            if self.dt_probe >= min_spacing:
                raise ConfigError(f"dt_probe={self.dt_probe} not smaller than grid spacing {min_spacing}")


@dataclass(frozen=True)
class SensitivityProfile:
    """Calibrated ``(alpha_x, alpha_t)`` per grid time, ordered by decreasing t.

    Every grid time except ``t = 0`` has an entry.
    """

    times: np.ndarray
    alpha_x: np.ndarray
    alpha_t: np.ndarray
    samples: np.ndarray
    field_id: str = ""
    schedule_id: str = ""
    grid_hash: str = ""
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        arrays = {}
        for name in ("times", "alpha_x", "alpha_t"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            arrays[name] = arr
        samples = np.array(self.samples, dtype=np.int64)
        samples.setflags(write=False)
        n = arrays["times"].shape[0]
        if any(a.shape != (n,) for a in (*arrays.values(), samples)):
            raise DomainError("profile columns must have equal length")
        if np.any(arrays["alpha_x"] < 0) or np.any(arrays["alpha_t"] < 0):
            raise DomainError("sensitivities must be non-negative")
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.times.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SensitivityProfile):
            return NotImplemented
        return (all(np.array_equal(getattr(self, k), getattr(other, k))
                    for k in ("times", "alpha_x", "alpha_t", "samples"))
                and (self.field_id, self.schedule_id, self.grid_hash)
                == (other.field_id, other.schedule_id, other.grid_hash))

    __hash__ = None

    def index_of(self, t_ref: float) -> int:
        """Nearest entry; ties go to the larger t, out-of-range t clamps."""
        if len(self) == 0:
            raise PreconditionError("empty sensitivity profile")
        # times are decreasing, so argmin's first hit is the larger-t tie.
        return int(np.argmin(np.abs(self.times - t_ref)))

    def lookup(self, t_ref: float) -> tuple[float, float]:
        i = self.index_of(t_ref)
        return float(self.alpha_x[i]), float(self.alpha_t[i])

    def to_csv(self, path) -> Path:
        """Write the profile CSV plus a ``.meta.json`` sidecar; returns the sidecar path."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PROFILE_COLUMNS)
            for t, ax, at, n in zip(self.times, self.alpha_x, self.alpha_t, self.samples):
                w.writerow([format(t, ".17g"), format(ax, ".17g"), format(at, ".17g"), int(n)])
        meta_path = sidecar_path(path)
        meta = {
            "field_id": self.field_id,
            "schedule_id": self.schedule_id,
            "grid_hash": self.grid_hash,
            **self.metadata,
        }
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return meta_path

    @classmethod
    def from_csv(cls, path) -> SensitivityProfile:
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != PROFILE_COLUMNS:
                raise DomainError(f"unexpected profile header {header}")
            rows = list(reader)
        cols = list(zip(*rows)) if rows else [(), (), (), ()]
        meta_path = sidecar_path(path)
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(
            times=np.array([float(v) for v in cols[0]]),
            alpha_x=np.array([float(v) for v in cols[1]]),
            alpha_t=np.array([float(v) for v in cols[2]]),
            samples=np.array([int(v) for v in cols[3]]),
            field_id=meta.pop("field_id", ""),
            schedule_id=meta.pop("schedule_id", ""),
            grid_hash=meta.pop("grid_hash", ""),
            metadata=meta,
        )


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def lookup(profile: SensitivityProfile, t_ref: float) -> tuple[float, float]:
    return profile.lookup(t_ref)


def probe_trajectory(field: VelocityField, trajectory, config: CalibrationConfig
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Per-state secant estimates along one reference trajectory.

    The latent probe follows the Euler step at each state, scaled by
    ``perturbation_scale``; the time probe steps toward t=0.
    """
    K = trajectory.K
    ax = np.empty(K)
    at = np.empty(K)
    for i in range(K):
        x, t = trajectory.states[i], float(trajectory.times[i])
        width = t - float(trajectory.times[i + 1])
        step = trajectory.states[i + 1] - x
        if not np.any(step):
            # zero velocity: fall back to the diagonal direction at the same scale
            step = width * np.ones_like(x) / np.sqrt(x.shape[0])
        base = trajectory.velocities[i]
        ax[i] = estimate_jx(field, x, t, config.perturbation_scale * step, base)
        dt_probe = config.dt_probe if config.dt_probe is not None else 0.25 * width
        at[i] = estimate_jt(field, x, t, -dt_probe, base)
    return ax, at


def calibrate(field: VelocityField, grid: TimestepGrid, config: CalibrationConfig
              ) -> SensitivityProfile:
    """Average secant sensitivities over ``config.num_samples`` seeded runs.

    Sample ``j`` uses seed ``derive_seed(config.seed, j)``, so a smaller
    calibration set is always a prefix of a larger one.
    """
    config.validate_for(grid)
    per_sample_x = np.empty((config.num_samples, grid.K))
    per_sample_t = np.empty((config.num_samples, grid.K))
    for j in range(config.num_samples):
        try:
            traj = sample_reference(field, grid, derive_seed(config.seed, j))
        except DivergedTrajectoryError as exc:
            raise DivergedTrajectoryError(exc.step, sample=j) from exc
        per_sample_x[j], per_sample_t[j] = probe_trajectory(field, traj, config)

    reduce = np.mean if config.aggregate == "mean" else np.max
    schedule = getattr(field, "schedule", None)
    return SensitivityProfile(
        times=grid.times[:-1],
        alpha_x=reduce(per_sample_x, axis=0),
        alpha_t=reduce(per_sample_t, axis=0),
        samples=np.full(grid.K, config.num_samples),
        field_id=field.field_id,
        schedule_id=schedule.schedule_id if schedule is not None else "none",
        grid_hash=grid.grid_hash,
        metadata={"calibration": asdict(config), "seed": config.seed},
    )
