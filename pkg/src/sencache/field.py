"""Velocity fields evaluated by the sampler.

Analytic fields carry exact Jacobian oracles, which is what the secant
estimators and caching bounds are checked against.  Gaussian fields use the
closed-form posterior of data ``x0 ~ N(mu, diag(var))`` given
``x_t = alpha(t) x0 + sigma(t) eps``:

    E[x0 | x_t = z]  = mu + alpha var / V (z - alpha mu)
    E[eps | x_t = z] = sigma / V (z - alpha mu),     V = alpha^2 var + sigma^2

so the velocity ``alpha' E[x0|z] + sigma' E[eps|z]`` is affine in ``z`` with
slope ``c(t) = (alpha' alpha var + sigma' sigma) / V``.
"""

from __future__ import annotations

import hashlib
import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError, UnsupportedOperationError
from .schedule import InterpolantSchedule

_LOG_2PI = math.log(2.0 * math.pi)


class VelocityField(ABC):
    """A denoiser ``f(x, t, c)`` returning a velocity with the shape of ``x``.

    Implementations must be deterministic and immutable; the condition token
    is held fixed for a whole run.
    """

    dim: int
    condition: object = None
    T: float = 1.0

    @abstractmethod
    def _velocity(self, x: np.ndarray, t: float) -> np.ndarray: ...

    @property
    @abstractmethod
    def params(self) -> dict: ...

    @property
    def family(self) -> str:
        return type(self).__name__

    @property
    def field_id(self) -> str:
        blob = json.dumps({"family": self.family, **self.params}, sort_keys=True)
        return f"{self.family}:{hashlib.sha256(blob.encode()).hexdigest()[:16]}"

    def _check(self, x, t) -> tuple[np.ndarray, float]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise DomainError(f"expected shape ({self.dim},), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite input state")
        t = float(t)
        if not math.isfinite(t):
            raise NumericError("non-finite time")
        if not 0.0 <= t <= self.T:
            raise DomainError(f"t={t!r} outside [0, {self.T}]")
        return x, t

    def evaluate(self, x, t: float) -> np.ndarray:
        x, t = self._check(x, t)
        return self._velocity(x, t)

    def __call__(self, x, t: float) -> np.ndarray:
        return self.evaluate(x, t)

    def exact_jacobian_x(self, x, t: float) -> np.ndarray:
        raise UnsupportedOperationError(f"{self.family} has no analytic d/dx oracle")

    def exact_jacobian_t(self, x, t: float) -> np.ndarray:
        raise UnsupportedOperationError(f"{self.family} has no analytic d/dt oracle")

    def jacobian_x_norm(self, x, t: float) -> float:
        """Spectral norm of the exact latent Jacobian."""
        return float(np.linalg.norm(self.exact_jacobian_x(x, t), 2))

    def jacobian_t_norm(self, x, t: float) -> float:
        return float(np.linalg.norm(self.exact_jacobian_t(x, t)))


def evaluate(field: VelocityField, x, t: float) -> np.ndarray:
    return field.evaluate(x, t)


def exact_jacobian_x(field: VelocityField, x, t: float) -> np.ndarray:
    return field.exact_jacobian_x(x, t)


def exact_jacobian_t(field: VelocityField, x, t: float) -> np.ndarray:
    return field.exact_jacobian_t(x, t)


@dataclass
class _Posterior:
    """Per-component closed-form quantities at one (z, t); arrays are (k, d)."""

    v: np.ndarray  # velocity
    slope: np.ndarray  # c(t), diagonal of d v / d z
    dv_dt: np.ndarray
    loglik: np.ndarray  # (k,) log N(z; alpha mu, V)
    grad_loglik: np.ndarray  # d loglik / d z
    dloglik_dt: np.ndarray  # (k,)


def _posterior(schedule: InterpolantSchedule, means, variances, z, t) -> _Posterior:
    a, s = schedule.alpha(t), schedule.sigma(t)
    ad, sd = schedule.alpha_dot(t), schedule.sigma_dot(t)
    add, sdd = schedule.alpha_ddot(t), schedule.sigma_ddot(t)

    V = a * a * variances + s * s
    dV = 2.0 * a * ad * variances + 2.0 * s * sd
    num = ad * a * variances + sd * s
    dnum = (add * a + ad * ad) * variances + sdd * s + sd * sd
    slope = num / V
    dslope = (dnum * V - num * dV) / (V * V)

    r = z - a * means
    v = ad * means + slope * r
    dv_dt = add * means + dslope * r - slope * ad * means

    loglik = -0.5 * np.sum(_LOG_2PI + np.log(V) + r * r / V, axis=-1)
    grad = -r / V
    dloglik = -0.5 * np.sum(dV / V - 2.0 * ad * means * r / V - r * r * dV / (V * V), axis=-1)
    return _Posterior(v, slope, dv_dt, loglik, grad, dloglik)


def _as_vector(values, dim: int | None, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0 and dim is not None:
        arr = np.full(dim, float(arr))
    if arr.ndim != 1:
        raise DomainError(f"{name} must be a vector")
    if dim is not None and arr.shape[0] != dim:
        raise DomainError(f"{name} has length {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


class GaussianField(VelocityField):
    """Exact velocity for Gaussian data with diagonal covariance."""

    def __init__(self, mean, covariance=1.0, schedule: InterpolantSchedule | None = None,
                 condition: object = None):
        self.mean = _as_vector(mean, None, "mean")
        self.dim = self.mean.shape[0]
        self.covariance = _as_vector(covariance, self.dim, "covariance")
        if np.any(self.covariance <= 0):
            raise DomainError("covariance entries must be positive")
        self.schedule = schedule or InterpolantSchedule()
        self.condition = condition
        self.mean.setflags(write=False)
        self.covariance.setflags(write=False)

    @classmethod
    def standard(cls, dim: int, schedule: InterpolantSchedule | None = None) -> GaussianField:
        return cls(np.zeros(dim), np.ones(dim), schedule)

    @property
    def params(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "schedule": self.schedule.schedule_id,
        }

    def _post(self, x, t) -> _Posterior:
        return _posterior(self.schedule, self.mean, self.covariance, x, t)

    def _velocity(self, x, t):
        return self._post(x, t).v

    def slope(self, t: float) -> np.ndarray:
        """Diagonal of the (x-independent) latent Jacobian at ``t``."""
        return self._post(np.zeros(self.dim), self._check(np.zeros(self.dim), t)[1]).slope

    def exact_jacobian_x(self, x, t):
        x, t = self._check(x, t)
        return np.diag(self._post(x, t).slope)

    def exact_jacobian_t(self, x, t):
        x, t = self._check(x, t)
        return self._post(x, t).dv_dt

    def jacobian_x_norm(self, x, t) -> float:
        x, t = self._check(x, t)
        return float(np.max(np.abs(self._post(x, t).slope)))


class GaussianMixtureField(VelocityField):
    """Exact velocity for a mixture of diagonal Gaussians.

    The velocity is the responsibility-weighted sum of component velocities;
    responsibilities are a max-subtracted softmax of component log-likelihoods
    of ``x_t``.
    """

    def __init__(self, weights, means, covariances, schedule: InterpolantSchedule | None = None,
                 condition: object = None):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        k, d = self.means.shape
        # scalar -> shared isotropic; (k,) -> isotropic per component; (k, d) -> diagonals
        cov = np.asarray(covariances, dtype=np.float64)
        if cov.ndim == 0:
            cov = np.full((k, d), float(cov))
        elif cov.ndim == 1 and cov.shape[0] == k:
            cov = np.repeat(cov[:, None], d, axis=1)
        self.covariances = np.array(cov, dtype=np.float64)

        if self.weights.shape != (k,):
            raise DomainError(f"expected {k} weights, got {self.weights.shape}")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise DomainError("mixture weights must be non-negative and sum to 1")
        if self.covariances.shape != (k, d):
            raise DomainError(f"covariances must have shape ({k}, {d})")
        if np.any(self.covariances <= 0):
            raise DomainError("covariance entries must be positive")
        if not (np.all(np.isfinite(self.means)) and np.all(np.isfinite(self.covariances))):
            raise DomainError("means and covariances must be finite")

        self.dim = d
        self.schedule = schedule or InterpolantSchedule()
        self.condition = condition
        with np.errstate(divide="ignore"):
            self._log_weights = np.log(self.weights)
        for arr in (self.weights, self.means, self.covariances):
            arr.setflags(write=False)

    @property
    def params(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "schedule": self.schedule.schedule_id,
        }

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def _post(self, x, t) -> tuple[_Posterior, np.ndarray]:
        post = _posterior(self.schedule, self.means, self.covariances, x, t)
        logits = self._log_weights + post.loglik
        logits = logits - np.max(logits)
        resp = np.exp(logits)
        resp /= resp.sum()
        return post, resp

    def responsibilities(self, x, t) -> np.ndarray:
        x, t = self._check(x, t)
        return self._post(x, t)[1]

    def _velocity(self, x, t):
        post, resp = self._post(x, t)
        return resp @ post.v

    def exact_jacobian_x(self, x, t):
        x, t = self._check(x, t)
        post, resp = self._post(x, t)
        centered = post.grad_loglik - resp @ post.grad_loglik
        return np.diag(resp @ post.slope) + (resp[:, None] * post.v).T @ centered

    def exact_jacobian_t(self, x, t):
        x, t = self._check(x, t)
        post, resp = self._post(x, t)
        dresp = resp * (post.dloglik_dt - resp @ post.dloglik_dt)
        return resp @ post.dv_dt + dresp @ post.v


class StiffSyntheticField(VelocityField):
    """``v(x, t) = a sin(w t) x + a cos(w t) 1``.

    Not a posterior velocity.  Its time derivative scales with ``w``, so
    large frequencies give profiles where the timestep term dominates.
    """

    def __init__(self, omega: float = 12.0, amplitude: float = 1.0, dim: int = 4,
                 condition: object = None):
        if dim < 1:
            raise DomainError("dim must be >= 1")
        self.omega = float(omega)
        self.amplitude = float(amplitude)
        self.dim = int(dim)
        self.condition = condition

    @property
    def params(self) -> dict:
        return {"omega": self.omega, "amplitude": self.amplitude, "dim": self.dim}

    def _velocity(self, x, t):
        wt = self.omega * t
        return self.amplitude * math.sin(wt) * x + self.amplitude * math.cos(wt)

    def exact_jacobian_x(self, x, t):
        x, t = self._check(x, t)
        return self.amplitude * math.sin(self.omega * t) * np.eye(self.dim)

    def exact_jacobian_t(self, x, t):
        x, t = self._check(x, t)
        wt = self.omega * t
        aw = self.amplitude * self.omega
        return aw * math.cos(wt) * x - aw * math.sin(wt) * np.ones(self.dim)

    def jacobian_x_norm(self, x, t) -> float:
        x, t = self._check(x, t)
        return abs(self.amplitude * math.sin(self.omega * t))
