"""Named benchmark fields shared by the acceptance suite and the CLI."""

from __future__ import annotations

import numpy as np

from .field import GaussianMixtureField, StiffSyntheticField
from .rng import NormalStream
from .schedule import InterpolantSchedule


def suite_mixture(dim: int = 1024, seed: int = 1, mean_norm: float = 2.0) -> GaussianMixtureField:
    """Three-component mixture with a shared diagonal covariance.

    Variances span roughly [0.5, 2] so the latent and timestep terms do not
    cancel, and the high dimension keeps per-sample secant estimates close
    to their average.
    """
    means = NormalStream(seed).standard_normal(3 * dim).reshape(3, dim)
    means *= mean_norm / np.linalg.norm(means, axis=1, keepdims=True)
    variances = np.logspace(-0.3, 0.3, dim)
    return GaussianMixtureField(
        weights=[0.3, 0.4, 0.3],
        means=means,
        covariances=np.tile(variances, (3, 1)),
        schedule=InterpolantSchedule("linear"),
    )


def small_mixture(dim: int = 8) -> GaussianMixtureField:
    """Low-dimensional mixture with well separated components."""
    rng = NormalStream(11).standard_normal(3 * dim).reshape(3, dim)
    return GaussianMixtureField(
        weights=[0.2, 0.5, 0.3],
        means=1.5 * rng,
        covariances=[0.3, 1.0, 2.0],
        schedule=InterpolantSchedule("linear"),
    )


def suite_stiff(dim: int = 4) -> StiffSyntheticField:
    """Stiff field with one broad burst of sensitivity over [0, 1].

    A low base frequency with a large amplitude concentrates the output
    change in time, which is the regime where step allocation matters.
    """
    return StiffSyntheticField(omega=2.0, amplitude=25.0, dim=dim)
