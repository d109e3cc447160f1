"""Conservative regularization through return-to-go perturbation.

High-return trajectories (``r_tau > r_q``) get their return-to-go shifted by a
positive offset ``ε ~ Uniform[r* - r_tau, r* - r_tau + sqrt(12) σ]``. The shifted
initial return is therefore always at least the highest return in the dataset, and
the policy is penalised for deviating from the recorded actions under that
out-of-distribution conditioning.
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field

from .model import DatasetStats, Trajectory
from .weighting import kappa_floor

if TYPE_CHECKING:
    from .policy import RvsPolicy

__all__ = [
    "ConservatismConfig",
    "NoiseBounds",
    "PerturbedTrajectory",
    "conservative_loss",
    "noise_bounds",
    "perturb_rtgs",
    "perturbed_conditioning",
    "resolve_noise_std",
    "sample_noise",
]

SQRT_12 = math.sqrt(12.0)


class ConservatismConfig(BaseModel):
    """Parameters of the conservative regularizer.

    Attributes
    ----------
    percentile_q : int
        Only trajectories with a return strictly above ``r_q`` are regularised.
    noise_std : float, optional
        Standard deviation ``σ`` of the noise, in return units. If unset, it resolves
        to ``r* - r_50`` of the training dataset.
    alpha : float
        Regularization coefficient ``α``. Zero disables the regularizer.
    """

    percentile_q: int = Field(default=95, ge=0, le=100)
    noise_std: float | None = Field(default=None, gt=0.0)
    alpha: float = Field(default=1.0, ge=0.0)

    model_config = ConfigDict(frozen=True, extra="forbid")


@dataclass(frozen=True, slots=True)
class NoiseBounds:
    """Support ``[lower, upper]`` of the uniform RTG noise of one trajectory."""

    lower: float
    upper: float

    @property
    def width(self) -> float:
        """Width of the interval."""
        return self.upper - self.lower


def noise_bounds(r_tau: float, r_star: float, sigma: float) -> NoiseBounds:
    """Noise interval for a trajectory with return ``r_tau``.

    The lower bound lifts the initial return-to-go to ``r*``; the width
    ``sqrt(12 σ²)`` makes the standard deviation of the uniform distribution ``σ``.

    Examples
    --------
    >>> bounds = cwbc.noise_bounds(90.0, 100.0, 10.0)
    >>> bounds.lower, round(bounds.upper, 4)
    (10.0, 44.641)
    """
    if sigma <= 0:
        raise ValueError(f"Noise standard deviation must be positive, got {sigma}.")
    lower = r_star - r_tau
    return NoiseBounds(lower=lower, upper=lower + SQRT_12 * sigma)


def sample_noise(bounds: NoiseBounds, rng: np.random.Generator) -> float:
    """Draw ``ε`` uniformly from the noise interval."""
    return float(rng.uniform(bounds.lower, bounds.upper))


def perturb_rtgs(rtg: ArrayLike, eps: float) -> NDArray[np.float64]:
    """Offset every return-to-go of a trajectory by ``ε``.

    Examples
    --------
    >>> cwbc.perturb_rtgs([6.0, 5.0, 3.0], 2.0).tolist()
    [8.0, 7.0, 5.0]
    """
    return np.asarray(rtg, dtype=np.float64) + eps


def resolve_noise_std(stats: DatasetStats, config: ConservatismConfig) -> float:
    """Resolve ``σ``: explicit values pass through, otherwise ``r* - r_50``.

    The median gap is floored like the weighting temperature so datasets with constant
    returns still produce a valid noise distribution.
    """
    if config.noise_std is not None:
        return config.noise_std
    return max(stats.max_return - stats.at(50), kappa_floor(stats))


@dataclass(frozen=True, slots=True, eq=False)
class PerturbedTrajectory:
    """A qualifying trajectory of a batch with its noisy average RTGs."""

    index: int
    eps: float
    omegas: NDArray[np.float64]


def perturbed_conditioning(
    batch: Sequence[Trajectory],
    config: ConservatismConfig,
    stats: DatasetStats,
    horizon: int,
    rng: np.random.Generator,
    *,
    sigma: float | None = None,
) -> list[PerturbedTrajectory]:
    """Draw noise for the qualifying trajectories of a batch.

    Exactly one ``ε`` is drawn per trajectory with ``r_tau > r_q``, in batch order;
    other trajectories consume no randomness. The noisy conditioning is
    ``ω_t = (g_t + ε) / (H - t + 1)``.

    Parameters
    ----------
    batch : Sequence[Trajectory]
        The minibatch shared with the behavior-cloning loss.
    config : ConservatismConfig
        The regularizer configuration.
    stats : DatasetStats
        Return statistics of the training dataset.
    horizon : int
        Episode horizon ``H``.
    rng : numpy.random.Generator
        Source of the noise.
    sigma : float, optional
        Resolved noise standard deviation; resolved from ``stats`` if omitted.
    """
    threshold = stats.at(config.percentile_q)
    sigma = resolve_noise_std(stats, config) if sigma is None else sigma

    perturbed: list[PerturbedTrajectory] = []
    for index, trajectory in enumerate(batch):
        if not trajectory.ret > threshold:
            continue
        eps = sample_noise(noise_bounds(trajectory.ret, stats.max_return, sigma), rng)
        remaining = horizon - np.arange(len(trajectory), dtype=np.float64)
        omegas = perturb_rtgs(trajectory.rtg, eps) / remaining
        perturbed.append(PerturbedTrajectory(index=index, eps=eps, omegas=omegas))
    return perturbed


def conservative_loss(
    policy: "RvsPolicy",
    batch: Sequence[Trajectory],
    config: ConservatismConfig,
    stats: DatasetStats,
    horizon: int,
    rng: np.random.Generator,
    *,
    sigma: float | None = None,
) -> float:
    """Evaluate the conservative regularizer on a batch.

    For every qualifying trajectory, the mean over its timesteps of
    ``||a_t - π(s_t, ω_t^ε)||²`` is computed; the result is the average over the
    qualifying trajectories, or zero if there are none.
    """
    perturbed = perturbed_conditioning(batch, config, stats, horizon, rng, sigma=sigma)
    if not perturbed:
        return 0.0

    losses = []
    for item in perturbed:
        trajectory = batch[item.index]
        predictions = policy.predict_batch(trajectory.states, item.omegas)
        errors = np.sum((predictions - trajectory.actions) ** 2, axis=1)
        losses.append(errors.mean())
    return float(np.mean(losses))
