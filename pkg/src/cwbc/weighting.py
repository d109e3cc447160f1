"""Return-binned trajectory weighting.

Trajectories are sorted by return and split into ``B`` equal-sized bins. A bin ``b``
is drawn with probability

    P_bin(b) ∝ f(b) / (f(b) + λ) · exp(-|r̄_b - r*| / κ),

where ``f(b)`` is the fraction of trajectories in the bin and ``r̄_b`` their mean
return, and a trajectory is then drawn uniformly from the chosen bin. The module also
contains the continuous form of this weight for diagnostics and the hard-filtering
baseline that keeps only the highest-return trajectories.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, replace
from typing import Protocol

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field

from .model import DatasetStats, OfflineDataset

__all__ = [
    "BinLayout",
    "BinnedSampler",
    "TrajectorySampler",
    "UniformSampler",
    "WeightingConfig",
    "bin_density",
    "bin_probabilities",
    "build_bins",
    "density_weight",
    "filter_top_fraction",
    "kappa_floor",
    "resolve_kappa",
    "sample_batch",
    "sample_trajectory",
]

logger = logging.getLogger(__name__)


class WeightingConfig(BaseModel):
    """Parameters of the binned trajectory weighting.

    Attributes
    ----------
    num_bins : int
        Number of bins ``B``.
    lambda_ : float
        Smoothing parameter ``λ``; serialised as ``lambda``.
    kappa : float, optional
        Explicit temperature ``κ``. Takes precedence over ``kappa_percentile``.
    kappa_percentile : int
        Percentile ``z`` of the gap rule ``κ = r* - r_z``, used if ``kappa`` is unset.
    """

    num_bins: int = Field(default=20, ge=1)
    lambda_: float = Field(default=0.01, ge=0.0, alias="lambda")
    kappa: float | None = Field(default=None, gt=0.0)
    kappa_percentile: int = Field(default=90, ge=0, le=100)

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)


@dataclass(frozen=True, slots=True, eq=False)
class BinLayout:
    """Return-sorted partition of a dataset into bins.

    Attributes
    ----------
    bins : tuple[numpy.ndarray, ...]
        Trajectory indices of each bin, lowest returns first.
    mean_returns : numpy.ndarray
        Mean return ``r̄_b`` per bin.
    frequencies : numpy.ndarray
        Fraction ``f(b) = |b| / N`` of trajectories per bin.
    probabilities : numpy.ndarray, optional
        Sampling probability ``P_bin(b)``; unset until :func:`bin_probabilities` has
        been applied through :meth:`with_probabilities`.
    """

    bins: tuple[NDArray[np.intp], ...]
    mean_returns: NDArray[np.float64]
    frequencies: NDArray[np.float64]
    probabilities: NDArray[np.float64] | None = None

    @property
    def num_bins(self) -> int:
        """Number of bins."""
        return len(self.bins)

    @property
    def sizes(self) -> list[int]:
        """Number of trajectories per bin."""
        return [int(group.size) for group in self.bins]

    def with_probabilities(self, probabilities: NDArray[np.float64]) -> "BinLayout":
        """Return a copy of this layout carrying sampling probabilities."""
        probabilities = np.asarray(probabilities, dtype=np.float64)
        if probabilities.shape != (self.num_bins,):
            raise ValueError(
                f"Expected {self.num_bins} bin probabilities, "
                f"got {probabilities.shape}."
            )
        probabilities.setflags(write=False)
        return replace(self, probabilities=probabilities)

    def bin_of(self) -> NDArray[np.intp]:
        """Map every trajectory index to the index of its bin."""
        total = sum(self.sizes)
        lookup = np.empty(total, dtype=np.intp)
        for index, group in enumerate(self.bins):
            lookup[group] = index
        return lookup


def build_bins(dataset: OfflineDataset, num_bins: int) -> BinLayout:
    """Group the trajectories of a dataset into equal-sized return bins.

    Trajectories are sorted by return with a stable sort, so ties keep their storage
    order. When ``N`` is not divisible by ``B``, the ``N mod B`` lowest-return bins
    receive one extra trajectory each.

    Examples
    --------
    >>> from cwbc.model import OfflineDataset, Trajectory
    >>> trajectories = [Trajectory([[0.0]], [[0.0]], [float(r)]) for r in range(7)]
    >>> dataset = OfflineDataset.from_trajectories(trajectories, horizon=1)
    >>> cwbc.build_bins(dataset, 3).sizes
    [3, 2, 2]
    """
    count = len(dataset)
    if num_bins < 1:
        raise ValueError(f"Number of bins must be positive, got {num_bins}.")
    if num_bins > count:
        raise ValueError(
            f"Cannot split {count} trajectories into {num_bins} non-empty bins."
        )

    returns = dataset.returns
    order = np.argsort(returns, kind="stable")

    base, remainder = divmod(count, num_bins)
    sizes = [base + 1 if index < remainder else base for index in range(num_bins)]
    boundaries = np.cumsum([0, *sizes])
    bins = tuple(
        order[start:stop]
        for start, stop in zip(boundaries[:-1], boundaries[1:], strict=True)
    )
    for group in bins:
        group.setflags(write=False)

    mean_returns = np.array([returns[group].mean() for group in bins])
    frequencies = np.array(sizes, dtype=np.float64) / count
    return BinLayout(bins=bins, mean_returns=mean_returns, frequencies=frequencies)


def bin_probabilities(
    layout: BinLayout, lam: float, kappa: float, r_star: float
) -> NDArray[np.float64]:
    """Compute the bin sampling probabilities ``P_bin``.

    The weights are combined in log space, so a tiny ``κ`` concentrates all mass on
    the bins closest to ``r*`` instead of underflowing to zero everywhere.

    Parameters
    ----------
    layout : BinLayout
        The bin layout.
    lam : float
        Smoothing parameter ``λ >= 0``.
    kappa : float
        Temperature ``κ > 0``.
    r_star : float
        Reference return, usually the highest return in the dataset.

    Returns
    -------
    numpy.ndarray
        Probabilities summing to one.
    """
    if kappa <= 0:
        raise ValueError(f"Temperature kappa must be positive, got {kappa}.")
    if lam < 0:
        raise ValueError(f"Smoothing parameter lambda must be nonnegative, got {lam}.")

    frequencies = layout.frequencies
    log_weights = np.log(frequencies / (frequencies + lam)) - (
        np.abs(layout.mean_returns - r_star) / kappa
    )
    weights = np.exp(log_weights - log_weights.max())
    return weights / weights.sum()


def kappa_floor(stats: DatasetStats) -> float:
    """Smallest temperature used when a percentile gap degenerates."""
    return 1e-6 * max(abs(stats.max_return), 1.0)


def resolve_kappa(stats: DatasetStats, config: WeightingConfig) -> float:
    """Resolve the temperature ``κ`` of a weighting configuration.

    An explicit ``κ`` is passed through. Otherwise ``κ = r* - r_z``, floored at
    ``1e-6 · max(|r*|, 1)`` so constant returns still yield a valid temperature.
    """
    if config.kappa is not None:
        return config.kappa

    gap = stats.max_return - stats.at(config.kappa_percentile)
    return max(gap, kappa_floor(stats))


def sample_trajectory(layout: BinLayout, rng: np.random.Generator) -> int:
    """Draw one trajectory index: a bin by ``P_bin``, then uniformly within it."""
    if layout.probabilities is None:
        raise ValueError("Bin probabilities have not been computed for this layout.")

    bin_index = rng.choice(layout.num_bins, p=layout.probabilities)
    group = layout.bins[bin_index]
    return int(group[rng.integers(group.size)])


def sample_batch(
    layout: BinLayout, rng: np.random.Generator, size: int
) -> NDArray[np.intp]:
    """Draw ``size`` trajectory indices independently with the two-stage scheme."""
    if layout.probabilities is None:
        raise ValueError("Bin probabilities have not been computed for this layout.")

    bin_indices = rng.choice(layout.num_bins, size=size, p=layout.probabilities)
    sizes = np.array(layout.sizes)
    offsets = np.floor(rng.random(size) * sizes[bin_indices]).astype(np.intp)
    return np.array(
        [layout.bins[b][o] for b, o in zip(bin_indices, offsets, strict=True)],
        dtype=np.intp,
    )


class TrajectorySampler(Protocol):
    """Anything that draws batches of trajectory indices."""

    def sample(self, rng: np.random.Generator, size: int) -> NDArray[np.intp]:
        """Draw ``size`` trajectory indices."""
        ...


@dataclass(frozen=True, slots=True)
class UniformSampler:
    """Draw trajectories uniformly with replacement."""

    count: int

    def sample(self, rng: np.random.Generator, size: int) -> NDArray[np.intp]:
        """Draw ``size`` trajectory indices."""
        return rng.integers(self.count, size=size).astype(np.intp)


@dataclass(frozen=True, slots=True)
class BinnedSampler:
    """Draw trajectories with the binned weighting scheme."""

    layout: BinLayout

    def sample(self, rng: np.random.Generator, size: int) -> NDArray[np.intp]:
        """Draw ``size`` trajectory indices."""
        return sample_batch(self.layout, rng, size)


def filter_top_fraction(dataset: OfflineDataset, fraction: float) -> OfflineDataset:
    """Keep the ``ceil(p · N)`` trajectories with the highest returns.

    Among equal returns, trajectories stored earlier are kept first. The kept
    trajectories retain their storage order and the statistics are rebuilt.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"Filter fraction must be in (0, 1], got {fraction}.")

    count = len(dataset)
    # Rounding first keeps products such as 0.3 * 10 from landing just above 3.
    keep = min(max(math.ceil(round(fraction * count, 9)), 1), count)
    order = np.argsort(-dataset.returns, kind="stable")
    selected = np.sort(order[:keep])

    logger.info(
        "Filtered dataset to the top %d of %d trajectories (fraction %s).",
        keep,
        count,
        fraction,
    )
    return dataset.subset(selected.tolist())


def density_weight(
    r: float, hist_density: float, lam: float, kappa: float, r_star: float
) -> float:
    """Unnormalised continuous-form trajectory weight.

    Computes ``f / (f + λ) · exp(-|r - r*| / κ)`` for a return ``r`` with density
    ``f``. Returns without support (``f = 0``) get weight zero.

    Examples
    --------
    >>> cwbc.density_weight(5.0, 0.2, 0.0, 1.0, 5.0)
    1.0
    >>> cwbc.density_weight(5.0, 0.0, 0.0, 1.0, 5.0)
    0.0
    """
    if kappa <= 0:
        raise ValueError(f"Temperature kappa must be positive, got {kappa}.")
    if hist_density < 0:
        raise ValueError(f"Density must be nonnegative, got {hist_density}.")
    if hist_density == 0:
        return 0.0
    return hist_density / (hist_density + lam) * math.exp(-abs(r - r_star) / kappa)


def bin_density(layout: BinLayout, returns: Sequence[float]) -> NDArray[np.float64]:
    """Histogram density of the returns over the bins of a layout.

    The density of a bin is its frequency divided by the width of the return range it
    covers. Bins whose returns are all equal use the mean non-degenerate width, or a
    width of one if every bin is degenerate.
    """
    values = np.asarray(returns, dtype=np.float64)
    widths = np.array([np.ptp(values[group]) for group in layout.bins])
    positive = widths[widths > 0]
    fallback = float(positive.mean()) if positive.size else 1.0
    widths = np.where(widths > 0, widths, fallback)
    return layout.frequencies / widths
