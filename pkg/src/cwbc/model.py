"""Data model for offline trajectory datasets.

This module provides the in-memory representation of an offline dataset: single
transitions, whole trajectories with their eagerly computed return-to-go, and the
dataset-level order statistics of trajectory returns that weighting, conservatism and
evaluation all read from. It also provides the Pydantic models for the JSON-lines
dataset file format.
"""

from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator

__all__ = [
    "DatasetHeader",
    "DatasetStats",
    "OfflineDataset",
    "Trajectory",
    "TrajectoryRecord",
    "Transition",
    "average_rtg",
    "build_stats",
    "compute_rtg",
    "percentile",
]

Array = NDArray[np.float64]


def _frozen_array(values: ArrayLike, ndim: int, name: str) -> Array:
    array = np.array(values, dtype=np.float64)
    if array.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {array.shape}.")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} must only contain finite values.")
    array.setflags(write=False)
    return array


def compute_rtg(rewards: ArrayLike) -> Array:
    """Compute the undiscounted return-to-go of a reward sequence.

    Parameters
    ----------
    rewards : array_like
        Rewards ``r_1, ..., r_T`` of one trajectory.

    Returns
    -------
    numpy.ndarray
        ``g_t = sum_{t' >= t} r_t'`` for every timestep.

    Examples
    --------
    >>> cwbc.compute_rtg([1, 2, 3]).tolist()
    [6.0, 5.0, 3.0]
    >>> cwbc.compute_rtg([5]).tolist()
    [5.0]
    """
    values = np.asarray(rewards, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("Rewards must be a non-empty one-dimensional sequence.")
    if not np.all(np.isfinite(values)):
        raise ValueError("Rewards must only contain finite values.")
    return np.cumsum(values[::-1])[::-1].copy()


def average_rtg(g: float, t: int, horizon: int) -> float:
    """Return the average return-to-go ``g / (H - t + 1)`` at timestep ``t``.

    Timesteps are 1-based, so ``t = H`` divides by one.

    Examples
    --------
    >>> cwbc.average_rtg(3.0, 1, 3)
    1.0
    >>> cwbc.average_rtg(2.0, 10, 10)
    2.0
    """
    if horizon < 1:
        raise ValueError(f"Horizon must be positive, got {horizon}.")
    if not 1 <= t <= horizon:
        raise ValueError(f"Timestep {t} is outside of [1, {horizon}].")
    return g / (horizon - t + 1)


def percentile(returns: Iterable[float], q: int) -> float:
    """Nearest-rank percentile of a sequence of returns.

    The sorted values are indexed at ``ceil(q / 100 * N)``, clamped to ``[1, N]``, so
    ``q = 0`` yields the minimum and ``q = 100`` the maximum. Integer arithmetic keeps
    the rank exact.

    Examples
    --------
    >>> cwbc.percentile(range(1, 11), 50)
    5.0
    >>> cwbc.percentile(range(1, 11), 95)
    10.0
    >>> cwbc.percentile([7.0], 30)
    7.0
    """
    values = np.sort(np.fromiter(returns, dtype=np.float64))
    if values.size == 0:
        raise ValueError("Cannot compute a percentile of an empty sequence.")
    if not 0 <= q <= 100:
        raise ValueError(f"Percentile must be in [0, 100], got {q}.")

    rank = -(-q * values.size // 100)
    rank = min(max(rank, 1), values.size)
    return float(values[rank - 1])


@dataclass(frozen=True, slots=True)
class Transition:
    """A single ``(s_t, a_t, r_t)`` step of a trajectory."""

    state: Array
    action: Array
    reward: float


@dataclass(frozen=True, slots=True, eq=False)
class Trajectory:
    """An ordered sequence of transitions with its return-to-go.

    Attributes
    ----------
    states : numpy.ndarray
        Array of shape ``(T, state_dim)``.
    actions : numpy.ndarray
        Array of shape ``(T, action_dim)``.
    rewards : numpy.ndarray
        Array of shape ``(T,)``.
    rtg : numpy.ndarray
        Return-to-go ``g_t`` for every timestep, computed on construction.
    """

    states: Array
    actions: Array
    rewards: Array
    rtg: Array = field(init=False)

    def __init__(
        self, states: ArrayLike, actions: ArrayLike, rewards: ArrayLike
    ) -> None:
        states_array = _frozen_array(states, 2, "states")
        actions_array = _frozen_array(actions, 2, "actions")
        rewards_array = _frozen_array(rewards, 1, "rewards")

        length = rewards_array.shape[0]
        if length == 0:
            raise ValueError("A trajectory needs at least one transition.")
        if states_array.shape[0] != length or actions_array.shape[0] != length:
            raise ValueError(
                "States, actions and rewards must have the same length, got "
                f"{states_array.shape[0]}, {actions_array.shape[0]} and {length}."
            )

        rtg = compute_rtg(rewards_array)
        rtg.setflags(write=False)

        object.__setattr__(self, "states", states_array)
        object.__setattr__(self, "actions", actions_array)
        object.__setattr__(self, "rewards", rewards_array)
        object.__setattr__(self, "rtg", rtg)

    def __len__(self) -> int:
        return int(self.rewards.shape[0])

    @property
    def ret(self) -> float:
        """The trajectory return ``r_tau = g_1``."""
        return float(self.rtg[0])

    @property
    def transitions(self) -> Iterator[Transition]:
        """Iterate over the transitions of this trajectory."""
        for state, action, reward in zip(
            self.states, self.actions, self.rewards, strict=True
        ):
            yield Transition(state=state, action=action, reward=float(reward))


class DatasetStats(BaseModel):
    """Order statistics of the trajectory returns in a dataset.

    Attributes
    ----------
    max_return : float
        The highest return ``r*`` in the dataset.
    min_return : float
        The lowest return in the dataset.
    percentiles : dict[int, float]
        Nearest-rank percentile ``r_q`` for every integer ``q`` in ``[0, 100]``.
    count : int
        Number of trajectories.
    """

    max_return: float
    min_return: float
    percentiles: dict[int, float]
    count: int = Field(ge=1)

    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="after")
    def _check_order(self) -> "DatasetStats":
        levels = sorted(self.percentiles)
        values = [self.percentiles[level] for level in levels]
        if any(b < a for a, b in zip(values, values[1:], strict=False)):
            raise ValueError("Percentile table must be nondecreasing in q.")
        if self.percentiles.get(0, self.min_return) != self.min_return:
            raise ValueError("The 0-th percentile must equal the minimum return.")
        if self.percentiles.get(100, self.max_return) != self.max_return:
            raise ValueError("The 100-th percentile must equal the maximum return.")
        return self

    def at(self, q: int) -> float:
        """Return the percentile ``r_q``."""
        if q not in self.percentiles:
            raise ValueError(f"Percentile {q} is not part of the statistics table.")
        return self.percentiles[q]


@dataclass(frozen=True, slots=True, eq=False)
class OfflineDataset:
    """A static collection of trajectories with a fixed episode horizon.

    Attributes
    ----------
    trajectories : tuple[Trajectory, ...]
        The stored trajectories.
    horizon : int
        The maximum episode length ``H``. It is supplied by the data generator or the
        file header and never inferred from the trajectories.
    stats : DatasetStats
        Order statistics of the trajectory returns.
    """

    trajectories: tuple[Trajectory, ...]
    horizon: int
    stats: DatasetStats

    def __post_init__(self) -> None:
        if not self.trajectories:
            raise ValueError("An offline dataset needs at least one trajectory.")
        if self.horizon < 1:
            raise ValueError(f"Horizon must be positive, got {self.horizon}.")

        first = self.trajectories[0]
        for index, trajectory in enumerate(self.trajectories):
            if len(trajectory) > self.horizon:
                raise ValueError(
                    f"Trajectory {index} has length {len(trajectory)}, which exceeds "
                    f"the horizon {self.horizon}."
                )
            if (
                trajectory.states.shape[1] != first.states.shape[1]
                or trajectory.actions.shape[1] != first.actions.shape[1]
            ):
                raise ValueError(
                    f"Trajectory {index} has inconsistent state or action dimensions."
                )

    @classmethod
    def from_trajectories(
        cls, trajectories: Iterable[Trajectory], horizon: int
    ) -> "OfflineDataset":
        """Build a dataset and its return statistics."""
        trajectories = tuple(trajectories)
        if not trajectories:
            raise ValueError("An offline dataset needs at least one trajectory.")
        stats = _stats_from_returns([trajectory.ret for trajectory in trajectories])
        return cls(trajectories=trajectories, horizon=horizon, stats=stats)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def returns(self) -> Array:
        """Returns ``r_tau`` of all trajectories in storage order."""
        return np.array([trajectory.ret for trajectory in self.trajectories])

    @property
    def state_dim(self) -> int:
        """Dimension of the state vectors."""
        return int(self.trajectories[0].states.shape[1])

    @property
    def action_dim(self) -> int:
        """Dimension of the action vectors."""
        return int(self.trajectories[0].actions.shape[1])

    def subset(self, indices: Sequence[int]) -> "OfflineDataset":
        """Return a new dataset with the selected trajectories and rebuilt stats."""
        return OfflineDataset.from_trajectories(
            (self.trajectories[index] for index in indices), self.horizon
        )

    def state_moments(self) -> tuple[Array, Array]:
        """Mean and standard deviation of all states, used for standardisation.

        Dimensions with a (near) constant value get a standard deviation of one.
        """
        states = np.concatenate([trajectory.states for trajectory in self.trajectories])
        mean = states.mean(axis=0)
        std = states.std(axis=0)
        std = np.where(std < 1e-8, 1.0, std)
        return mean, std


def _stats_from_returns(returns: Sequence[float]) -> DatasetStats:
    if not returns:
        raise ValueError("Cannot build statistics of an empty dataset.")
    ordered = sorted(returns)
    return DatasetStats(
        max_return=ordered[-1],
        min_return=ordered[0],
        percentiles={q: percentile(ordered, q) for q in range(101)},
        count=len(ordered),
    )


def build_stats(dataset: OfflineDataset | Sequence[Trajectory]) -> DatasetStats:
    """Compute the return order statistics of a dataset.

    The result only depends on the multiset of trajectory returns, so rebuilding the
    statistics of a dataset is idempotent.
    """
    trajectories = (
        dataset.trajectories if isinstance(dataset, OfflineDataset) else dataset
    )
    return _stats_from_returns([trajectory.ret for trajectory in trajectories])


class DatasetHeader(BaseModel):
    """First line of a dataset file.

    Attributes
    ----------
    version : int
        Version of the file format; only ``1`` exists.
    horizon : int
        The episode horizon ``H``.
    state_dim : int
        Dimension of the state vectors.
    action_dim : int
        Dimension of the action vectors.
    """

    version: Literal[1]
    horizon: int = Field(ge=1)
    state_dim: int = Field(ge=1)
    action_dim: int = Field(ge=1)

    model_config = ConfigDict(extra="forbid")


class TrajectoryRecord(BaseModel):
    """One trajectory line of a dataset file. Return-to-go is never serialised."""

    states: list[list[float]] = Field(min_length=1)
    actions: list[list[float]] = Field(min_length=1)
    rewards: list[float] = Field(min_length=1)

    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    @model_validator(mode="after")
    def _check_lengths(self) -> "TrajectoryRecord":
        if not len(self.states) == len(self.actions) == len(self.rewards):
            raise ValueError("states, actions and rewards must have the same length.")
        return self

    @classmethod
    def from_trajectory(cls, trajectory: Trajectory) -> "TrajectoryRecord":
        """Convert a trajectory into its serialisable record."""
        return cls(
            states=trajectory.states.tolist(),
            actions=trajectory.actions.tolist(),
            rewards=trajectory.rewards.tolist(),
        )

    def to_trajectory(self) -> Trajectory:
        """Convert the record into a trajectory, computing its return-to-go."""
        return Trajectory(self.states, self.actions, self.rewards)
