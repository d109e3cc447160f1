"""Tests for trajectories, datasets and their return statistics."""

import numpy as np
import pytest
from pydantic import ValidationError

from cwbc.model import (
    DatasetStats,
    OfflineDataset,
    Trajectory,
    average_rtg,
    build_stats,
    compute_rtg,
    percentile,
)


def make_dataset(returns: list[float], horizon: int = 1) -> OfflineDataset:
    """Build a dataset of single-step trajectories with the given returns."""
    trajectories = [Trajectory([[0.0]], [[0.0]], [value]) for value in returns]
    return OfflineDataset.from_trajectories(trajectories, horizon)


def test_rtg_of_first_step_is_the_return() -> None:
    """The first return-to-go equals the sum of all rewards."""
    rng = np.random.default_rng(3)
    rewards = rng.normal(size=17)
    trajectory = Trajectory(np.zeros((17, 2)), np.zeros((17, 1)), rewards)

    assert trajectory.ret == pytest.approx(rewards.sum())
    assert trajectory.rtg[-1] == rewards[-1]
    assert np.allclose(trajectory.rtg[:-1] - trajectory.rtg[1:], rewards[:-1])


def test_compute_rtg_rejects_empty_and_non_finite() -> None:
    """Return-to-go needs a non-empty finite reward sequence."""
    with pytest.raises(ValueError):
        compute_rtg([])
    with pytest.raises(ValueError):
        compute_rtg([1.0, float("inf")])


def test_trajectory_arrays_are_read_only() -> None:
    """Trajectories are immutable after construction."""
    trajectory = Trajectory([[0.0]], [[1.0]], [2.0])

    with pytest.raises(ValueError):
        trajectory.rewards[0] = 5.0
    with pytest.raises(ValueError):
        trajectory.rtg[0] = 5.0


def test_trajectory_rejects_mismatched_lengths() -> None:
    """States, actions and rewards must align."""
    with pytest.raises(ValueError, match="same length"):
        Trajectory([[0.0], [1.0]], [[0.0]], [1.0, 2.0])


def test_transitions_iterate_in_order() -> None:
    """Transitions expose each step of a trajectory."""
    trajectory = Trajectory([[0.0], [1.0]], [[0.5], [-0.5]], [1.0, 2.0])
    rewards = [transition.reward for transition in trajectory.transitions]

    assert rewards == [1.0, 2.0]


def test_average_rtg_on_last_step_is_the_rtg() -> None:
    """At t = H the average return-to-go divides by one."""
    assert average_rtg(4.5, 7, 7) == 4.5
    with pytest.raises(ValueError):
        average_rtg(1.0, 0, 5)
    with pytest.raises(ValueError):
        average_rtg(1.0, 6, 5)


def test_percentile_nearest_rank() -> None:
    """Nearest-rank percentiles of ``1..100`` are the ranks themselves."""
    values = list(range(100, 0, -1))

    assert percentile(values, 0) == 1.0
    assert percentile(values, 1) == 1.0
    assert percentile(values, 37) == 37.0
    assert percentile(values, 100) == 100.0


def test_percentile_rejects_invalid_input() -> None:
    """Empty inputs and levels outside [0, 100] are rejected."""
    with pytest.raises(ValueError):
        percentile([], 50)
    with pytest.raises(ValueError):
        percentile([1.0], 101)


def test_stats_of_single_trajectory_are_constant() -> None:
    """With one trajectory every percentile equals its return."""
    dataset = make_dataset([3.5])

    assert dataset.stats.count == 1
    assert set(dataset.stats.percentiles.values()) == {3.5}


def test_stats_are_monotone_and_bounded() -> None:
    """Percentiles are nondecreasing and span the return range."""
    rng = np.random.default_rng(0)
    dataset = make_dataset(rng.normal(size=57).tolist())
    stats = dataset.stats
    values = [stats.at(q) for q in range(101)]

    assert values == sorted(values)
    assert stats.at(0) == stats.min_return
    assert stats.at(100) == stats.max_return


def test_build_stats_is_idempotent() -> None:
    """Rebuilding statistics yields the same table."""
    dataset = make_dataset([4.0, 1.0, 2.0, 2.0, 9.0])

    assert build_stats(dataset) == dataset.stats
    assert build_stats(dataset.subset(range(len(dataset)))) == dataset.stats


def test_stats_reject_unordered_percentiles() -> None:
    """The percentile table must be monotone."""
    with pytest.raises(ValidationError):
        DatasetStats(
            max_return=2.0,
            min_return=0.0,
            percentiles={0: 0.0, 50: 1.5, 60: 1.0, 100: 2.0},
            count=3,
        )


def test_stats_at_rejects_unknown_level() -> None:
    """Only tabulated percentile levels can be looked up."""
    stats = DatasetStats(
        max_return=1.0, min_return=0.0, percentiles={0: 0.0, 100: 1.0}, count=2
    )

    with pytest.raises(ValueError):
        stats.at(50)


def test_dataset_rejects_trajectory_longer_than_horizon() -> None:
    """The horizon bounds every trajectory length."""
    trajectory = Trajectory([[0.0], [0.0]], [[0.0], [0.0]], [1.0, 1.0])

    with pytest.raises(ValueError, match="exceeds the horizon"):
        OfflineDataset.from_trajectories([trajectory], horizon=1)


def test_dataset_rejects_mixed_dimensions() -> None:
    """All trajectories share their state and action dimensions."""
    first = Trajectory([[0.0]], [[0.0]], [1.0])
    second = Trajectory([[0.0, 0.0]], [[0.0]], [1.0])

    with pytest.raises(ValueError, match="inconsistent"):
        OfflineDataset.from_trajectories([first, second], horizon=1)


def test_dataset_rejects_empty() -> None:
    """A dataset holds at least one trajectory."""
    with pytest.raises(ValueError):
        OfflineDataset.from_trajectories([], horizon=1)


def test_state_moments_handle_constant_dimensions() -> None:
    """Constant state dimensions standardise with unit scale."""
    trajectory = Trajectory([[1.0, 0.0], [1.0, 2.0]], [[0.0], [0.0]], [1.0, 1.0])
    dataset = OfflineDataset.from_trajectories([trajectory], horizon=2)
    mean, std = dataset.state_moments()

    assert mean.tolist() == [1.0, 1.0]
    assert std.tolist() == [1.0, 1.0]
