"""Tests for the return-to-go perturbation and the conservative regularizer."""

import math

import numpy as np
import pytest

from cwbc.conservatism import (
    ConservatismConfig,
    conservative_loss,
    noise_bounds,
    perturbed_conditioning,
    resolve_noise_std,
    sample_noise,
)
from cwbc.model import OfflineDataset, Trajectory
from cwbc.nn import DenseNet
from cwbc.policy import RvsPolicy


def make_dataset(returns: list[float]) -> OfflineDataset:
    """Build a dataset of three-step trajectories with the given returns."""
    rng = np.random.default_rng(0)
    trajectories = [
        Trajectory(
            rng.normal(size=(3, 2)),
            rng.uniform(-1, 1, size=(3, 1)),
            value * np.array([0.25, 0.25, 0.5]),
        )
        for value in returns
    ]
    return OfflineDataset.from_trajectories(trajectories, horizon=5)


def test_noise_bounds_lift_return_to_dataset_maximum() -> None:
    """The interval starts at the gap to ``r*`` and has width ``sqrt(12) σ``."""
    bounds = noise_bounds(3.0, 10.0, 2.0)

    assert bounds.lower == 7.0
    assert bounds.width == pytest.approx(math.sqrt(12) * 2.0)
    with pytest.raises(ValueError):
        noise_bounds(3.0, 10.0, 0.0)


def test_noise_has_the_configured_moments() -> None:
    """Noise is uniform with standard deviation ``σ``."""
    bounds = noise_bounds(9.0, 10.0, 0.5)
    rng = np.random.default_rng(1)
    draws = np.array([sample_noise(bounds, rng) for _ in range(100_000)])

    assert draws.min() >= bounds.lower
    assert draws.max() <= bounds.upper
    assert draws.std() == pytest.approx(0.5, rel=0.02)
    assert draws.mean() == pytest.approx(1.0 + math.sqrt(3) * 0.5, rel=0.01)


def test_noise_std_defaults_to_median_gap() -> None:
    """Without an explicit value, σ is the gap between maximum and median."""
    dataset = make_dataset([float(value) for value in range(1, 11)])

    assert resolve_noise_std(dataset.stats, ConservatismConfig()) == 5.0
    assert resolve_noise_std(dataset.stats, ConservatismConfig(noise_std=0.3)) == 0.3


def test_only_high_return_trajectories_are_perturbed() -> None:
    """Only returns strictly above the percentile threshold receive noise."""
    dataset = make_dataset([float(value) for value in range(1, 21)])
    config = ConservatismConfig(percentile_q=90)
    perturbed = perturbed_conditioning(
        dataset.trajectories,
        config,
        dataset.stats,
        dataset.horizon,
        np.random.default_rng(0),
    )

    assert [item.index for item in perturbed] == [18, 19]


def test_perturbed_initial_rtg_reaches_dataset_maximum() -> None:
    """Shifted initial returns are at least the highest dataset return."""
    dataset = make_dataset([1.0, 4.0, 6.0, 9.0, 9.5, 10.0])
    config = ConservatismConfig(percentile_q=0)
    horizon = dataset.horizon
    perturbed = perturbed_conditioning(
        dataset.trajectories, config, dataset.stats, horizon, np.random.default_rng(2)
    )

    assert perturbed
    for item in perturbed:
        trajectory = dataset.trajectories[item.index]
        initial = item.omegas[0] * horizon
        assert initial >= dataset.stats.max_return - 1e-12
        remaining = horizon - np.arange(len(trajectory))
        assert item.omegas * remaining == pytest.approx(trajectory.rtg + item.eps)


def test_no_qualifying_trajectory_draws_no_noise() -> None:
    """Batches without qualifying trajectories leave the generator untouched."""
    dataset = make_dataset([1.0, 2.0, 3.0])
    config = ConservatismConfig(percentile_q=100)
    rng = np.random.default_rng(3)
    before = rng.bit_generator.state

    assert not perturbed_conditioning(
        dataset.trajectories, config, dataset.stats, dataset.horizon, rng
    )
    assert rng.bit_generator.state == before


def test_conservative_loss_is_zero_without_qualifying_trajectories() -> None:
    """No qualifying trajectories means no penalty."""
    dataset = make_dataset([1.0, 1.0, 1.0])
    policy = RvsPolicy.create(dataset, hidden=(4,), seed=0)
    loss = conservative_loss(
        policy,
        dataset.trajectories,
        ConservatismConfig(),
        dataset.stats,
        dataset.horizon,
        np.random.default_rng(0),
    )

    assert loss == 0.0


def test_conservative_loss_averages_over_qualifying_trajectories() -> None:
    """The penalty is the mean of per-trajectory squared errors."""
    dataset = make_dataset([1.0, 2.0, 3.0, 4.0])
    net = DenseNet.init((3, 1), seed=0)
    net.weights[0][...] = 0.0
    net.biases[0][...] = 0.5
    policy = RvsPolicy(
        net, 2, 1, dataset.horizon, state_mean=np.zeros(2), state_std=np.ones(2)
    )
    config = ConservatismConfig(percentile_q=50)

    loss = conservative_loss(
        policy,
        dataset.trajectories,
        config,
        dataset.stats,
        dataset.horizon,
        np.random.default_rng(0),
    )

    expected = np.mean(
        [
            np.mean((trajectory.actions[:, 0] - 0.5) ** 2)
            for trajectory in dataset.trajectories[2:]
        ]
    )
    assert loss == pytest.approx(expected)
