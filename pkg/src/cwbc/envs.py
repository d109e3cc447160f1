"""Synthetic dense-reward control environments and behavior-policy datasets.

An environment is a point moving inside a box ``[low, high]^d`` towards a goal. Each
step moves the point by ``step_size · action`` plus Gaussian noise, and the reward
``1 - ||s' - goal|| / diameter`` is dense and at most one. Episodes always last exactly
``H`` steps.

Datasets are rolled out with a mixture of behavior policies of different quality: a
policy of quality ``p`` heads straight for the goal with probability ``p`` and acts
uniformly at random otherwise.
"""

import logging
import math
import tomllib
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .datafile import write_dataset
from .model import OfflineDataset, Trajectory

__all__ = [
    "ENVS",
    "RECIPES",
    "DatasetRecipe",
    "EnvSpec",
    "MixtureComponent",
    "behavior_action",
    "generate_dataset",
    "load_env",
    "make_recipe",
    "reference_returns",
    "reset",
    "rollout_behavior",
    "step",
]

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]


class EnvSpec(BaseModel):
    """Specification of a goal-reaching point environment.

    Attributes
    ----------
    name : str
        Identifier of the environment.
    state_dim : int
        Dimension of the state space.
    action_dim : int
        Dimension of the action space; equal to ``state_dim``.
    horizon : int
        Fixed episode length ``H``.
    goal : list[float]
        Goal position.
    start : list[float]
        Centre of the start distribution.
    start_spread : float
        Half-width of the uniform jitter added to the start position.
    step_size : float
        Displacement of a unit action.
    noise_std : float
        Standard deviation of the Gaussian transition noise.
    low, high : float
        Bounds of the state box.
    reward_rule : {"distance"}
        Reward identifier; only the normalised goal distance exists.
    """

    name: str
    state_dim: int = Field(ge=1)
    action_dim: int = Field(ge=1)
    horizon: int = Field(ge=1)
    goal: list[float]
    start: list[float]
    start_spread: float = Field(default=0.0, ge=0.0)
    step_size: float = Field(gt=0.0)
    noise_std: float = Field(default=0.0, ge=0.0)
    low: float = -1.0
    high: float = 1.0
    reward_rule: Literal["distance"] = "distance"

    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="after")
    def _check_shapes(self) -> "EnvSpec":
        if self.action_dim != self.state_dim:
            raise ValueError("Point environments need action_dim == state_dim.")
        if len(self.goal) != self.state_dim or len(self.start) != self.state_dim:
            raise ValueError("goal and start must have state_dim entries.")
        if not self.low < self.high:
            raise ValueError("low must be smaller than high.")
        return self

    @property
    def diameter(self) -> float:
        """Largest distance between two states."""
        return (self.high - self.low) * math.sqrt(self.state_dim)


ENVS: dict[str, EnvSpec] = {
    "lineworld": EnvSpec(
        name="lineworld",
        state_dim=1,
        action_dim=1,
        horizon=40,
        goal=[0.8],
        start=[-0.6],
        start_spread=0.3,
        step_size=0.05,
        noise_std=0.02,
    ),
    "planeworld": EnvSpec(
        name="planeworld",
        state_dim=2,
        action_dim=2,
        horizon=40,
        goal=[0.7, 0.7],
        start=[-0.6, -0.6],
        start_spread=0.3,
        step_size=0.1,
        noise_std=0.02,
    ),
}


def load_env(name_or_path: str | Path) -> EnvSpec:
    """Load a shipped environment by name or an environment TOML file."""
    if isinstance(name_or_path, str) and name_or_path in ENVS:
        return ENVS[name_or_path]

    path = Path(name_or_path)
    if path.suffix != ".toml" or not path.is_file():
        raise ValueError(
            f"Unknown environment '{name_or_path}'. Available environments: "
            f"{sorted(ENVS)}, or a path to a .toml file."
        )
    with path.open("rb") as file_handle:
        data = tomllib.load(file_handle)
    return EnvSpec.model_validate(data.get("env", data))


def reset(spec: EnvSpec, rng: np.random.Generator) -> Array:
    """Draw a start state."""
    start = np.array(spec.start, dtype=np.float64)
    if spec.start_spread > 0:
        spread = spec.start_spread
        start = start + rng.uniform(-spread, spread, spec.state_dim)
    return np.clip(start, spec.low, spec.high)


def step(
    spec: EnvSpec, state: ArrayLike, action: ArrayLike, rng: np.random.Generator
) -> tuple[Array, float]:
    """Advance the environment by one step.

    The action is clamped to ``[-1, 1]^d`` before it is applied.

    Returns
    -------
    tuple[numpy.ndarray, float]
        The next state and the reward of the transition.
    """
    state = np.asarray(state, dtype=np.float64)
    action = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    if action.shape != (spec.action_dim,):
        raise ValueError(
            f"Expected an action of dimension {spec.action_dim}, got {action.shape}."
        )

    next_state = state + spec.step_size * action
    if spec.noise_std > 0:
        next_state = next_state + rng.normal(0.0, spec.noise_std, spec.state_dim)
    next_state = np.clip(next_state, spec.low, spec.high)

    distance = float(np.linalg.norm(next_state - np.asarray(spec.goal)))
    return next_state, 1.0 - distance / spec.diameter


def behavior_action(
    quality: float,
    state: ArrayLike,
    goal: ArrayLike,
    rng: np.random.Generator,
    *,
    step_size: float | None = None,
) -> Array:
    """Action of a behavior policy of the given quality.

    With probability ``quality`` the action is a unit step towards the goal, shortened
    to land on the goal when it is within ``step_size``; otherwise the action is
    uniform in ``[-1, 1]^d``.
    """
    if not 0.0 <= quality <= 1.0:
        raise ValueError(f"Behavior quality must be in [0, 1], got {quality}.")

    state = np.asarray(state, dtype=np.float64)
    if rng.random() >= quality:
        return rng.uniform(-1.0, 1.0, state.shape[0])

    direction = np.asarray(goal, dtype=np.float64) - state
    distance = float(np.linalg.norm(direction))
    if distance == 0.0:
        return np.zeros_like(state)
    length = 1.0 if step_size is None else min(1.0, distance / step_size)
    return np.clip(direction / distance * length, -1.0, 1.0)


def rollout_behavior(
    spec: EnvSpec, quality: float, rng: np.random.Generator
) -> Trajectory:
    """Roll out one full-horizon episode with a behavior policy."""
    state = reset(spec, rng)
    states, actions, rewards = [], [], []
    for _ in range(spec.horizon):
        action = np.clip(
            behavior_action(quality, state, spec.goal, rng, step_size=spec.step_size),
            -1.0,
            1.0,
        )
        next_state, reward = step(spec, state, action, rng)
        states.append(state)
        actions.append(action)
        rewards.append(reward)
        state = next_state
    return Trajectory(states, actions, rewards)


class MixtureComponent(BaseModel):
    """A behavior quality level and the number of trajectories rolled out with it."""

    quality: float = Field(ge=0.0, le=1.0)
    count: int = Field(ge=1)

    model_config = ConfigDict(frozen=True, extra="forbid")


class DatasetRecipe(BaseModel):
    """Everything needed to reproduce a generated dataset."""

    env: EnvSpec
    mixture: list[MixtureComponent] = Field(min_length=1)
    seed: int = 0

    model_config = ConfigDict(frozen=True, extra="forbid")

    @property
    def qualities(self) -> list[float]:
        """Behavior quality of every trajectory, in generation order."""
        return [
            component.quality
            for component in self.mixture
            for _ in range(component.count)
        ]


# Behavior qualities of the shipped mixtures; trajectories are split evenly.
RECIPES: dict[str, tuple[float, ...]] = {
    "medium": (0.4,),
    "med-replay": (0.1, 0.2, 0.3, 0.4, 0.5),
    "med-expert": (0.4, 1.0),
}


def make_recipe(name: str, env: EnvSpec, n: int, seed: int = 0) -> DatasetRecipe:
    """Expand a shipped mixture name into a recipe with ``n`` trajectories.

    Examples
    --------
    >>> recipe = cwbc.make_recipe("med-replay", cwbc.ENVS["lineworld"], n=12)
    >>> [(c.quality, c.count) for c in recipe.mixture]
    [(0.1, 3), (0.2, 3), (0.3, 2), (0.4, 2), (0.5, 2)]
    """
    if name not in RECIPES:
        raise ValueError(f"Unknown recipe '{name}'. Available: {sorted(RECIPES)}.")
    qualities = RECIPES[name]
    if n < len(qualities):
        raise ValueError(
            f"Recipe '{name}' needs at least {len(qualities)} trajectories, got {n}."
        )

    base, remainder = divmod(n, len(qualities))
    mixture = [
        MixtureComponent(quality=quality, count=base + (index < remainder))
        for index, quality in enumerate(qualities)
    ]
    return DatasetRecipe(env=env, mixture=mixture, seed=seed)


def _trajectory_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def generate_dataset(
    recipe: DatasetRecipe, path: Path | str | None = None, *, workers: int = 1
) -> OfflineDataset:
    """Roll out a recipe into a dataset and optionally write it to ``path``.

    Every trajectory uses its own random stream derived from ``(seed, index)``, so the
    result does not depend on ``workers``.
    """
    qualities = recipe.qualities
    spec = recipe.env

    def rollout(index: int) -> Trajectory:
        return rollout_behavior(
            spec, qualities[index], _trajectory_rng(recipe.seed, index)
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            trajectories = list(executor.map(rollout, range(len(qualities))))
    else:
        trajectories = [rollout(index) for index in range(len(qualities))]

    dataset = OfflineDataset.from_trajectories(trajectories, spec.horizon)
    logger.info(
        "Generated %d trajectories on %s (max return %.3f).",
        len(dataset),
        spec.name,
        dataset.stats.max_return,
    )
    if path is not None:
        write_dataset(dataset, path)
    return dataset


def reference_returns(
    spec: EnvSpec, episodes: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Mean returns of the random (``p = 0``) and expert (``p = 1``) behaviors.

    Returns
    -------
    tuple[float, float]
        ``(random_ref, expert_ref)``.
    """
    if episodes < 1:
        raise ValueError(f"Need at least one episode, got {episodes}.")

    def mean_return(quality: float) -> float:
        returns: Sequence[float] = [
            rollout_behavior(spec, quality, rng).ret for _ in range(episodes)
        ]
        return float(np.mean(returns))

    return mean_return(0.0), mean_return(1.0)
