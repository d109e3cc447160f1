"""Return-conditioned behavior-cloning policy.

The policy maps a standardised state together with the average return-to-go
``ω_t = g_t / (H - t + 1)`` to an action. It is trained by regressing recorded actions
(the behavior-cloning loss), optionally combined with the conservative regularizer.
"""

import hashlib
import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field

from .conservatism import ConservatismConfig, perturbed_conditioning
from .model import DatasetStats, OfflineDataset, Trajectory
from .nn import BackwardResult, DenseNet, Mode, NetCheckpoint

__all__ = [
    "ObjectiveResult",
    "PolicyCheckpoint",
    "RvsPolicy",
    "bc_loss",
    "combined_objective",
    "conditioning",
    "load_policy",
    "parameter_checksum",
    "save_policy",
]

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]


def conditioning(trajectory: Trajectory, horizon: int) -> Array:
    """Average return-to-go ``g_t / (H - t + 1)`` for every timestep of a trajectory."""
    remaining = horizon - np.arange(len(trajectory), dtype=np.float64)
    return trajectory.rtg / remaining


@dataclass(eq=False)
class RvsPolicy:
    """A dense network conditioned on the state and the average return-to-go.

    Attributes
    ----------
    net : DenseNet
        Network with input dimension ``state_dim + 1`` and output ``action_dim``.
    state_dim : int
        Dimension of the states.
    action_dim : int
        Dimension of the actions.
    horizon : int
        Episode horizon ``H`` the conditioning is computed with.
    state_mean : numpy.ndarray
        Mean used to standardise states.
    state_std : numpy.ndarray
        Standard deviation used to standardise states.
    max_return : float, optional
        Highest return of the training dataset, kept for evaluation targets.
    """

    net: DenseNet
    state_dim: int
    action_dim: int
    horizon: int
    state_mean: Array
    state_std: Array
    max_return: float | None = None

    def __post_init__(self) -> None:
        if self.net.input_dim != self.state_dim + 1:
            raise ValueError(
                f"Network input dimension {self.net.input_dim} does not match "
                f"state_dim + 1 = {self.state_dim + 1}."
            )
        if self.net.output_dim != self.action_dim:
            raise ValueError(
                f"Network output dimension {self.net.output_dim} does not match "
                f"action_dim = {self.action_dim}."
            )
        if self.state_mean.shape != (self.state_dim,) or self.state_std.shape != (
            self.state_dim,
        ):
            raise ValueError("Standardisation vectors must have shape (state_dim,).")

    @classmethod
    def create(
        cls,
        dataset: OfflineDataset,
        hidden: Sequence[int] = (64, 64),
        seed: int = 0,
        dropout: float = 0.0,
    ) -> "RvsPolicy":
        """Create a freshly initialised policy for a dataset.

        State standardisation is computed from all states of ``dataset``.
        """
        mean, std = dataset.state_moments()
        dims = (dataset.state_dim + 1, *hidden, dataset.action_dim)
        return cls(
            net=DenseNet.init(dims, seed=seed, dropout=dropout),
            state_dim=dataset.state_dim,
            action_dim=dataset.action_dim,
            horizon=dataset.horizon,
            state_mean=mean,
            state_std=std,
            max_return=dataset.stats.max_return,
        )

    def inputs(self, states: ArrayLike, omegas: ArrayLike) -> Array:
        """Build network inputs from raw states and average return-to-go values."""
        states = np.asarray(states, dtype=np.float64)
        omegas = np.asarray(omegas, dtype=np.float64)
        if states.ndim != 2 or states.shape[1] != self.state_dim:
            raise ValueError(
                f"Expected states of dimension {self.state_dim}, got {states.shape}."
            )
        if omegas.shape != (states.shape[0],):
            raise ValueError("Expected one conditioning value per state.")
        standardised = (states - self.state_mean) / self.state_std
        return np.column_stack([standardised, omegas])

    def predict_batch(self, states: ArrayLike, omegas: ArrayLike) -> Array:
        """Predict actions for a batch of states in inference mode."""
        return self.net.forward(self.inputs(states, omegas))

    def predict_action(self, state: ArrayLike, omega: float) -> Array:
        """Predict the action for one state and average return-to-go.

        Examples
        --------
        >>> import numpy as np
        >>> from cwbc.nn import DenseNet
        >>> net = DenseNet.init((2, 4, 1), seed=0)
        >>> for param in net.parameters():
        ...     param[...] = 0.0
        >>> policy = cwbc.RvsPolicy(
        ...     net, 1, 1, horizon=5, state_mean=np.zeros(1), state_std=np.ones(1)
        ... )
        >>> policy.predict_action([0.3], 1.0).tolist()
        [0.0]
        """
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (self.state_dim,):
            raise ValueError(
                f"Expected a state of dimension {self.state_dim}, got {state.shape}."
            )
        return self.predict_batch(state[np.newaxis, :], [omega])[0]

    def copy(self) -> "RvsPolicy":
        """Return a deep copy of this policy."""
        return RvsPolicy(
            net=self.net.copy(),
            state_dim=self.state_dim,
            action_dim=self.action_dim,
            horizon=self.horizon,
            state_mean=self.state_mean.copy(),
            state_std=self.state_std.copy(),
            max_return=self.max_return,
        )


@dataclass(frozen=True, slots=True, eq=False)
class ObjectiveResult:
    """Loss parts and gradients of one evaluation of the training objective."""

    bc_loss: float
    cons_loss: float
    total_loss: float
    grads: list[Array]


def _select(array: Array, steps: NDArray[np.intp] | None) -> Array:
    return array if steps is None else array[steps]


def _regression_samples(
    policy: RvsPolicy,
    trajectories: Sequence[Trajectory],
    omegas: Sequence[Array],
    timesteps: Sequence[NDArray[np.intp] | None],
    per_trajectory: bool,
    scale: float,
) -> tuple[Array, Array, Array]:
    inputs = []
    targets = []
    counts = []
    for trajectory, omega, steps in zip(trajectories, omegas, timesteps, strict=True):
        inputs.append(
            policy.inputs(_select(trajectory.states, steps), _select(omega, steps))
        )
        targets.append(_select(trajectory.actions, steps))
        counts.append(targets[-1].shape[0])

    if per_trajectory:
        weights = np.concatenate(
            [np.full(count, scale / (len(counts) * count)) for count in counts]
        )
    else:
        weights = np.full(sum(counts), scale / sum(counts))
    return np.concatenate(inputs), np.concatenate(targets), weights


def bc_loss(
    policy: RvsPolicy,
    batch: Sequence[Trajectory],
    horizon: int,
    *,
    per_trajectory: bool = True,
    timesteps: Sequence[NDArray[np.intp] | None] | None = None,
    mode: Mode = "inference",
    rng: np.random.Generator | None = None,
) -> BackwardResult:
    """Behavior-cloning loss and its gradients.

    For each trajectory, the squared action error is averaged over its timesteps with
    ``ω_t = g_t / (H - t + 1)``; the batch loss is the mean of these per-trajectory
    means. With ``per_trajectory=False`` all timesteps of the batch are averaged
    together instead.

    Parameters
    ----------
    policy : RvsPolicy
        The policy to evaluate.
    batch : Sequence[Trajectory]
        Non-empty minibatch of trajectories.
    horizon : int
        Episode horizon ``H``.
    per_trajectory : bool
        Batch reduction convention.
    timesteps : Sequence[numpy.ndarray | None], optional
        Per trajectory, the subset of timesteps to use; ``None`` uses all.
    mode : {"train", "inference"}
        Network mode; dropout is only active in training mode.
    rng : numpy.random.Generator, optional
        Source of dropout masks.
    """
    if not batch:
        raise ValueError("The behavior-cloning loss needs a non-empty batch.")
    timesteps = timesteps if timesteps is not None else [None] * len(batch)
    omegas = [conditioning(trajectory, horizon) for trajectory in batch]
    inputs, targets, weights = _regression_samples(
        policy, batch, omegas, timesteps, per_trajectory, 1.0
    )
    return policy.net.backward(inputs, targets, weights, mode=mode, rng=rng)


def combined_objective(
    policy: RvsPolicy,
    batch: Sequence[Trajectory],
    config: ConservatismConfig,
    stats: DatasetStats,
    horizon: int,
    rng: np.random.Generator,
    *,
    sigma: float | None = None,
    per_trajectory: bool = True,
    timesteps: Sequence[NDArray[np.intp] | None] | None = None,
    mode: Mode = "inference",
    dropout_rng: np.random.Generator | None = None,
) -> ObjectiveResult:
    """Evaluate ``L + α · C`` on one minibatch.

    The conservative term uses the same batch as the behavior-cloning term. With
    ``α = 0`` or without qualifying trajectories, the regularizer path is skipped
    entirely and the result is exactly :func:`bc_loss`.

    Parameters
    ----------
    policy : RvsPolicy
        The policy to evaluate.
    batch : Sequence[Trajectory]
        Non-empty minibatch of trajectories.
    config : ConservatismConfig
        Regularizer configuration, including ``α``.
    stats : DatasetStats
        Return statistics of the training dataset.
    horizon : int
        Episode horizon ``H``.
    rng : numpy.random.Generator
        Source of the return-to-go noise.
    sigma : float, optional
        Resolved noise standard deviation.
    per_trajectory : bool
        Batch reduction convention, shared by both terms.
    timesteps : Sequence[numpy.ndarray | None], optional
        Per trajectory, the subset of timesteps to use.
    mode : {"train", "inference"}
        Network mode.
    dropout_rng : numpy.random.Generator, optional
        Source of dropout masks.
    """
    if not batch:
        raise ValueError("The training objective needs a non-empty batch.")
    timesteps = timesteps if timesteps is not None else [None] * len(batch)

    perturbed = []
    if config.alpha > 0:
        perturbed = perturbed_conditioning(
            batch, config, stats, horizon, rng, sigma=sigma
        )

    if not perturbed:
        result = bc_loss(
            policy,
            batch,
            horizon,
            per_trajectory=per_trajectory,
            timesteps=timesteps,
            mode=mode,
            rng=dropout_rng,
        )
        return ObjectiveResult(
            bc_loss=result.loss,
            cons_loss=0.0,
            total_loss=result.loss,
            grads=result.grads,
        )

    bc_inputs, bc_targets, bc_weights = _regression_samples(
        policy,
        batch,
        [conditioning(trajectory, horizon) for trajectory in batch],
        timesteps,
        per_trajectory,
        1.0,
    )
    cons_inputs, cons_targets, cons_weights = _regression_samples(
        policy,
        [batch[item.index] for item in perturbed],
        [item.omegas for item in perturbed],
        [timesteps[item.index] for item in perturbed],
        per_trajectory,
        config.alpha,
    )

    result = policy.net.backward(
        np.concatenate([bc_inputs, cons_inputs]),
        np.concatenate([bc_targets, cons_targets]),
        np.concatenate([bc_weights, cons_weights]),
        mode=mode,
        rng=dropout_rng,
    )
    split = bc_weights.shape[0]
    bc_part = float(bc_weights @ result.sample_errors[:split])
    cons_part = float(cons_weights @ result.sample_errors[split:]) / config.alpha
    return ObjectiveResult(
        bc_loss=bc_part,
        cons_loss=cons_part,
        total_loss=result.loss,
        grads=result.grads,
    )


def parameter_checksum(policy: RvsPolicy) -> str:
    """SHA-256 digest over all parameters and standardisation vectors."""
    digest = hashlib.sha256()
    for array in (*policy.net.parameters(), policy.state_mean, policy.state_std):
        digest.update(np.ascontiguousarray(array).tobytes())
    return digest.hexdigest()


class PolicyCheckpoint(BaseModel):
    """Serialised form of an :class:`RvsPolicy`."""

    format: Literal["cwbc-policy"] = "cwbc-policy"
    version: Literal[1] = 1
    state_dim: int = Field(ge=1)
    action_dim: int = Field(ge=1)
    horizon: int = Field(ge=1)
    state_mean: list[float]
    state_std: list[float]
    max_return: float | None = None
    net: NetCheckpoint

    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


def save_policy(
    policy: RvsPolicy, path: Path | str, fingerprint: str | None = None
) -> Path:
    """Write a policy checkpoint as JSON with round-trip float precision."""
    if isinstance(path, str):
        path = Path(path)

    checkpoint = PolicyCheckpoint(
        state_dim=policy.state_dim,
        action_dim=policy.action_dim,
        horizon=policy.horizon,
        state_mean=policy.state_mean.tolist(),
        state_std=policy.state_std.tolist(),
        max_return=policy.max_return,
        net=policy.net.to_checkpoint(fingerprint),
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(checkpoint.model_dump(mode="json"), separators=(",", ":")),
        encoding="utf-8",
    )
    logger.info("Saved policy checkpoint to %s", path)
    return path


def load_policy(path: Path | str) -> RvsPolicy:
    """Read a policy checkpoint written by :func:`save_policy`."""
    if isinstance(path, str):
        path = Path(path)

    checkpoint = PolicyCheckpoint.model_validate_json(path.read_text(encoding="utf-8"))
    return RvsPolicy(
        net=DenseNet.from_checkpoint(checkpoint.net),
        state_dim=checkpoint.state_dim,
        action_dim=checkpoint.action_dim,
        horizon=checkpoint.horizon,
        state_mean=np.array(checkpoint.state_mean),
        state_std=np.array(checkpoint.state_std),
        max_return=checkpoint.max_return,
    )
