"""Minimal dense feed-forward network with exact reverse-mode gradients.

The network is a chain of affine layers with rectified-linear activations between
hidden layers and an identity output. Everything runs in double precision so the
gradients can be checked against finite differences. Dropout is inverted: kept hidden
activations are scaled by ``1 / (1 - p)`` during training, so inference needs no
rescaling.
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field

__all__ = [
    "AdamConfig",
    "AdamState",
    "BackwardResult",
    "DenseNet",
    "Mode",
    "NetCheckpoint",
    "adam_step",
]

Array = NDArray[np.float64]
Mode = Literal["train", "inference"]


class NetCheckpoint(BaseModel):
    """Serialised form of a :class:`DenseNet`."""

    class Layer(BaseModel):
        """Flat parameters of one affine layer, weights in row-major order."""

        weights: list[float]
        biases: list[float]

        model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    dims: list[int] = Field(min_length=2)
    dropout: float = Field(ge=0.0, lt=1.0)
    layers: list[Layer]
    fingerprint: str | None = None

    model_config = ConfigDict(extra="forbid")


@dataclass(frozen=True, slots=True, eq=False)
class BackwardResult:
    """Loss, parameter gradients and per-sample squared errors of one pass.

    ``grads`` follows the order of :meth:`DenseNet.parameters`.
    """

    loss: float
    grads: list[Array]
    sample_errors: Array


@dataclass(eq=False)
class DenseNet:
    """Dense rectified-linear network.

    Attributes
    ----------
    dims : tuple[int, ...]
        Layer dimensions, input first and output last.
    weights : list[numpy.ndarray]
        Weight matrices of shape ``(dims[i], dims[i + 1])``.
    biases : list[numpy.ndarray]
        Bias vectors of shape ``(dims[i + 1],)``.
    dropout : float
        Dropout rate applied to hidden activations in training mode.
    """

    dims: tuple[int, ...]
    weights: list[Array]
    biases: list[Array]
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if len(self.dims) < 2 or any(dim < 1 for dim in self.dims):
            raise ValueError(f"Invalid layer dimensions {self.dims}.")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"Dropout rate must be in [0, 1), got {self.dropout}.")
        if len(self.weights) != len(self.dims) - 1 or len(self.biases) != len(
            self.weights
        ):
            raise ValueError("Expected one weight matrix and bias vector per layer.")
        for index, (weight, bias) in enumerate(
            zip(self.weights, self.biases, strict=True)
        ):
            expected = (self.dims[index], self.dims[index + 1])
            if weight.shape != expected or bias.shape != (expected[1],):
                raise ValueError(
                    f"Layer {index} has shapes {weight.shape} and {bias.shape}, "
                    f"expected {expected} and {(expected[1],)}."
                )

    @classmethod
    def init(cls, dims: Sequence[int], seed: int, dropout: float = 0.0) -> "DenseNet":
        """Create a network with weights uniform in ``±sqrt(6 / fan_in)``.

        Biases start at zero. The parameters are fully determined by ``seed``.
        """
        rng = np.random.default_rng(seed)
        dims = tuple(int(dim) for dim in dims)
        weights = []
        for fan_in, fan_out in zip(dims, dims[1:], strict=False):
            limit = math.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases = [np.zeros(fan_out) for fan_out in dims[1:]]
        return cls(dims=dims, weights=weights, biases=biases, dropout=dropout)

    @property
    def input_dim(self) -> int:
        """Dimension of the input vectors."""
        return self.dims[0]

    @property
    def output_dim(self) -> int:
        """Dimension of the output vectors."""
        return self.dims[-1]

    def parameters(self) -> list[Array]:
        """Return the parameter arrays as ``[W_0, b_0, W_1, b_1, ...]``."""
        return [
            array
            for pair in zip(self.weights, self.biases, strict=True)
            for array in pair
        ]

    def copy(self) -> "DenseNet":
        """Return a deep copy of this network."""
        return DenseNet(
            dims=self.dims,
            weights=[weight.copy() for weight in self.weights],
            biases=[bias.copy() for bias in self.biases],
            dropout=self.dropout,
        )

    def _as_batch(self, inputs: ArrayLike) -> tuple[Array, bool]:
        array = np.asarray(inputs, dtype=np.float64)
        single = array.ndim == 1
        if single:
            array = array[np.newaxis, :]
        if array.ndim != 2 or array.shape[1] != self.input_dim:
            raise ValueError(
                f"Expected inputs of dimension {self.input_dim}, got shape "
                f"{np.shape(inputs)}."
            )
        return array, single

    def _dropout_mask(
        self, shape: tuple[int, ...], mode: Mode, rng: np.random.Generator | None
    ) -> Array | None:
        if mode != "train" or self.dropout == 0.0:
            return None
        if rng is None:
            raise ValueError("Training-mode dropout needs a random generator.")
        keep = 1.0 - self.dropout
        return (rng.random(shape) < keep) / keep

    def _run(
        self, inputs: Array, mode: Mode, rng: np.random.Generator | None
    ) -> tuple[Array, list[Array], list[Array], list[Array | None]]:
        activations = [inputs]
        pre_activations: list[Array] = []
        masks: list[Array | None] = []

        hidden = inputs
        for weight, bias in zip(self.weights[:-1], self.biases[:-1], strict=True):
            z = hidden @ weight + bias
            pre_activations.append(z)
            hidden = np.maximum(z, 0.0)
            mask = self._dropout_mask(hidden.shape, mode, rng)
            if mask is not None:
                hidden = hidden * mask
            masks.append(mask)
            activations.append(hidden)

        outputs = hidden @ self.weights[-1] + self.biases[-1]
        return outputs, activations, pre_activations, masks

    def forward(
        self,
        inputs: ArrayLike,
        mode: Mode = "inference",
        rng: np.random.Generator | None = None,
    ) -> Array:
        """Evaluate the network on one input vector or a batch of row vectors.

        Parameters
        ----------
        inputs : array_like
            Array of shape ``(input_dim,)`` or ``(batch, input_dim)``.
        mode : {"train", "inference"}
            Dropout is only applied in training mode.
        rng : numpy.random.Generator, optional
            Source of dropout masks; required in training mode with dropout.

        Returns
        -------
        numpy.ndarray
            Outputs with the same leading shape as ``inputs``.
        """
        batch, single = self._as_batch(inputs)
        outputs = self._run(batch, mode, rng)[0]
        return outputs[0] if single else outputs

    def backward(
        self,
        inputs: ArrayLike,
        targets: ArrayLike,
        sample_weights: ArrayLike | None = None,
        *,
        mode: Mode = "inference",
        rng: np.random.Generator | None = None,
    ) -> BackwardResult:
        """Compute the weighted squared-error loss and its exact gradients.

        The loss is ``sum_i w_i ||f(x_i) - y_i||²`` with ``w_i = 1 / N`` unless
        ``sample_weights`` are given, i.e. the mean over samples of the squared
        Euclidean error.

        Parameters
        ----------
        inputs : array_like
            Array of shape ``(batch, input_dim)``.
        targets : array_like
            Array of shape ``(batch, output_dim)``.
        sample_weights : array_like, optional
            Nonnegative weight per sample.
        mode : {"train", "inference"}
            Dropout is only applied in training mode.
        rng : numpy.random.Generator, optional
            Source of dropout masks.
        """
        batch, _ = self._as_batch(inputs)
        target = np.asarray(targets, dtype=np.float64)
        if target.shape != (batch.shape[0], self.output_dim):
            raise ValueError(
                f"Expected targets of shape {(batch.shape[0], self.output_dim)}, got "
                f"{target.shape}."
            )
        if sample_weights is None:
            weights = np.full(batch.shape[0], 1.0 / batch.shape[0])
        else:
            weights = np.asarray(sample_weights, dtype=np.float64)
            if weights.shape != (batch.shape[0],):
                raise ValueError(
                    f"Expected {batch.shape[0]} sample weights, got {weights.shape}."
                )

        outputs, activations, pre_activations, masks = self._run(batch, mode, rng)
        residual = outputs - target
        sample_errors = np.sum(residual**2, axis=1)
        loss = float(weights @ sample_errors)

        delta = 2.0 * weights[:, np.newaxis] * residual
        grads: list[Array] = [np.empty(0)] * (2 * len(self.weights))
        for index in range(len(self.weights) - 1, -1, -1):
            grads[2 * index] = activations[index].T @ delta
            grads[2 * index + 1] = delta.sum(axis=0)
            if index > 0:
                delta = delta @ self.weights[index].T
                mask = masks[index - 1]
                if mask is not None:
                    delta = delta * mask
                delta = delta * (pre_activations[index - 1] > 0.0)

        return BackwardResult(loss=loss, grads=grads, sample_errors=sample_errors)

    def to_checkpoint(self, fingerprint: str | None = None) -> NetCheckpoint:
        """Serialise the network into a checkpoint model."""
        return NetCheckpoint(
            dims=list(self.dims),
            dropout=self.dropout,
            layers=[
                NetCheckpoint.Layer(
                    weights=weight.ravel().tolist(), biases=bias.tolist()
                )
                for weight, bias in zip(self.weights, self.biases, strict=True)
            ],
            fingerprint=fingerprint,
        )

    @classmethod
    def from_checkpoint(cls, checkpoint: NetCheckpoint) -> "DenseNet":
        """Restore a network from a checkpoint model."""
        dims = tuple(checkpoint.dims)
        if len(checkpoint.layers) != len(dims) - 1:
            raise ValueError("Checkpoint layer count does not match its dimensions.")
        weights = []
        biases = []
        for index, layer in enumerate(checkpoint.layers):
            shape = (dims[index], dims[index + 1])
            if len(layer.weights) != shape[0] * shape[1]:
                raise ValueError(f"Checkpoint layer {index} has the wrong size.")
            weights.append(np.array(layer.weights, dtype=np.float64).reshape(shape))
            biases.append(np.array(layer.biases, dtype=np.float64))
        return cls(
            dims=dims, weights=weights, biases=biases, dropout=checkpoint.dropout
        )


class AdamConfig(BaseModel):
    """Optimizer settings; defaults follow the RvS locomotion configuration."""

    learning_rate: float = Field(default=1e-3, gt=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    weight_decay: float = Field(default=1e-4, ge=0.0)

    model_config = ConfigDict(frozen=True, extra="forbid")


@dataclass(eq=False)
class AdamState:
    """Moment accumulators and hyperparameters of an Adam optimizer."""

    first_moments: list[Array]
    second_moments: list[Array]
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = field(default=0)

    @classmethod
    def create(
        cls, params: Sequence[Array], config: AdamConfig | None = None
    ) -> "AdamState":
        """Create zero accumulators shaped like ``params``."""
        config = config or AdamConfig()
        return cls(
            first_moments=[np.zeros_like(param) for param in params],
            second_moments=[np.zeros_like(param) for param in params],
            **config.model_dump(),
        )


def adam_step(
    params: Sequence[Array], grads: Sequence[Array], state: AdamState
) -> AdamState:
    """Apply one bias-corrected Adam update with decoupled weight decay.

    The parameter arrays are updated in place; the returned state is ``state`` with
    its moments and step count advanced.
    """
    if not len(params) == len(grads) == len(state.first_moments):
        raise ValueError("Parameters, gradients and optimizer state do not match.")

    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for param, grad, m, v in zip(
        params, grads, state.first_moments, state.second_moments, strict=True
    ):
        if param.shape != grad.shape or param.shape != m.shape:
            raise ValueError(
                f"Gradient shape {grad.shape} does not match parameter {param.shape}."
            )
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad**2
        update = (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        param -= state.learning_rate * (update + state.weight_decay * param)
    return state
