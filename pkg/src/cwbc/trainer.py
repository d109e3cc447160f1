"""Training loop for return-conditioned policies and their baseline variants.

Every iteration draws one minibatch of trajectories, evaluates ``L + α · C`` on it and
takes one optimizer step. The variant decides how trajectories are drawn (uniformly,
through the return bins, or uniformly from a filtered dataset) and whether the
conservative regularizer is active.
"""

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field

from .conservatism import ConservatismConfig, resolve_noise_std
from .model import OfflineDataset
from .nn import AdamConfig, AdamState, adam_step
from .policy import RvsPolicy, bc_loss, combined_objective
from .weighting import (
    BinnedSampler,
    TrajectorySampler,
    UniformSampler,
    WeightingConfig,
    bin_probabilities,
    build_bins,
    filter_top_fraction,
    resolve_kappa,
)

__all__ = [
    "TrainConfig",
    "TrainLog",
    "TrainRecord",
    "Variant",
    "config_fingerprint",
    "held_out_loss",
    "make_sampler",
    "train",
]

logger = logging.getLogger(__name__)


class Variant(StrEnum):
    """Training variants: plain RvS plus weighted, conservative and filtered forms."""

    BASE = "base"
    W = "w"
    C = "c"
    WC = "wc"
    F = "f"
    FC = "fc"

    @classmethod
    def _missing_(cls, value: object) -> "Variant | None":
        if isinstance(value, str):
            for member in cls:
                if member.value == value.lower():
                    return member
        return None

    @property
    def uses_weighting(self) -> bool:
        """Whether trajectories are drawn through the return bins."""
        return self in {Variant.W, Variant.WC}

    @property
    def uses_conservatism(self) -> bool:
        """Whether the conservative regularizer is active."""
        return self in {Variant.C, Variant.WC, Variant.FC}

    @property
    def uses_filter(self) -> bool:
        """Whether training only sees the highest-return trajectories."""
        return self in {Variant.F, Variant.FC}


class TrainConfig(BaseModel):
    """Configuration of a training run.

    Attributes
    ----------
    iterations : int
        Number of optimizer steps ``I``.
    batch_size : int
        Number of trajectories ``S`` per minibatch.
    variant : Variant
        Which of the training variants to run.
    weighting : WeightingConfig
        Used by the weighted variants.
    conservatism : ConservatismConfig
        Used by the conservative variants.
    filter_fraction : float
        Fraction ``p`` of trajectories kept by the filtered variants.
    optimizer : AdamConfig
        Optimizer settings.
    hidden : tuple[int, ...]
        Hidden layer widths of the policy network.
    dropout : float
        Dropout probability on hidden activations.
    per_trajectory : bool
        Average the loss per trajectory first (``True``) or over all timesteps.
    max_timesteps_per_traj : int, optional
        If set, each trajectory of a batch contributes at most this many randomly
        chosen timesteps.
    log_interval : int
        Record losses every this many iterations, plus the first and last.
    log_timing : bool
        Record wall time per iteration; disabled, the ``ms`` column is zero.
    seed : int
        Master seed of all random streams.
    """

    iterations: int = Field(default=20000, ge=1)
    batch_size: int = Field(default=64, ge=1)
    variant: Variant = Variant.WC
    weighting: WeightingConfig = WeightingConfig()
    conservatism: ConservatismConfig = ConservatismConfig()
    filter_fraction: float = Field(default=0.1, gt=0.0, le=1.0)
    optimizer: AdamConfig = AdamConfig()
    hidden: tuple[int, ...] = (64, 64)
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)
    per_trajectory: bool = True
    max_timesteps_per_traj: int | None = Field(default=None, ge=1)
    log_interval: int = Field(default=100, ge=1)
    log_timing: bool = True
    seed: int = Field(default=0, ge=0)

    model_config = ConfigDict(frozen=True, extra="forbid")


def config_fingerprint(config: TrainConfig) -> str:
    """SHA-256 digest of the resolved training configuration."""
    payload = config.model_dump_json(by_alias=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


class TrainRecord(BaseModel):
    """Losses of one logged iteration, evaluated on that iteration's batch."""

    iteration: int = Field(ge=1)
    bc_loss: float
    cons_loss: float
    total_loss: float
    ms: float = Field(ge=0.0)

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)


@dataclass(eq=False)
class TrainLog:
    """Logged iterations of a training run, in iteration order."""

    records: list[TrainRecord] = field(default_factory=list)

    def append(self, record: TrainRecord) -> None:
        """Append a record; iterations must increase strictly."""
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError("Train log iterations must increase strictly.")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final(self) -> TrainRecord:
        """The last logged record."""
        if not self.records:
            raise ValueError("The train log is empty.")
        return self.records[-1]


@dataclass(frozen=True, slots=True)
class _Streams:
    sampler: np.random.Generator
    noise: np.random.Generator
    dropout: np.random.Generator
    init_seed: int


def _streams(seed: int) -> _Streams:
    sampler, noise, dropout, init = np.random.SeedSequence(seed).spawn(4)
    return _Streams(
        sampler=np.random.default_rng(sampler),
        noise=np.random.default_rng(noise),
        dropout=np.random.default_rng(dropout),
        init_seed=int(init.generate_state(1)[0]),
    )


def make_sampler(
    dataset: OfflineDataset, config: TrainConfig
) -> TrajectorySampler:
    """Build the trajectory sampler a variant trains with on ``dataset``."""
    if not config.variant.uses_weighting:
        return UniformSampler(len(dataset))

    weighting = config.weighting
    layout = build_bins(dataset, weighting.num_bins)
    kappa = resolve_kappa(dataset.stats, weighting)
    probabilities = bin_probabilities(
        layout, weighting.lambda_, kappa, dataset.stats.max_return
    )
    logger.info(
        "Weighted sampling over %d bins with kappa=%.6g, lambda=%.6g.",
        layout.num_bins,
        kappa,
        weighting.lambda_,
    )
    return BinnedSampler(layout.with_probabilities(probabilities))


def _timestep_subsets(
    lengths: list[int], limit: int | None, rng: np.random.Generator
) -> list[NDArray[np.intp] | None]:
    if limit is None:
        return [None] * len(lengths)
    return [
        None
        if length <= limit
        else np.sort(rng.choice(length, size=limit, replace=False))
        for length in lengths
    ]


def train(
    dataset: OfflineDataset,
    config: TrainConfig,
    sampler: TrajectorySampler | None = None,
) -> tuple[RvsPolicy, TrainLog]:
    """Train a return-conditioned policy on an offline dataset.

    Sampler draws, regularizer noise, dropout masks and the initial weights come from
    independent streams derived from ``config.seed``, so switching a variant component
    on or off leaves the other streams untouched.

    Parameters
    ----------
    dataset : OfflineDataset
        The offline dataset. Filtered variants train on its top fraction.
    config : TrainConfig
        The training configuration.
    sampler : TrajectorySampler, optional
        Overrides the sampler implied by the variant; indices refer to the dataset
        the variant trains on.

    Returns
    -------
    tuple[RvsPolicy, TrainLog]
        The trained policy and the logged losses.

    Raises
    ------
    RuntimeError
        If the training loss becomes non-finite.
    """
    variant = config.variant
    if variant.uses_filter:
        dataset = filter_top_fraction(dataset, config.filter_fraction)

    stats = dataset.stats
    horizon = dataset.horizon
    streams = _streams(config.seed)
    sampler = sampler if sampler is not None else make_sampler(dataset, config)

    conservatism = config.conservatism
    if not variant.uses_conservatism:
        conservatism = ConservatismConfig(
            percentile_q=conservatism.percentile_q, alpha=0.0
        )
    sigma = resolve_noise_std(stats, conservatism) if conservatism.alpha > 0 else None

    policy = RvsPolicy.create(
        dataset, hidden=config.hidden, seed=streams.init_seed, dropout=config.dropout
    )
    params = policy.net.parameters()
    optimizer = AdamState.create(params, config.optimizer)
    log = TrainLog()

    logger.info(
        "Training variant %s for %d iterations on %d trajectories (seed %d).",
        variant.value,
        config.iterations,
        len(dataset),
        config.seed,
    )
    for iteration in range(1, config.iterations + 1):
        started = time.perf_counter()
        indices = sampler.sample(streams.sampler, config.batch_size)
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(
                "Iteration %d sampled trajectories %s", iteration, indices.tolist()
            )

        batch = [dataset.trajectories[index] for index in indices]
        timesteps = _timestep_subsets(
            [len(trajectory) for trajectory in batch],
            config.max_timesteps_per_traj,
            streams.sampler,
        )
        result = combined_objective(
            policy,
            batch,
            conservatism,
            stats,
            horizon,
            streams.noise,
            sigma=sigma,
            per_trajectory=config.per_trajectory,
            timesteps=timesteps,
            mode="train",
            dropout_rng=streams.dropout,
        )
        if not math.isfinite(result.total_loss):
            raise RuntimeError(
                f"Training diverged at iteration {iteration}: "
                f"bc_loss={result.bc_loss}, cons_loss={result.cons_loss}, "
                f"total_loss={result.total_loss}."
            )
        adam_step(params, result.grads, optimizer)

        if (
            iteration == 1
            or iteration % config.log_interval == 0
            or iteration == config.iterations
        ):
            elapsed = 0.0
            if config.log_timing:
                elapsed = (time.perf_counter() - started) * 1000
            log.append(
                TrainRecord(
                    iteration=iteration,
                    bc_loss=result.bc_loss,
                    cons_loss=result.cons_loss,
                    total_loss=result.total_loss,
                    ms=elapsed,
                )
            )

    logger.info("Finished training with final loss %.6g.", log.final.total_loss)
    return policy, log


def held_out_loss(
    policy: RvsPolicy,
    dataset: OfflineDataset,
    horizon: int | None = None,
    size: int = 256,
    seed: int = 0,
) -> float:
    """Behavior-cloning loss on a fixed batch drawn uniformly with ``seed``."""
    if size < 1:
        raise ValueError(f"Held-out batch size must be positive, got {size}.")
    rng = np.random.default_rng(seed)
    indices = rng.integers(len(dataset), size=size)
    batch = [dataset.trajectories[index] for index in indices]
    return bc_loss(policy, batch, horizon or dataset.horizon).loss
