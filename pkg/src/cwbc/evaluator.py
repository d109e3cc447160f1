"""Conditioned evaluation rollouts, target-return sweeps and variant comparisons.

A rollout starts from a target return ``G`` and conditions the policy at step
``t`` on ``ω_t = (G - Σ_{t'<t} r_t') / (H - t + 1)``. Episodes end after exactly
``H`` steps, so the update for step ``H + 1`` is never evaluated.
"""

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .envs import EnvSpec, reference_returns, reset, step
from .model import OfflineDataset
from .policy import RvsPolicy
from .trainer import TrainConfig, Variant, train

__all__ = [
    "ComparisonCell",
    "ComparisonReport",
    "ComparisonRow",
    "CurveRecord",
    "EvalConfig",
    "ReliabilityCurve",
    "RolloutTrace",
    "TargetSpec",
    "compare_variants",
    "evaluate_target",
    "mean_curve",
    "normalized_score",
    "ood_drop_ratio",
    "parse_target",
    "resolve_references",
    "rollout_conditioned",
    "sweep_targets",
    "trace_rollout",
    "train_and_evaluate",
]

logger = logging.getLogger(__name__)

# Stream key for reference rollouts, kept apart from the per-episode keys.
REFERENCE_STREAM = 2**32 - 1


class TargetSpec(BaseModel):
    """A conditioning target: a multiple of a basis return or an absolute value."""

    basis: Literal["expert", "max", "absolute"]
    value: float = 1.0

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    def resolve(self, max_return: float, expert_ref: float) -> float:
        """Return the target return ``G``."""
        match self.basis:
            case "expert":
                return self.value * expert_ref
            case "max":
                return self.value * max_return
            case "absolute":
                return self.value

    def label(self) -> str:
        """Short human-readable form, the inverse of :func:`parse_target`."""
        if self.basis == "absolute":
            return f"absolute:{self.value!r}"
        return self.basis if self.value == 1.0 else f"{self.basis}:{self.value!r}"


def parse_target(text: str) -> TargetSpec:
    """Parse ``expert``, ``max``, ``expert:m``, ``max:m`` or ``absolute:G``.

    Examples
    --------
    >>> cwbc.parse_target("expert")
    TargetSpec(basis='expert', value=1.0)
    >>> cwbc.parse_target("absolute:12.5")
    TargetSpec(basis='absolute', value=12.5)
    """
    basis, _, value = text.strip().partition(":")
    if basis not in ("expert", "max", "absolute"):
        raise ValueError(
            f"Unknown target '{text}'. Use expert, max or absolute:G, optionally "
            "with a multiplier such as max:2.0."
        )
    if basis == "absolute" and not value:
        raise ValueError("An absolute target needs a value, e.g. absolute:30.")
    try:
        number = float(value) if value else 1.0
    except ValueError as exc:
        raise ValueError(f"Invalid target value in '{text}'.") from exc
    if not math.isfinite(number):
        raise ValueError(f"Target value must be finite, got '{text}'.")
    return TargetSpec(basis=basis, value=number)


class EvalConfig(BaseModel):
    """Configuration of evaluation rollouts.

    Attributes
    ----------
    target : TargetSpec
        Conditioning target of headline numbers.
    episodes : int
        Rollouts per target.
    max_multipliers : tuple[float, ...]
        Sweep targets as multiples of the dataset's highest return.
    expert_multipliers : tuple[float, ...]
        Sweep targets as multiples of the expert reference return.
    reference_episodes : int
        Rollouts used to estimate the random and expert reference returns.
    seed : int
        Seed of the per-episode random streams.
    workers : int
        Threads used to run rollouts.
    """

    target: TargetSpec = TargetSpec(basis="expert")
    episodes: int = Field(default=10, ge=1)
    max_multipliers: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0, 1.25, 1.5, 2.0)
    expert_multipliers: tuple[float, ...] = (1.0, 2.0)
    reference_episodes: int = Field(default=100, ge=1)
    seed: int = Field(default=0, ge=0)
    workers: int = Field(default=1, ge=1)

    model_config = ConfigDict(frozen=True, extra="forbid")

    @field_validator("max_multipliers", "expert_multipliers")
    @classmethod
    def _check_positive(cls, multipliers: tuple[float, ...]) -> tuple[float, ...]:
        if any(not m > 0 for m in multipliers):
            raise ValueError("Sweep multipliers must be positive.")
        return multipliers


@dataclass(frozen=True, slots=True, eq=False)
class RolloutTrace:
    """Everything observed during one conditioned rollout."""

    target: float
    omegas: NDArray[np.float64]
    actions: NDArray[np.float64]
    rewards: NDArray[np.float64]

    @property
    def ret(self) -> float:
        """Achieved return."""
        return float(self.rewards.sum())


def _check_compatible(policy: RvsPolicy, spec: EnvSpec) -> None:
    if policy.state_dim != spec.state_dim or policy.action_dim != spec.action_dim:
        raise ValueError(
            f"Policy dimensions ({policy.state_dim}, {policy.action_dim}) do not match "
            f"environment '{spec.name}' ({spec.state_dim}, {spec.action_dim})."
        )
    if policy.horizon != spec.horizon:
        raise ValueError(
            f"Policy horizon {policy.horizon} does not match environment horizon "
            f"{spec.horizon}."
        )


def trace_rollout(
    policy: RvsPolicy, spec: EnvSpec, target: float, rng: np.random.Generator
) -> RolloutTrace:
    """Run one conditioned episode and record conditioning, actions and rewards.

    Raises
    ------
    RuntimeError
        If the policy produces a non-finite action.
    """
    _check_compatible(policy, spec)
    horizon = spec.horizon
    state = reset(spec, rng)
    cumulative = 0.0
    omegas = np.empty(horizon)
    actions = np.empty((horizon, spec.action_dim))
    rewards = np.empty(horizon)

    for t in range(1, horizon + 1):
        omega = (target - cumulative) / (horizon - t + 1)
        action = policy.predict_action(state, omega)
        if not np.all(np.isfinite(action)):
            raise RuntimeError(
                f"Policy produced a non-finite action at step {t} for target {target}."
            )
        state, reward = step(spec, state, action, rng)
        omegas[t - 1] = omega
        actions[t - 1] = action
        rewards[t - 1] = reward
        cumulative += reward

    return RolloutTrace(target=target, omegas=omegas, actions=actions, rewards=rewards)


def rollout_conditioned(
    policy: RvsPolicy, spec: EnvSpec, target: float, rng: np.random.Generator
) -> float:
    """Achieved return of one episode conditioned on ``target``."""
    return trace_rollout(policy, spec, target, rng).ret


def _episode_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.default_rng([seed, episode])


def evaluate_target(
    policy: RvsPolicy,
    spec: EnvSpec,
    target: float,
    episodes: int,
    seed: int = 0,
    workers: int = 1,
) -> NDArray[np.float64]:
    """Returns of ``episodes`` rollouts at one target, in episode order.

    Episode ``k`` always uses the stream ``(seed, k)``, so all targets are evaluated
    on the same start states and transition noise.
    """
    if episodes < 1:
        raise ValueError(f"Need at least one episode, got {episodes}.")

    def run(episode: int) -> float:
        return rollout_conditioned(policy, spec, target, _episode_rng(seed, episode))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            returns = list(executor.map(run, range(episodes)))
    else:
        returns = [run(episode) for episode in range(episodes)]
    return np.array(returns)


def normalized_score(raw: float, random_ref: float, expert_ref: float) -> float:
    """Map a raw return to ``100 · (raw - random_ref) / (expert_ref - random_ref)``.

    Examples
    --------
    >>> cwbc.normalized_score(15.0, 10.0, 20.0)
    50.0
    >>> cwbc.normalized_score(20.0, 10.0, 20.0)
    100.0
    """
    if expert_ref == random_ref:
        raise ValueError(
            f"Expert and random reference returns must differ, got {expert_ref}."
        )
    return 100.0 * (raw - random_ref) / (expert_ref - random_ref)


class CurveRecord(BaseModel):
    """One sweep point of a reliability curve."""

    basis: Literal["max", "expert"]
    multiplier: float
    target: float
    mean: float
    std: float = Field(ge=0.0)
    normalized: float

    model_config = ConfigDict(frozen=True)


class ReliabilityCurve(BaseModel):
    """Achieved return as a function of the conditioning target."""

    records: list[CurveRecord]
    max_return: float
    random_ref: float
    expert_ref: float

    model_config = ConfigDict(frozen=True)

    def at(self, basis: Literal["max", "expert"], multiplier: float) -> CurveRecord:
        """Look up the record of one sweep point."""
        for record in self.records:
            if record.basis == basis and record.multiplier == multiplier:
                return record
        raise ValueError(f"The curve has no point at {multiplier}x {basis}.")


def resolve_references(spec: EnvSpec, config: EvalConfig) -> tuple[float, float]:
    """Estimate ``(random_ref, expert_ref)`` for an evaluation configuration."""
    rng = np.random.default_rng([config.seed, REFERENCE_STREAM])
    return reference_returns(spec, config.reference_episodes, rng)


def sweep_targets(
    policy: RvsPolicy,
    spec: EnvSpec,
    config: EvalConfig,
    *,
    references: tuple[float, float] | None = None,
    max_return: float | None = None,
) -> ReliabilityCurve:
    """Evaluate a policy over a sweep of conditioning targets.

    Parameters
    ----------
    policy : RvsPolicy
        The policy to evaluate; it is not modified.
    spec : EnvSpec
        The evaluation environment.
    config : EvalConfig
        Sweep multipliers, episode count, seed and worker count.
    references : tuple[float, float], optional
        ``(random_ref, expert_ref)``; estimated from ``spec`` if omitted.
    max_return : float, optional
        Highest dataset return ``r*``; defaults to the one stored in the policy.
    """
    max_return = policy.max_return if max_return is None else max_return
    if max_return is None:
        raise ValueError("The sweep needs the highest dataset return of the policy.")
    random_ref, expert_ref = references or resolve_references(spec, config)

    points: list[tuple[Literal["max", "expert"], float, float]] = [
        ("max", m, m * max_return) for m in config.max_multipliers
    ]
    points += [("expert", m, m * expert_ref) for m in config.expert_multipliers]

    records = []
    for basis, multiplier, target in points:
        returns = evaluate_target(
            policy, spec, target, config.episodes, config.seed, config.workers
        )
        mean = float(returns.mean())
        records.append(
            CurveRecord(
                basis=basis,
                multiplier=multiplier,
                target=target,
                mean=mean,
                std=float(returns.std()),
                normalized=normalized_score(mean, random_ref, expert_ref),
            )
        )
        logger.info(
            "Target %.4g (%gx %s): mean return %.4g", target, multiplier, basis, mean
        )
    return ReliabilityCurve(
        records=records,
        max_return=max_return,
        random_ref=random_ref,
        expert_ref=expert_ref,
    )


def ood_drop_ratio(curve: ReliabilityCurve) -> float:
    """Mean return at twice the highest dataset return over the best sweep mean.

    A value of one means conditioning far out of distribution costs nothing.
    """
    best = max(record.mean for record in curve.records)
    if best <= 0:
        raise ValueError(f"The ood-drop ratio needs a positive best mean, got {best}.")
    return curve.at("max", 2.0).mean / best


def mean_curve(curves: Sequence[ReliabilityCurve]) -> ReliabilityCurve:
    """Average curves of several seeds point by point.

    The standard deviation of a point is that of the per-seed means.
    """
    if not curves:
        raise ValueError("Need at least one curve to average.")
    first = curves[0]
    records = []
    for index, record in enumerate(first.records):
        means = np.array([curve.records[index].mean for curve in curves])
        mean = float(means.mean())
        records.append(
            record.model_copy(
                update={
                    "mean": mean,
                    "std": float(means.std()),
                    "normalized": normalized_score(
                        mean, first.random_ref, first.expert_ref
                    ),
                }
            )
        )
    return first.model_copy(update={"records": records})


class ComparisonCell(BaseModel):
    """Result of training and evaluating one variant with one seed."""

    position: int
    variant: Variant
    seed: int
    mean: float | None = None
    std: float | None = None
    normalized: float | None = None
    ood_drop: float | None = None
    curve: ReliabilityCurve | None = None
    error: str | None = None


class ComparisonRow(BaseModel):
    """Aggregate of one compared variant over seeds."""

    variant: Variant
    seeds: int
    mean: float | None
    std: float | None
    normalized: float | None
    ood_drop: float | None
    wins: int | None
    errors: int


class ComparisonReport(BaseModel):
    """All cells of a variant comparison and their per-variant aggregates."""

    variants: list[Variant]
    seeds: list[int]
    cells: list[ComparisonCell]
    random_ref: float
    expert_ref: float

    def cells_of(self, position: int) -> list[ComparisonCell]:
        """Cells of the variant listed at ``position``, in seed order."""
        return [cell for cell in self.cells if cell.position == position]

    def rows(self) -> list[ComparisonRow]:
        """One aggregate row per listed variant.

        Wins count the seeds where the variant's mean beats the first listed
        ``base`` variant on the same seed; without a base variant they are unset.
        """
        base_means: dict[int, float | None] | None = None
        if Variant.BASE in self.variants:
            base_position = self.variants.index(Variant.BASE)
            base_means = {cell.seed: cell.mean for cell in self.cells_of(base_position)}

        rows = []
        for position, variant in enumerate(self.variants):
            cells = self.cells_of(position)
            good = [cell for cell in cells if cell.error is None]
            means = np.array([cell.mean for cell in good], dtype=np.float64)
            ratios = [cell.ood_drop for cell in good if cell.ood_drop is not None]

            wins = None
            if base_means is not None:
                wins = sum(
                    1
                    for cell in good
                    if (base := base_means.get(cell.seed)) is not None
                    and cell.mean is not None
                    and cell.mean > base
                )

            mean = float(means.mean()) if good else None
            rows.append(
                ComparisonRow(
                    variant=variant,
                    seeds=len(good),
                    mean=mean,
                    std=float(means.std()) if good else None,
                    normalized=None
                    if mean is None
                    else normalized_score(mean, self.random_ref, self.expert_ref),
                    ood_drop=float(np.mean(ratios)) if ratios else None,
                    wins=wins,
                    errors=len(cells) - len(good),
                )
            )
        return rows

    def curve_of(self, position: int) -> ReliabilityCurve | None:
        """Seed-averaged reliability curve of the variant listed at ``position``."""
        curves = [cell.curve for cell in self.cells_of(position) if cell.curve]
        return mean_curve(curves) if curves else None


def train_and_evaluate(
    dataset: OfflineDataset,
    spec: EnvSpec,
    config: TrainConfig,
    eval_config: EvalConfig,
    references: tuple[float, float],
    *,
    position: int = 0,
) -> ComparisonCell:
    """Train one policy and evaluate it at the headline target and over the sweep."""
    policy, _ = train(dataset, config)
    random_ref, expert_ref = references
    target = eval_config.target.resolve(dataset.stats.max_return, expert_ref)
    returns = evaluate_target(
        policy,
        spec,
        target,
        eval_config.episodes,
        eval_config.seed,
        eval_config.workers,
    )
    curve = sweep_targets(
        policy,
        spec,
        eval_config,
        references=references,
        max_return=dataset.stats.max_return,
    )
    mean = float(returns.mean())
    try:
        ratio = ood_drop_ratio(curve)
    except ValueError:
        ratio = None
    return ComparisonCell(
        position=position,
        variant=config.variant,
        seed=config.seed,
        mean=mean,
        std=float(returns.std()),
        normalized=normalized_score(mean, random_ref, expert_ref),
        ood_drop=ratio,
        curve=curve,
    )


def compare_variants(
    dataset: OfflineDataset,
    spec: EnvSpec,
    variants: Sequence[Variant | str],
    seeds: Sequence[int],
    train_config: TrainConfig,
    eval_config: EvalConfig,
    *,
    references: tuple[float, float] | None = None,
) -> ComparisonReport:
    """Train and evaluate every variant with every seed.

    Headline numbers are evaluated at ``eval_config.target``; each cell additionally
    carries its full reliability curve. A cell whose training or evaluation fails
    records the error and the comparison continues.
    """
    if not seeds:
        raise ValueError("Need at least one seed to compare variants.")
    if not variants:
        raise ValueError("Need at least one variant to compare.")
    variants = [Variant(variant) for variant in variants]
    references = references or resolve_references(spec, eval_config)

    cells = []
    for position, variant in enumerate(variants):
        for seed in seeds:
            try:
                cell = train_and_evaluate(
                    dataset,
                    spec,
                    train_config.model_copy(update={"variant": variant, "seed": seed}),
                    eval_config,
                    references,
                    position=position,
                )
            except (RuntimeError, ValueError) as exc:
                logger.warning("Variant %s with seed %d failed: %s", variant, seed, exc)
                cell = ComparisonCell(
                    position=position, variant=variant, seed=seed, error=str(exc)
                )
            cells.append(cell)

    return ComparisonReport(
        variants=variants,
        seeds=list(seeds),
        cells=cells,
        random_ref=references[0],
        expert_ref=references[1],
    )
