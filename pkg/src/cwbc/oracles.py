"""Brute-force reference checks for the weighting, gradients, noise and rollouts.

Each oracle recomputes a quantity along an independent path: bin probabilities with
plain ``math`` arithmetic, gradients with central differences, sampler frequencies by
counting and the conditioning of rollouts from the observed rewards. The suites are
exposed through ``cwbc verify``.
"""

import logging
import math
from collections.abc import Callable, Sequence
from typing import Literal, get_args

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, model_validator

from .conservatism import ConservatismConfig, noise_bounds
from .envs import ENVS
from .evaluator import trace_rollout
from .model import OfflineDataset, Trajectory
from .nn import DenseNet
from .policy import RvsPolicy, combined_objective
from .weighting import (
    BinLayout,
    WeightingConfig,
    bin_probabilities,
    build_bins,
    resolve_kappa,
    sample_batch,
)

__all__ = [
    "SUITES",
    "NoiseMoments",
    "OracleReport",
    "Suite",
    "oracle_bin_probs",
    "oracle_finite_diff",
    "oracle_noise_moments",
    "oracle_sampler_tv",
    "run_suite",
]

logger = logging.getLogger(__name__)

Suite = Literal["bins", "sampler", "gradients", "noise", "rollouts", "all"]
SUITES: tuple[str, ...] = get_args(Suite)


class OracleReport(BaseModel):
    """Outcome of one oracle check: a measured value against an upper bound."""

    oracle: str
    metric: str
    value: float
    bound: float
    passed: bool

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_passed(self) -> "OracleReport":
        if self.passed != (self.value <= self.bound):
            raise ValueError("passed must be true exactly when value <= bound.")
        return self

    @classmethod
    def check(
        cls, oracle: str, metric: str, value: float, bound: float
    ) -> "OracleReport":
        """Build a report, deriving the pass flag."""
        return cls(
            oracle=oracle,
            metric=metric,
            value=value,
            bound=bound,
            passed=value <= bound,
        )


def oracle_bin_probs(
    frequencies: Sequence[float],
    mean_returns: Sequence[float],
    lam: float,
    kappa: float,
    r_star: float,
) -> list[float]:
    """Bin probabilities evaluated term by term with the ``math`` module.

    Examples
    --------
    >>> cwbc.oracle_bin_probs([0.5, 0.5], [1.0, 3.0], 0.0, 1.0, 2.0)
    [0.5, 0.5]
    >>> cwbc.oracle_bin_probs([1.0], [4.0], 0.5, 2.0, 4.0)
    [1.0]
    """
    if kappa <= 0 or lam < 0:
        raise ValueError("Need kappa > 0 and lambda >= 0.")
    exponents = []
    for f, r in zip(frequencies, mean_returns, strict=True):
        exponents.append(math.log(f) - math.log(f + lam) - abs(r - r_star) / kappa)
    top = max(exponents)
    terms = [math.exp(e - top) for e in exponents]
    total = math.fsum(terms)
    return [term / total for term in terms]


def oracle_finite_diff(
    loss: Callable[[], float], params: Sequence[NDArray[np.float64]], h: float = 1e-5
) -> list[NDArray[np.float64]]:
    """Central-difference gradient of ``loss`` with respect to ``params``.

    Each parameter array is perturbed in place, one coordinate at a time, and restored
    afterwards.

    Examples
    --------
    >>> import numpy as np
    >>> theta = np.array([1.0, -2.0])
    >>> [g.round(6).tolist() for g in cwbc.oracle_finite_diff(
    ...     lambda: float(theta @ theta), [theta]
    ... )]
    [[2.0, -4.0]]
    """
    if h <= 0:
        raise ValueError(f"Step h must be positive, got {h}.")
    grads = []
    for param in params:
        grad = np.zeros_like(param)
        for index in np.ndindex(param.shape):
            original = param[index]
            param[index] = original + h
            upper = loss()
            param[index] = original - h
            lower = loss()
            param[index] = original
            grad[index] = (upper - lower) / (2.0 * h)
        grads.append(grad)
    return grads


def oracle_sampler_tv(layout: BinLayout, draws: int, rng: np.random.Generator) -> float:
    """Total variation between sampled bin frequencies and the bin probabilities."""
    if layout.probabilities is None:
        raise ValueError("Bin probabilities have not been computed for this layout.")
    if draws < 1:
        raise ValueError(f"Need at least one draw, got {draws}.")

    owner = {}
    for bin_index, group in enumerate(layout.bins):
        for trajectory in group.tolist():
            owner[trajectory] = bin_index
    counts = [0] * layout.num_bins
    for trajectory in sample_batch(layout, rng, draws).tolist():
        counts[owner[trajectory]] += 1
    return 0.5 * math.fsum(
        abs(count / draws - float(p))
        for count, p in zip(counts, layout.probabilities, strict=True)
    )


class NoiseMoments(BaseModel):
    """Support and spread of sampled return-to-go noise."""

    support_fraction: float
    std_relative_error: float


def oracle_noise_moments(
    r_tau: float,
    r_star: float,
    sigma: float,
    draws: int,
    rng: np.random.Generator,
) -> NoiseMoments:
    """Check the perturbed initial return ``r_tau + ε`` against its expected support.

    The support ``[r*, r* + sqrt(12) σ]`` is recomputed here and compared with a
    relative tolerance of ``1e-12`` to absorb rounding in ``r_tau + ε``.
    """
    bounds = noise_bounds(r_tau, r_star, sigma)
    eps = rng.uniform(bounds.lower, bounds.upper, draws)
    shifted = r_tau + eps
    tolerance = 1e-12 * max(abs(r_star), math.sqrt(12.0) * sigma, 1.0)
    inside = (shifted >= r_star - tolerance) & (
        shifted <= r_star + math.sqrt(12.0) * sigma + tolerance
    )
    return NoiseMoments(
        support_fraction=float(inside.mean()),
        std_relative_error=abs(float(eps.std()) - sigma) / sigma,
    )


def _returns_dataset(returns: Sequence[float]) -> OfflineDataset:
    return OfflineDataset.from_trajectories(
        [Trajectory([[0.0]], [[0.0]], [r]) for r in returns], horizon=1
    )


def _bins_suite(rng: np.random.Generator) -> list[OracleReport]:
    worst = 0.0
    worst_zero = 0.0
    worst_large = 0.0
    for _ in range(100):
        count = int(rng.integers(20, 200))
        dataset = _returns_dataset(rng.gamma(2.0, 10.0, count).tolist())
        layout = build_bins(dataset, int(rng.integers(1, 21)))
        lam = float(rng.choice([0.0, 10 ** rng.uniform(-3, 1)]))
        kappa = float(10 ** rng.uniform(-1, 2))
        r_star = dataset.stats.max_return

        expected = oracle_bin_probs(
            layout.frequencies.tolist(),
            layout.mean_returns.tolist(),
            lam,
            kappa,
            r_star,
        )
        actual = bin_probabilities(layout, lam, kappa, r_star)
        worst = max(worst, _relative_error(actual, expected))

        distances = np.abs(layout.mean_returns - r_star) / kappa
        closed = np.exp(-(distances - distances.min()))
        worst_zero = max(
            worst_zero,
            _relative_error(
                bin_probabilities(layout, 0.0, kappa, r_star), closed / closed.sum()
            ),
        )
        weighted = layout.frequencies * closed
        worst_large = max(
            worst_large,
            _relative_error(
                bin_probabilities(layout, 1e9, kappa, r_star), weighted / weighted.sum()
            ),
        )

    return [
        OracleReport.check("bin_probs", "max_relative_error", worst, 1e-12),
        OracleReport.check(
            "bin_probs_lambda_zero", "max_relative_error", worst_zero, 1e-12
        ),
        OracleReport.check(
            "bin_probs_lambda_large", "max_relative_error", worst_large, 1e-6
        ),
    ]


def _relative_error(actual: Sequence[float], expected: Sequence[float]) -> float:
    worst = 0.0
    for a, e in zip(actual, expected, strict=True):
        if e > 1e-300:
            worst = max(worst, abs(float(a) - e) / e)
        else:
            worst = max(worst, abs(float(a)))
    return worst


def _sampler_suite(rng: np.random.Generator, draws: int) -> list[OracleReport]:
    dataset = _returns_dataset(rng.gamma(2.0, 10.0, 2000).tolist())
    config = WeightingConfig(num_bins=20, lambda_=0.01, kappa_percentile=90)
    layout = build_bins(dataset, config.num_bins)
    probabilities = bin_probabilities(
        layout,
        config.lambda_,
        resolve_kappa(dataset.stats, config),
        dataset.stats.max_return,
    )
    layout = layout.with_probabilities(probabilities)
    tv = oracle_sampler_tv(layout, draws, rng)
    return [OracleReport.check("sampler_tv", "total_variation", tv, 0.01)]


def _random_trajectory(
    rng: np.random.Generator, state_dim: int, action_dim: int, length: int
) -> Trajectory:
    return Trajectory(
        rng.normal(size=(length, state_dim)),
        rng.uniform(-1.0, 1.0, size=(length, action_dim)),
        rng.uniform(0.0, 1.0, size=length),
    )


def _gradient_suite(rng: np.random.Generator, fixtures: int = 20) -> list[OracleReport]:
    worst = 0.0
    for _ in range(fixtures):
        state_dim = int(rng.integers(1, 4))
        action_dim = int(rng.integers(1, 3))
        horizon = int(rng.integers(3, 7))
        trajectories = [
            _random_trajectory(
                rng, state_dim, action_dim, int(rng.integers(1, horizon + 1))
            )
            for _ in range(int(rng.integers(4, 9)))
        ]
        dataset = OfflineDataset.from_trajectories(trajectories, horizon)
        depth = int(rng.integers(1, 3))
        hidden = tuple(int(width) for width in rng.integers(2, 9, depth))
        policy = RvsPolicy.create(dataset, hidden=hidden, seed=int(rng.integers(2**31)))
        config = ConservatismConfig(
            percentile_q=int(rng.choice([0, 50, 75])),
            alpha=float(rng.uniform(0.1, 2.0)),
        )
        noise_seed = int(rng.integers(2**31))
        per_trajectory = bool(rng.integers(2))

        def objective(
            policy: RvsPolicy = policy,
            dataset: OfflineDataset = dataset,
            config: ConservatismConfig = config,
            noise_seed: int = noise_seed,
            per_trajectory: bool = per_trajectory,
        ) -> tuple[float, list[NDArray[np.float64]]]:
            result = combined_objective(
                policy,
                dataset.trajectories,
                config,
                dataset.stats,
                dataset.horizon,
                np.random.default_rng(noise_seed),
                per_trajectory=per_trajectory,
            )
            return result.total_loss, result.grads

        _, analytic = objective()
        numeric = oracle_finite_diff(
            lambda: objective()[0], policy.net.parameters(), h=1e-5
        )
        for exact, estimate in zip(analytic, numeric, strict=True):
            # Coordinates with gradients below 1e-3 are compared absolutely.
            scale = np.maximum(np.maximum(np.abs(exact), np.abs(estimate)), 1e-3)
            worst = max(worst, float(np.max(np.abs(exact - estimate) / scale)))

    return [OracleReport.check("gradients", "max_relative_error", worst, 1e-4)]


def _noise_suite(
    rng: np.random.Generator, draws: int, fixtures: int = 5
) -> list[OracleReport]:
    outside = 0.0
    worst_std = 0.0
    for _ in range(fixtures):
        r_star = float(rng.uniform(-100.0, 100.0))
        r_tau = r_star - float(rng.uniform(0.0, 50.0))
        sigma = float(10 ** rng.uniform(-2, 2))
        moments = oracle_noise_moments(r_tau, r_star, sigma, draws, rng)
        outside = max(outside, 1.0 - moments.support_fraction)
        worst_std = max(worst_std, moments.std_relative_error)
    return [
        OracleReport.check("noise_support", "fraction_outside", outside, 0.0),
        OracleReport.check("noise_std", "relative_error", worst_std, 0.02),
    ]


def _rollout_suite(rng: np.random.Generator, rollouts: int) -> list[OracleReport]:
    spec = ENVS["lineworld"]
    violations = 0
    for index in range(rollouts):
        net = DenseNet.init((spec.state_dim + 1, 8, spec.action_dim), seed=index)
        policy = RvsPolicy(
            net,
            spec.state_dim,
            spec.action_dim,
            spec.horizon,
            state_mean=np.zeros(spec.state_dim),
            state_std=np.ones(spec.state_dim),
        )
        target = float(rng.uniform(0.0, 2.0 * spec.horizon))
        trace = trace_rollout(policy, spec, target, rng)
        received = 0.0
        for t, omega in enumerate(trace.omegas.tolist(), start=1):
            if omega != (target - received) / (spec.horizon - t + 1):
                violations += 1
            received += float(trace.rewards[t - 1])
    return [OracleReport.check("rollout_rtg", "violations", float(violations), 0.0)]


def run_suite(
    suite: Suite,
    seed: int = 0,
    *,
    draws: int = 200_000,
    noise_draws: int = 1_000_000,
    rollouts: int = 1000,
) -> list[OracleReport]:
    """Run one oracle suite, or all of them.

    Parameters
    ----------
    suite : {"bins", "sampler", "gradients", "noise", "rollouts", "all"}
        Which checks to run.
    seed : int
        Seed of the fuzzed fixtures.
    draws : int
        Sampler draws for the total-variation check.
    noise_draws : int
        Noise draws per fixture.
    rollouts : int
        Rollouts whose conditioning is recomputed.
    """
    if suite not in SUITES:
        raise ValueError(f"Unknown suite '{suite}'. Available: {list(SUITES)}.")

    rng = np.random.default_rng(seed)
    runners: dict[str, Callable[[], list[OracleReport]]] = {
        "bins": lambda: _bins_suite(rng),
        "sampler": lambda: _sampler_suite(rng, draws),
        "gradients": lambda: _gradient_suite(rng),
        "noise": lambda: _noise_suite(rng, noise_draws),
        "rollouts": lambda: _rollout_suite(rng, rollouts),
    }
    selected = list(runners) if suite == "all" else [suite]

    reports = []
    for name in selected:
        results = runners[name]()
        for report in results:
            logger.info(
                "%s %s=%.3g (bound %.3g): %s",
                report.oracle,
                report.metric,
                report.value,
                report.bound,
                "pass" if report.passed else "FAIL",
            )
        reports.extend(results)
    return reports
