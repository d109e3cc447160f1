"""Tests for the brute-force reference checks."""

from collections.abc import Callable

import numpy as np
import pytest
from pydantic import ValidationError

import cwbc.oracles as oracles
from cwbc.model import OfflineDataset, Trajectory
from cwbc.oracles import (
    OracleReport,
    Suite,
    oracle_bin_probs,
    oracle_finite_diff,
    oracle_noise_moments,
    oracle_sampler_tv,
    run_suite,
)
from cwbc.weighting import bin_probabilities, build_bins


def make_dataset(returns: list[float]) -> OfflineDataset:
    """Build a dataset of single-step trajectories with the given returns."""
    trajectories = [Trajectory([[0.0]], [[0.0]], [value]) for value in returns]
    return OfflineDataset.from_trajectories(trajectories, horizon=1)


def test_report_pass_flag_must_match_bound() -> None:
    """Reports cannot claim a pass above their bound."""
    assert OracleReport.check("x", "error", 0.5, 1.0).passed
    assert not OracleReport.check("x", "error", 1.5, 1.0).passed
    with pytest.raises(ValidationError):
        OracleReport(oracle="x", metric="error", value=2.0, bound=1.0, passed=True)


def test_bin_oracle_agrees_with_vectorised_probabilities() -> None:
    """Both evaluation paths give the same distribution."""
    rng = np.random.default_rng(0)
    dataset = make_dataset(rng.gamma(2.0, 10.0, 77).tolist())
    layout = build_bins(dataset, 9)
    r_star = dataset.stats.max_return

    expected = oracle_bin_probs(
        layout.frequencies.tolist(), layout.mean_returns.tolist(), 0.05, 3.0, r_star
    )

    assert bin_probabilities(layout, 0.05, 3.0, r_star) == pytest.approx(
        expected, rel=1e-12
    )
    with pytest.raises(ValueError):
        oracle_bin_probs([1.0], [1.0], 0.0, 0.0, 1.0)


def test_finite_differences_restore_parameters() -> None:
    """Perturbed parameters are restored after differencing."""
    theta = np.array([[1.0, 2.0], [3.0, 4.0]])
    before = theta.copy()

    (grad,) = oracle_finite_diff(lambda: float(np.sum(theta**3)), [theta], h=1e-5)

    assert np.array_equal(theta, before)
    assert grad == pytest.approx(3 * before**2, rel=1e-8)
    with pytest.raises(ValueError):
        oracle_finite_diff(lambda: 0.0, [theta], h=0.0)


def test_sampler_oracle_needs_probabilities() -> None:
    """The sampler oracle only works on weighted layouts."""
    layout = build_bins(make_dataset([1.0, 2.0, 3.0]), 3)

    with pytest.raises(ValueError):
        oracle_sampler_tv(layout, 100, np.random.default_rng(0))

    layout = layout.with_probabilities(np.array([0.0, 0.0, 1.0]))
    assert oracle_sampler_tv(layout, 100, np.random.default_rng(0)) == 0.0


def test_noise_oracle_reports_full_support() -> None:
    """All perturbed returns fall into the expected interval."""
    moments = oracle_noise_moments(3.0, 10.0, 0.5, 50_000, np.random.default_rng(1))

    assert moments.support_fraction == 1.0
    assert moments.std_relative_error < 0.02


@pytest.mark.parametrize(
    ("suite", "options"),
    [
        ("bins", {}),
        ("sampler", {}),
        ("gradients", {}),
        ("noise", {"noise_draws": 100_000}),
        ("rollouts", {"rollouts": 50}),
    ],
)
def test_suites_pass(suite: Suite, options: dict[str, int]) -> None:
    """Every oracle suite passes on the shipped implementation."""
    reports = run_suite(suite, seed=0, **options)

    assert reports
    assert all(report.passed for report in reports), reports


def test_gradient_suite_uses_double_precision_step(
    monkeypatch: pytest.MonkeyPatch,
) -> None:
    """Gradients are checked with a 1e-5 central step against a 1e-4 bound."""
    steps: list[float] = []
    real_finite_diff = oracles.oracle_finite_diff

    def recording_finite_diff(
        loss: Callable[[], float], params: list[np.ndarray], h: float = 1e-5
    ) -> list[np.ndarray]:
        steps.append(h)
        return real_finite_diff(loss, params, h=h)

    monkeypatch.setattr(oracles, "oracle_finite_diff", recording_finite_diff)
    (report,) = run_suite("gradients", seed=3)

    assert steps
    assert set(steps) == {1e-5}
    assert report.bound == 1e-4
    assert report.passed, report


def test_unknown_suite_is_rejected() -> None:
    """Only the documented suites can be run."""
    with pytest.raises(ValueError, match="Unknown suite"):
        run_suite("everything")  # type: ignore[arg-type]


@pytest.mark.slow
def test_all_suites_pass_at_full_size() -> None:
    """The complete verification passes with its default sizes."""
    reports = run_suite("all", seed=0)

    assert {report.oracle for report in reports} >= {
        "bin_probs",
        "sampler_tv",
        "gradients",
        "noise_support",
        "rollout_rtg",
    }
    assert all(report.passed for report in reports)
