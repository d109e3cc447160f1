"""Tests for CSV reports, manifests and the ablation driver."""

import csv
import json
import math
from collections.abc import Callable
from datetime import UTC, datetime
from pathlib import Path

import pytest

from cwbc.envs import ENVS, generate_dataset, make_recipe
from cwbc.evaluator import EvalConfig, compare_variants
from cwbc.model import OfflineDataset
from cwbc.report import (
    HISTOGRAM_HEADER,
    SUMMARY_HEADER,
    AblationParameter,
    RunManifest,
    ablation_config,
    file_digest,
    report_density,
    report_histograms,
    run_ablation,
    write_csv,
    write_curve,
    write_manifest,
    write_train_log,
)
from cwbc.trainer import TrainConfig, train
from cwbc.weighting import WeightingConfig, resolve_kappa


@pytest.fixture(scope="module")
def dataset() -> OfflineDataset:
    """A small mixed-quality dataset."""
    return generate_dataset(make_recipe("med-replay", ENVS["lineworld"], n=15, seed=0))


def read_rows(path: Path) -> list[dict[str, str]]:
    """Read a CSV report as dictionaries."""
    with path.open(encoding="utf-8", newline="") as file_handle:
        return list(csv.DictReader(file_handle))


def fast_config(**updates: object) -> TrainConfig:
    """A configuration that trains in a blink."""
    values: dict[str, object] = {
        "iterations": 3,
        "batch_size": 4,
        "hidden": (8,),
        "log_timing": False,
        "weighting": WeightingConfig(num_bins=5),
    }
    values.update(updates)
    return TrainConfig.model_validate(values)


def test_write_csv_checks_row_width(tmp_path: Path) -> None:
    """Rows must match the header."""
    with pytest.raises(ValueError, match="expected 2"):
        write_csv(tmp_path / "bad.csv", ("a", "b"), [(1, 2, 3)])


def test_write_csv_formats_missing_values_and_floats(tmp_path: Path) -> None:
    """Missing values are empty and floats round-trip exactly."""
    path = write_csv(tmp_path / "out.csv", ("a", "b", "c"), [(None, 1 / 3, True)])

    assert path.read_text(encoding="utf-8") == "a,b,c\n,0.3333333333333333,true\n"


def test_train_log_is_byte_reproducible(
    tmp_path: Path, dataset: OfflineDataset
) -> None:
    """Untimed training logs are identical across reruns."""
    config = fast_config(iterations=12, log_interval=5)
    write_train_log(train(dataset, config)[1], tmp_path / "a.csv")
    write_train_log(train(dataset, config)[1], tmp_path / "b.csv")

    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert [row["iter"] for row in read_rows(tmp_path / "a.csv")] == [
        "1",
        "5",
        "10",
        "12",
    ]
    assert {row["ms"] for row in read_rows(tmp_path / "a.csv")} == {"0.0"}


def test_histograms_are_distributions(tmp_path: Path, dataset: OfflineDataset) -> None:
    """Both the frequencies and the probabilities sum to one."""
    path = tmp_path / "hist.csv"
    rows = report_histograms(dataset, WeightingConfig(num_bins=5), path)

    assert len(rows) == 5
    assert [row[0] for row in rows] == [0, 1, 2, 3, 4]
    assert [row[1] for row in rows] == sorted(row[1] for row in rows)
    assert math.fsum(row[2] for row in rows) == pytest.approx(1.0)
    assert math.fsum(row[3] for row in rows) == pytest.approx(1.0)
    assert HISTOGRAM_HEADER == ("bin_index", "mean_return", "frequency", "probability")
    assert path.read_text(encoding="utf-8").splitlines()[0] == ",".join(
        HISTOGRAM_HEADER
    )
    assert read_rows(path)[4]["probability"] == repr(rows[4][3])


def test_weighting_favours_high_return_bins(dataset: OfflineDataset) -> None:
    """With equal-sized bins the top bin is the most likely one."""
    rows = report_histograms(dataset, WeightingConfig(num_bins=5, lambda_=0.01))

    assert max(rows, key=lambda row: row[3])[0] == 4


def test_density_weight_peaks_at_the_top(dataset: OfflineDataset) -> None:
    """The continuous weight is largest near the highest return."""
    rows = report_density(dataset, WeightingConfig(num_bins=5, lambda_=0.0))

    assert all(row[2] > 0 for row in rows)
    assert rows[-1][3] == max(row[3] for row in rows)


@pytest.mark.parametrize(
    ("parameter", "value", "check"),
    [
        ("kappa", 80, lambda c: c.weighting.kappa_percentile == 80),
        ("lambda", 0.5, lambda c: c.weighting.lambda_ == 0.5),
        ("q", 90, lambda c: c.conservatism.percentile_q == 90),
        ("alpha", 0.0, lambda c: c.conservatism.alpha == 0.0),
        ("sigma", 2.0, lambda c: c.conservatism.noise_std == 2.0),
    ],
)
def test_ablation_config_sets_one_parameter(
    parameter: AblationParameter,
    value: float,
    check: Callable[[TrainConfig], bool],
) -> None:
    """Each ablation parameter changes exactly its own setting."""
    base = fast_config(variant="wc", seed=3)
    config = ablation_config(parameter, value, base)

    assert check(config)
    assert config.variant == base.variant
    assert config.seed == 3


def test_ablation_config_rejects_fractional_percentiles() -> None:
    """Percentile parameters must be integers."""
    with pytest.raises(ValueError, match="integers"):
        ablation_config("q", 92.5, fast_config())


def test_run_ablation_writes_every_report(
    tmp_path: Path, dataset: OfflineDataset
) -> None:
    """An alpha grid writes one curve per value and a summary."""
    eval_config = EvalConfig(
        episodes=2, max_multipliers=(1.0, 2.0), expert_multipliers=(1.0,)
    )
    out = run_ablation(
        "alpha",
        [0.0, 1.0],
        fast_config(),
        dataset,
        ENVS["lineworld"],
        eval_config,
        tmp_path / "ablation",
        references=(5.0, 30.0),
    )

    assert (out / "curve_alpha_0.csv").is_file()
    assert (out / "curve_alpha_1.csv").is_file()
    assert not list(out.glob("hist_*.csv"))
    rows = read_rows(out / "summary.csv")
    assert list(rows[0]) == list(SUMMARY_HEADER)
    assert [row["value"] for row in rows] == ["0.0", "1.0"]
    assert all(row["error"] == "" for row in rows)


def test_run_ablation_records_rejected_values(
    tmp_path: Path, dataset: OfflineDataset
) -> None:
    """Invalid grid values are recorded and the grid continues."""
    eval_config = EvalConfig(
        episodes=1, max_multipliers=(1.0, 2.0), expert_multipliers=(1.0,)
    )
    out = run_ablation(
        "kappa",
        [90.0, 12.5],
        fast_config(),
        dataset,
        ENVS["lineworld"],
        eval_config,
        tmp_path,
        references=(5.0, 30.0),
    )

    rows = read_rows(out / "summary.csv")
    assert (out / "hist_kappa_90.csv").is_file()
    assert rows[0]["error"] == ""
    assert "integers" in rows[1]["error"]


def test_run_ablation_needs_two_values(tmp_path: Path, dataset: OfflineDataset) -> None:
    """A grid of one value is not an ablation."""
    with pytest.raises(ValueError, match="at least two"):
        run_ablation(
            "alpha",
            [1.0],
            fast_config(),
            dataset,
            ENVS["lineworld"],
            EvalConfig(),
            tmp_path,
        )


def test_manifest_records_inputs_and_outputs(tmp_path: Path) -> None:
    """Manifests hash their inputs and list their outputs."""
    data = tmp_path / "data.jsonl"
    data.write_text("payload\n", encoding="utf-8")
    now = datetime.now(tz=UTC)
    manifest = RunManifest.create(
        "train",
        {"train": {"seed": 1}},
        seed=1,
        inputs=[data],
        outputs=[tmp_path / "policy.json"],
        started_at=now,
        finished_at=now,
    )

    path = write_manifest(manifest, tmp_path / "policy.json.manifest.json")
    written = json.loads(path.read_text(encoding="utf-8"))

    assert written["command"] == "train"
    assert written["inputs"] == {str(data): file_digest(data)}
    assert written["outputs"] == [str(tmp_path / "policy.json")]
    assert RunManifest.model_validate(written) == manifest


def test_lambda_ablation_matches_closed_form_limits(
    tmp_path: Path, dataset: OfflineDataset
) -> None:
    """Lambda zero weights by return alone; a huge lambda also by bin frequency."""
    base = fast_config()
    eval_config = EvalConfig(
        episodes=1, max_multipliers=(1.0, 2.0), expert_multipliers=(1.0,)
    )
    out = run_ablation(
        "lambda",
        [0.0, 1e9],
        base,
        dataset,
        ENVS["lineworld"],
        eval_config,
        tmp_path,
        references=(5.0, 30.0),
    )
    kappa = resolve_kappa(dataset.stats, base.weighting)
    r_star = dataset.stats.max_return

    def closed_form(path: Path, use_frequency: bool) -> tuple[list[float], list[float]]:
        rows = read_rows(path)
        weights = [
            (float(row["frequency"]) if use_frequency else 1.0)
            * math.exp(-abs(float(row["mean_return"]) - r_star) / kappa)
            for row in rows
        ]
        total = math.fsum(weights)
        return [float(row["probability"]) for row in rows], [
            weight / total for weight in weights
        ]

    actual, expected = closed_form(out / "hist_lambda_0.csv", use_frequency=False)
    assert actual == pytest.approx(expected, rel=1e-12)
    actual, expected = closed_form(out / "hist_lambda_1e+09.csv", use_frequency=True)
    assert actual == pytest.approx(expected, rel=1e-6)


def test_lambda_zero_with_large_kappa_is_uniform_over_bins(
    dataset: OfflineDataset,
) -> None:
    """Without smoothing and with a flat temperature every bin is equally likely."""
    rows = report_histograms(
        dataset, WeightingConfig(num_bins=5, lambda_=0.0, kappa=1e12)
    )

    assert [row[3] for row in rows] == pytest.approx([0.2] * 5, rel=1e-9)


def test_alpha_zero_ablation_reproduces_weighted_variant(
    tmp_path: Path, dataset: OfflineDataset
) -> None:
    """Without the regularizer the weighted-conservative cell is the weighted one."""
    eval_config = EvalConfig(
        episodes=2, max_multipliers=(1.0, 2.0), expert_multipliers=(1.0,)
    )
    base = fast_config(variant="wc")
    out = run_ablation(
        "alpha",
        [0.0, 1.0],
        base,
        dataset,
        ENVS["lineworld"],
        eval_config,
        tmp_path / "ablation",
        seeds=[0, 1],
        references=(5.0, 30.0),
    )
    report = compare_variants(
        dataset,
        ENVS["lineworld"],
        ["w"],
        [0, 1],
        base,
        eval_config,
        references=(5.0, 30.0),
    )
    curve = report.curve_of(0)
    assert curve is not None
    weighted = write_curve(curve, tmp_path / "weighted.csv")

    assert (out / "curve_alpha_0.csv").read_bytes() == weighted.read_bytes()
