"""CSV reports, run manifests and the ablation driver.

All reports are plain CSV with a header row. Floats are written with ``repr`` so that
re-running a command reproduces its CSV files byte for byte.
"""

import csv
import hashlib
import json
import logging
from collections.abc import Iterable, Sequence
from datetime import datetime
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Literal, get_args

import numpy as np
from pydantic import AwareDatetime, BaseModel, ConfigDict

from .envs import EnvSpec
from .evaluator import (
    ComparisonCell,
    ComparisonReport,
    EvalConfig,
    ReliabilityCurve,
    mean_curve,
    normalized_score,
    resolve_references,
    train_and_evaluate,
)
from .model import OfflineDataset
from .trainer import TrainConfig, TrainLog
from .weighting import (
    WeightingConfig,
    bin_density,
    bin_probabilities,
    build_bins,
    density_weight,
    resolve_kappa,
)

__all__ = [
    "ABLATION_PARAMETERS",
    "COMPARISON_HEADER",
    "CURVE_HEADER",
    "DENSITY_HEADER",
    "HISTOGRAM_HEADER",
    "SUMMARY_HEADER",
    "TRAIN_LOG_HEADER",
    "AblationParameter",
    "RunManifest",
    "ablation_config",
    "file_digest",
    "package_version",
    "report_density",
    "report_histograms",
    "run_ablation",
    "write_comparison",
    "write_csv",
    "write_curve",
    "write_manifest",
    "write_train_log",
]

logger = logging.getLogger(__name__)

type Cell = str | int | float | None

TRAIN_LOG_HEADER = ("iter", "bc_loss", "cons_loss", "total_loss", "ms")
CURVE_HEADER = ("basis", "multiplier", "target", "mean", "std", "normalized")
COMPARISON_HEADER = (
    "variant",
    "seeds",
    "mean",
    "std",
    "normalized",
    "ood_drop",
    "wins",
    "errors",
)
HISTOGRAM_HEADER = ("bin_index", "mean_return", "frequency", "probability")
DENSITY_HEADER = ("bin_index", "mean_return", "density", "weight")
SUMMARY_HEADER = (
    "parameter",
    "value",
    "seeds",
    "mean",
    "std",
    "normalized",
    "ood_drop",
    "error",
)

AblationParameter = Literal["kappa", "lambda", "q", "alpha", "sigma"]
ABLATION_PARAMETERS: tuple[str, ...] = get_args(AblationParameter)


def _format_cell(value: Cell) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float | np.floating):
        return repr(float(value))
    return str(value)


def write_csv(
    path: Path | str, header: Sequence[str], rows: Iterable[Sequence[Cell]]
) -> Path:
    """Write a CSV file with a header; every row must match the header's width.

    Examples
    --------
    >>> import tempfile
    >>> from pathlib import Path
    >>> with tempfile.TemporaryDirectory() as folder:
    ...     path = cwbc.write_csv(Path(folder) / "demo.csv", ("a", "b"), [(1, 0.1)])
    ...     path.read_text()
    'a,b\\n1,0.1\\n'
    """
    if isinstance(path, str):
        path = Path(path)

    lines = [list(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(
                f"Row {len(lines)} of {path.name} has {len(row)} columns, expected "
                f"{len(header)}."
            )
        lines.append([_format_cell(value) for value in row])

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as file_handle:
        csv.writer(file_handle, lineterminator="\n").writerows(lines)
    logger.info("Wrote %d rows to %s", len(lines) - 1, path)
    return path


def write_train_log(log: TrainLog, path: Path | str) -> Path:
    """Write the logged training losses."""
    return write_csv(
        path,
        TRAIN_LOG_HEADER,
        (
            (r.iteration, r.bc_loss, r.cons_loss, r.total_loss, r.ms)
            for r in log.records
        ),
    )


def write_curve(curve: ReliabilityCurve, path: Path | str) -> Path:
    """Write the points of a reliability curve."""
    return write_csv(
        path,
        CURVE_HEADER,
        (
            (r.basis, r.multiplier, r.target, r.mean, r.std, r.normalized)
            for r in curve.records
        ),
    )


def write_comparison(report: ComparisonReport, path: Path | str) -> Path:
    """Write one aggregate row per compared variant."""
    return write_csv(
        path,
        COMPARISON_HEADER,
        (
            (
                row.variant.value,
                row.seeds,
                row.mean,
                row.std,
                row.normalized,
                row.ood_drop,
                row.wins,
                row.errors,
            )
            for row in report.rows()
        ),
    )


def report_histograms(
    dataset: OfflineDataset, config: WeightingConfig, path: Path | str | None = None
) -> list[tuple[int, float, float, float]]:
    """Original bin frequencies next to the transformed sampling probabilities.

    Rows are ``(bin_index, mean_return, frequency, probability)``, lowest returns
    first. The rows are also written to ``path`` if one is given.
    """
    layout = build_bins(dataset, config.num_bins)
    kappa = resolve_kappa(dataset.stats, config)
    probabilities = bin_probabilities(
        layout, config.lambda_, kappa, dataset.stats.max_return
    )
    rows = [
        (index, float(mean_return), float(frequency), float(probability))
        for index, (mean_return, frequency, probability) in enumerate(
            zip(layout.mean_returns, layout.frequencies, probabilities, strict=True)
        )
    ]
    if path is not None:
        write_csv(path, HISTOGRAM_HEADER, rows)
    return rows


def report_density(
    dataset: OfflineDataset, config: WeightingConfig, path: Path | str | None = None
) -> list[tuple[int, float, float, float]]:
    """Continuous-form weight evaluated at every bin's mean return.

    Rows are ``(bin_index, mean_return, density, weight)`` where ``density`` is the
    histogram density of the bin and ``weight`` the unnormalised continuous weight.
    """
    layout = build_bins(dataset, config.num_bins)
    kappa = resolve_kappa(dataset.stats, config)
    densities = bin_density(layout, dataset.returns)
    rows = [
        (
            index,
            float(mean_return),
            float(density),
            density_weight(
                float(mean_return),
                float(density),
                config.lambda_,
                kappa,
                dataset.stats.max_return,
            ),
        )
        for index, (mean_return, density) in enumerate(
            zip(layout.mean_returns, densities, strict=True)
        )
    ]
    if path is not None:
        write_csv(path, DENSITY_HEADER, rows)
    return rows


def package_version() -> str:
    """Installed version of this package, or ``unknown`` when run from source."""
    try:
        return version("cwbc")
    except PackageNotFoundError:
        return "unknown"


def file_digest(path: Path | str) -> str:
    """SHA-256 digest of a file."""
    with Path(path).open("rb") as file_handle:
        return hashlib.file_digest(file_handle, "sha256").hexdigest()


class RunManifest(BaseModel):
    """Record of one artifact-producing command, written next to its outputs.

    Attributes
    ----------
    command : str
        Subcommand that produced the outputs.
    config : dict
        The fully resolved configuration.
    seed : int, optional
        Master seed of the run.
    version : str
        Package version.
    inputs : dict[str, str]
        SHA-256 digests of the input files, keyed by path.
    outputs : list[str]
        Paths of the written artifacts.
    started_at, finished_at : datetime
        Timezone-aware wall-clock timestamps.
    """

    command: str
    config: dict[str, Any]
    seed: int | None = None
    version: str
    inputs: dict[str, str] = {}
    outputs: list[str] = []
    started_at: AwareDatetime
    finished_at: AwareDatetime

    model_config = ConfigDict(extra="forbid")

    @classmethod
    def create(
        cls,
        command: str,
        config: dict[str, Any],
        *,
        seed: int | None,
        inputs: Sequence[Path],
        outputs: Sequence[Path],
        started_at: datetime,
        finished_at: datetime,
    ) -> "RunManifest":
        """Build a manifest, hashing every input file."""
        return cls(
            command=command,
            config=config,
            seed=seed,
            version=package_version(),
            inputs={str(path): file_digest(path) for path in inputs},
            outputs=[str(path) for path in outputs],
            started_at=started_at,
            finished_at=finished_at,
        )


def write_manifest(manifest: RunManifest, path: Path | str) -> Path:
    """Write a manifest as indented JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(manifest.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8"
    )
    return path


def _as_percentile(parameter: str, value: float) -> int:
    if not float(value).is_integer():
        raise ValueError(
            f"Ablation values of '{parameter}' must be integers, got {value}."
        )
    return int(value)


def ablation_config(
    parameter: AblationParameter, value: float, base: TrainConfig
) -> TrainConfig:
    """Training configuration of one ablation cell.

    ``kappa`` values are percentiles ``z`` of the gap rule ``κ = r* - r_z``, ``q``
    values are percentiles of the regularizer threshold, and ``lambda``, ``alpha``
    and ``sigma`` set the respective parameter directly.
    """
    weighting = base.weighting.model_dump()
    conservatism = base.conservatism.model_dump()
    match parameter:
        case "kappa":
            weighting.update(
                kappa=None, kappa_percentile=_as_percentile(parameter, value)
            )
        case "lambda":
            weighting.update(lambda_=value)
        case "q":
            conservatism.update(percentile_q=_as_percentile(parameter, value))
        case "alpha":
            conservatism.update(alpha=value)
        case "sigma":
            conservatism.update(noise_std=value)
        case _:
            raise ValueError(
                f"Unknown ablation parameter '{parameter}'. Available: "
                f"{list(ABLATION_PARAMETERS)}."
            )
    return TrainConfig.model_validate(
        {**base.model_dump(), "weighting": weighting, "conservatism": conservatism}
    )


def _value_label(value: float) -> str:
    return format(value, "g")


def run_ablation(
    parameter: AblationParameter,
    values: Sequence[float],
    base: TrainConfig,
    dataset: OfflineDataset,
    spec: EnvSpec,
    eval_config: EvalConfig,
    out_dir: Path | str,
    *,
    seeds: Sequence[int] = (0,),
    references: tuple[float, float] | None = None,
) -> Path:
    """Train and evaluate a grid over one parameter with shared seeds.

    For every value, the seed-averaged reliability curve is written to
    ``curve_<parameter>_<value>.csv``; ``kappa`` and ``lambda`` grids also write the
    bin histograms to ``hist_<parameter>_<value>.csv``. ``summary.csv`` holds one row
    per value. A failing cell is recorded in the summary and the grid continues.

    Returns
    -------
    Path
        The report directory.
    """
    if len(values) < 2:
        raise ValueError(f"An ablation needs at least two values, got {len(values)}.")
    if parameter not in ABLATION_PARAMETERS:
        raise ValueError(
            f"Unknown ablation parameter '{parameter}'. Available: "
            f"{list(ABLATION_PARAMETERS)}."
        )
    if not seeds:
        raise ValueError("An ablation needs at least one seed.")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    references = references or resolve_references(spec, eval_config)

    summary: list[tuple[Cell, ...]] = []
    for value in values:
        label = _value_label(value)
        try:
            config = ablation_config(parameter, value, base)
        except ValueError as exc:
            logger.warning("Ablation %s=%s rejected: %s", parameter, label, exc)
            summary.append((parameter, value, 0, None, None, None, None, str(exc)))
            continue

        if parameter in ("kappa", "lambda"):
            try:
                report_histograms(
                    dataset,
                    config.weighting,
                    out_dir / f"hist_{parameter}_{label}.csv",
                )
            except ValueError as exc:
                logger.warning("Histogram for %s=%s failed: %s", parameter, label, exc)

        cells: list[ComparisonCell] = []
        errors: list[str] = []
        for seed in seeds:
            try:
                cells.append(
                    train_and_evaluate(
                        dataset,
                        spec,
                        config.model_copy(update={"seed": seed}),
                        eval_config,
                        references,
                    )
                )
            except (RuntimeError, ValueError) as exc:
                logger.warning(
                    "Ablation %s=%s seed %d failed: %s", parameter, label, seed, exc
                )
                errors.append(f"seed {seed}: {exc}")

        if not cells:
            failure = "; ".join(errors)
            summary.append((parameter, value, 0, None, None, None, None, failure))
            continue

        curves = [cell.curve for cell in cells if cell.curve is not None]
        write_curve(mean_curve(curves), out_dir / f"curve_{parameter}_{label}.csv")
        means = np.array([cell.mean for cell in cells], dtype=np.float64)
        ratios = [cell.ood_drop for cell in cells if cell.ood_drop is not None]
        summary.append(
            (
                parameter,
                value,
                len(cells),
                float(means.mean()),
                float(means.std()),
                normalized_score(float(means.mean()), *references),
                float(np.mean(ratios)) if ratios else None,
                "; ".join(errors) or None,
            )
        )

    write_csv(out_dir / "summary.csv", SUMMARY_HEADER, summary)
    return out_dir
