"""Reading and writing offline datasets in the JSON-lines file format.

The first line of a dataset file is a :class:`~cwbc.model.DatasetHeader`, every
following line a :class:`~cwbc.model.TrajectoryRecord`. Return-to-go is recomputed on
load. Files ending in ``.gz`` are compressed transparently.
"""

import contextlib
import gzip
import io
import json
import logging
from collections.abc import Iterator
from pathlib import Path
from typing import TextIO

from .model import DatasetHeader, OfflineDataset, TrajectoryRecord
from .validator import Validator

__all__ = ["read_dataset", "validate_dataset", "write_dataset"]

logger = logging.getLogger(__name__)


@contextlib.contextmanager
def _open_for_writing(filepath: Path) -> Iterator[TextIO]:
    if filepath.suffix == ".gz":
        # mtime=0 keeps the gzip header, and thus the file, byte-reproducible.
        with (
            filepath.open("wb") as raw,
            gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as compressed,
            io.TextIOWrapper(compressed, encoding="utf-8") as file_handle,
        ):
            yield file_handle
    else:
        with filepath.open("w", encoding="utf-8") as file_handle:
            yield file_handle


def _dumps(payload: dict[str, object]) -> str:
    # ``json`` writes floats with ``repr``, which round-trips exactly.
    return json.dumps(payload, separators=(",", ":"), allow_nan=False)


def write_dataset(dataset: OfflineDataset, path: Path | str) -> Path:
    """Write a dataset to a JSON-lines file.

    Parameters
    ----------
    dataset : OfflineDataset
        The dataset to write.
    path : Path | str
        Target file, ending in ``.jsonl`` or ``.jsonl.gz``.

    Returns
    -------
    pathlib.Path
        The path that was written.
    """
    if isinstance(path, str):
        path = Path(path)

    header = DatasetHeader(
        version=1,
        horizon=dataset.horizon,
        state_dim=dataset.state_dim,
        action_dim=dataset.action_dim,
    )

    path.parent.mkdir(parents=True, exist_ok=True)
    with _open_for_writing(path) as file_handle:
        file_handle.write(_dumps(header.model_dump()) + "\n")
        for trajectory in dataset.trajectories:
            record = TrajectoryRecord.from_trajectory(trajectory)
            file_handle.write(_dumps(record.model_dump()) + "\n")

    logger.info("Wrote %d trajectories to %s", len(dataset), path)
    return path


def read_dataset(path: Path | str) -> OfflineDataset:
    """Read and validate a dataset file.

    Raises
    ------
    ValueError
        If the file does not pass validation.
    """
    return Validator().load(path)


def validate_dataset(path: Path | str) -> bool:
    r"""Validate whether a given file is a valid CWBC dataset.

    Validation errors are logged, but not raised as exceptions.

    Examples
    --------
    >>> from pathlib import Path
    >>> from tempfile import TemporaryDirectory
    >>> with TemporaryDirectory() as tmp_dir:
    ...     dataset_path = Path(tmp_dir) / "demo.jsonl"
    ...     _ = dataset_path.write_text(
    ...         '{"version": 1, "horizon": 2, "state_dim": 1, "action_dim": 1}\n'
    ...         '{"states": [[0.0], [0.5]], "actions": [[1.0], [0.0]], '
    ...         '"rewards": [0.5, 1.0]}\n'
    ...     )
    ...     cwbc.validate_dataset(dataset_path)
    True
    """
    return Validator().validate(path)
