"""Module containing the validator and loader for CWBC dataset files."""

import gzip
import logging
from abc import ABC, abstractmethod
from collections.abc import Iterator
from pathlib import Path
from typing import override

from pydantic import ValidationError

from .model import DatasetHeader, OfflineDataset, Trajectory, TrajectoryRecord

__all__ = [
    "DimensionRule",
    "FileExistsRule",
    "FileExtensionRule",
    "HorizonRule",
    "PostModelRule",
    "PreFlightRule",
    "Validator",
]


class PreFlightRule(ABC):
    """Base class for validation rules that run before the dataset file is loaded."""

    def __init__(self) -> None:
        self.logger = logging.getLogger(self.__class__.__name__)

    @abstractmethod
    def validate(self, file_path: Path) -> bool:
        """
        Validate the dataset before loading it.

        Parameters
        ----------
        file_path : pathlib.Path
            The path of the file to validate.

        Returns
        -------
        bool
            True if the dataset is valid, False otherwise.
        """


class PostModelRule(ABC):
    """Base class for validation rules that run on every parsed trajectory."""

    def __init__(self) -> None:
        self.logger = logging.getLogger(self.__class__.__name__)

    @abstractmethod
    def validate(
        self, header: DatasetHeader, trajectory: Trajectory, line_number: int
    ) -> bool:
        """
        Validate a parsed trajectory against the file header.

        Parameters
        ----------
        header : DatasetHeader
            The header of the dataset file.
        trajectory : Trajectory
            The trajectory parsed from the current line.
        line_number : int
            The line the trajectory was read from, for error messages.

        Returns
        -------
        bool
            True if the trajectory is valid, False otherwise.
        """


class FileExtensionRule(PreFlightRule):
    """Rule to validate file extensions."""

    @override
    def validate(self, file_path: Path) -> bool:
        if not (file_path.suffix == ".jsonl" or file_path.name.endswith(".jsonl.gz")):
            self.logger.error("Dataset must be a .jsonl or .jsonl.gz file.")
            return False

        self.logger.debug("File name %s is valid.", file_path.name)
        return True


class FileExistsRule(PreFlightRule):
    """Rule to validate that the input path points to an existing file."""

    @override
    def validate(self, file_path: Path) -> bool:
        """Validate that the file exists and is a regular file."""
        if not file_path.exists():
            self.logger.error("Dataset file %s does not exist.", file_path)
            return False

        if not file_path.is_file():
            self.logger.error("Path %s is not a file.", file_path)
            return False

        self.logger.debug("Dataset file %s exists.", file_path)
        return True


class HorizonRule(PostModelRule):
    """Rule to validate that no trajectory is longer than the declared horizon."""

    @override
    def validate(
        self, header: DatasetHeader, trajectory: Trajectory, line_number: int
    ) -> bool:
        if len(trajectory) > header.horizon:
            self.logger.error(
                "Trajectory at line %d has length %d, exceeding the horizon %d.",
                line_number,
                len(trajectory),
                header.horizon,
            )
            return False
        return True


class DimensionRule(PostModelRule):
    """Rule to validate state and action dimensions against the header."""

    @override
    def validate(
        self, header: DatasetHeader, trajectory: Trajectory, line_number: int
    ) -> bool:
        state_dim = trajectory.states.shape[1]
        action_dim = trajectory.actions.shape[1]
        if state_dim != header.state_dim or action_dim != header.action_dim:
            self.logger.error(
                "Trajectory at line %d has dimensions (%d, %d), expected (%d, %d).",
                line_number,
                state_dim,
                action_dim,
                header.state_dim,
                header.action_dim,
            )
            return False
        return True


class Validator:
    """Validator class to manage validation rules and load dataset files."""

    pre_flight_rules: list[PreFlightRule]
    post_model_rules: list[PostModelRule]

    def __init__(self) -> None:
        self.pre_flight_rules = [
            FileExistsRule(),
            FileExtensionRule(),
        ]
        self.post_model_rules = [
            HorizonRule(),
            DimensionRule(),
        ]

        self.logger = logging.getLogger(self.__class__.__name__)

    def _iter_lines(self, dataset_path: Path) -> Iterator[str]:
        """Yield lines from plain text or gzip-compressed dataset files."""
        if dataset_path.suffix == ".gz":
            with gzip.open(dataset_path, "rt", encoding="utf-8") as f:
                yield from f
        else:
            with dataset_path.open("r", encoding="utf-8") as f:
                yield from f

    def _validate_preflight(self, dataset_path: Path) -> bool:
        """Run all pre-flight validation rules."""
        return all(
            rule.validate(file_path=dataset_path) for rule in self.pre_flight_rules
        )

    def _validate_post_model(
        self, header: DatasetHeader, trajectory: Trajectory, line_number: int
    ) -> bool:
        """Run all post-model validation rules."""
        return all(
            rule.validate(header=header, trajectory=trajectory, line_number=line_number)
            for rule in self.post_model_rules
        )

    def load(self, dataset_path: Path | str) -> OfflineDataset:
        """Load a dataset file, running all validation rules.

        Parameters
        ----------
        dataset_path : Path | str
            The path to the dataset file.

        Returns
        -------
        OfflineDataset
            The loaded dataset with freshly computed return-to-go and statistics.

        Raises
        ------
        ValueError
            If any validation rule fails or the file cannot be read.
        """
        if isinstance(dataset_path, str):
            dataset_path = Path(dataset_path)

        if not self._validate_preflight(dataset_path):
            raise ValueError(f"Pre-flight validation failed for {dataset_path}.")

        try:
            line_iterator = self._iter_lines(dataset_path)
            first_line = next(line_iterator).strip()
        except StopIteration:
            raise ValueError(f"Dataset file {dataset_path} is empty.") from None
        except OSError as error:
            raise ValueError(
                f"Could not read dataset file {dataset_path}: {error}"
            ) from error

        try:
            header = DatasetHeader.model_validate_json(first_line)
        except ValidationError as error:
            raise ValueError(
                f"Invalid dataset header in first line: {error}"
            ) from error

        trajectories: list[Trajectory] = []
        try:
            for line_number, line in enumerate(line_iterator, start=2):
                if not line.strip():
                    continue
                record = TrajectoryRecord.model_validate_json(line)
                trajectory = record.to_trajectory()
                if not self._validate_post_model(header, trajectory, line_number):
                    raise ValueError(
                        f"Post-model validation failed at line {line_number} of "
                        f"{dataset_path}."
                    )
                trajectories.append(trajectory)
        except ValidationError as error:
            raise ValueError(f"Invalid trajectory entry: {error}") from error
        except OSError as error:
            raise ValueError(
                f"Could not read dataset file {dataset_path}: {error}"
            ) from error

        if not trajectories:
            raise ValueError(f"Dataset file {dataset_path} contains no trajectories.")

        self.logger.debug(
            "Loaded %d trajectories from %s.", len(trajectories), dataset_path
        )
        return OfflineDataset.from_trajectories(trajectories, header.horizon)

    def validate(self, dataset_path: Path | str) -> bool:
        """Run all validation rules.

        Validation errors are logged, but not raised as exceptions.

        Parameters
        ----------
        dataset_path : Path | str
            The path to the dataset file to validate.

        Returns
        -------
        bool
            True if all validation rules pass, False otherwise.
        """
        try:
            self.load(dataset_path)
        except ValueError as error:
            self.logger.error("%s", error)
            return False
        return True
