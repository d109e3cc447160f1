"""Resolution of run configurations from defaults, TOML files, environment and flags.

The layering is done by pydantic-settings. Sources are merged from lowest to highest
precedence: model defaults, the config file, ``CWBC_``-prefixed environment variables
and explicit command-line flags. A config file is TOML with the sections ``[train]``,
``[weighting]``, ``[conservatism]``, ``[optimizer]`` and ``[eval]``. Besides
``CWBC_SEED``, a whole section can be given as a JSON object, for example
``CWBC_WEIGHTING='{"lambda": 0.1}'``.
"""

import logging
import tomllib
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from .evaluator import EvalConfig, parse_target
from .trainer import TrainConfig

__all__ = [
    "CONFIG_SECTIONS",
    "ConfigFileSource",
    "ResolvedConfig",
    "RunSettings",
    "load_config_file",
    "resolve_config",
]

logger = logging.getLogger(__name__)

CONFIG_SECTIONS = frozenset({"train", "weighting", "conservatism", "optimizer", "eval"})


def load_config_file(path: Path | str) -> dict[str, dict[str, Any]]:
    """Read a TOML config file and check its sections."""
    if isinstance(path, str):
        path = Path(path)

    try:
        with path.open("rb") as file_handle:
            data = tomllib.load(file_handle)
    except OSError as exc:
        raise ValueError(f"Cannot read config file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ValueError(f"Invalid TOML in config file {path}: {exc}") from exc

    unknown = set(data) - CONFIG_SECTIONS
    if unknown:
        raise ValueError(
            f"Unknown config sections {sorted(unknown)} in {path}; expected a subset "
            f"of {sorted(CONFIG_SECTIONS)}."
        )
    for section, values in data.items():
        if not isinstance(values, dict):
            raise ValueError(f"Config entry '{section}' in {path} must be a section.")
    return data


class ConfigFileSource(TomlConfigSettingsSource):
    """TOML settings source that insists on a readable file with known sections."""

    def __init__(
        self, settings_cls: type[BaseSettings], toml_file: Path | None = None
    ) -> None:
        if toml_file is not None and not toml_file.is_file():
            raise ValueError(f"Cannot read config file {toml_file}: not a file.")
        super().__init__(settings_cls, toml_file=toml_file)

    def _read_file(self, file_path: Path) -> dict[str, Any]:
        return load_config_file(file_path)


class RunSettings(BaseSettings):
    """Raw configuration sections before they are validated by their models.

    Attributes
    ----------
    seed : int, optional
        Master seed; when set it replaces the training and evaluation seeds.
    train, weighting, conservatism, optimizer, eval : dict
        Values of the corresponding config file sections.
    """

    seed: int | None = None
    train: dict[str, Any] = {}
    weighting: dict[str, Any] = {}
    conservatism: dict[str, Any] = {}
    optimizer: dict[str, Any] = {}
    eval: dict[str, Any] = {}

    model_config = SettingsConfigDict(env_prefix="CWBC_", extra="forbid")

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        """Flags first, then the environment, then the config file."""
        toml_file = settings_cls.model_config.get("toml_file")
        return (
            init_settings,
            env_settings,
            ConfigFileSource(settings_cls, Path(toml_file) if toml_file else None),
        )


def _settings_class(path: Path | None) -> type[RunSettings]:
    if path is None:
        return RunSettings

    class FileRunSettings(RunSettings):
        model_config = SettingsConfigDict(toml_file=path)

    return FileRunSettings


def _flag_sections(overrides: Mapping[str, object]) -> dict[str, Any]:
    """Nest ``section.name`` flag values into sections, dropping unset flags."""
    nested: dict[str, Any] = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "seed":
            nested["seed"] = value
            continue
        section, _, name = key.partition(".")
        if section not in CONFIG_SECTIONS or not name:
            raise ValueError(f"Invalid override key '{key}'.")
        nested.setdefault(section, {})[name] = value
    return nested


@dataclass(frozen=True, slots=True)
class ResolvedConfig:
    """Training and evaluation configuration after all sources are merged."""

    train: TrainConfig
    eval: EvalConfig

    def dump(self) -> dict[str, Any]:
        """JSON-compatible form, as echoed into run manifests."""
        return {
            "train": self.train.model_dump(mode="json", by_alias=True),
            "eval": self.eval.model_dump(mode="json"),
        }


def resolve_config(
    path: Path | str | None = None,
    overrides: Mapping[str, object] | None = None,
) -> ResolvedConfig:
    """Merge defaults, a config file, the environment and flag overrides.

    Parameters
    ----------
    path : Path or str, optional
        TOML config file.
    overrides : Mapping[str, object], optional
        Flag values keyed ``section.name`` (for example ``weighting.lambda``), plus
        the plain key ``seed``, which sets the training and evaluation seeds. Entries
        that are ``None`` were not given and are ignored.

    Raises
    ------
    ValueError
        If a source is unreadable or the merged values fail validation.

    Examples
    --------
    >>> resolved = cwbc.resolve_config(overrides={"train.iterations": 5, "seed": 3})
    >>> resolved.train.iterations, resolved.train.seed, resolved.eval.seed
    (5, 3, 3)
    """
    if isinstance(path, str):
        path = Path(path)
    settings = _settings_class(path)(**_flag_sections(overrides or {}))

    train = dict(settings.train)
    evaluation = dict(settings.eval)
    if settings.seed is not None:
        train["seed"] = evaluation["seed"] = settings.seed
    if isinstance(evaluation.get("target"), str):
        evaluation["target"] = parse_target(evaluation["target"])

    resolved = ResolvedConfig(
        train=TrainConfig.model_validate(
            {
                **train,
                "weighting": settings.weighting,
                "conservatism": settings.conservatism,
                "optimizer": settings.optimizer,
            }
        ),
        eval=EvalConfig.model_validate(evaluation),
    )
    logger.debug("Resolved configuration: %s", resolved.dump())
    return resolved
