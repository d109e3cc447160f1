"""Tests for merging configuration sources."""

from pathlib import Path

import pytest

from cwbc.config import RunSettings, load_config_file, resolve_config
from cwbc.evaluator import TargetSpec
from cwbc.trainer import Variant


@pytest.fixture
def config_file(tmp_path: Path) -> Path:
    """A config file touching every section."""
    path = tmp_path / "run.toml"
    path.write_text(
        "[train]\n"
        'variant = "w"\n'
        "iterations = 50\n"
        "seed = 4\n"
        "[weighting]\n"
        "num_bins = 7\n"
        "lambda = 0.5\n"
        "[conservatism]\n"
        "alpha = 0.25\n"
        "[optimizer]\n"
        "learning_rate = 0.01\n"
        "[eval]\n"
        'target = "max:1.5"\n'
        "episodes = 3\n",
        encoding="utf-8",
    )
    return path


@pytest.fixture(autouse=True)
def no_seed_variable(monkeypatch: pytest.MonkeyPatch) -> None:
    """Keep the environment seed out of tests unless they set it."""
    monkeypatch.delenv("CWBC_SEED", raising=False)


def test_defaults_without_sources() -> None:
    """Without any source the model defaults apply."""
    resolved = resolve_config()

    assert resolved.train.variant is Variant.WC
    assert resolved.train.weighting.num_bins == 20
    assert resolved.eval.target == TargetSpec(basis="expert", value=1.0)


def test_file_values_are_applied(config_file: Path) -> None:
    """Every section of the file reaches its model."""
    resolved = resolve_config(config_file)

    assert resolved.train.variant is Variant.W
    assert resolved.train.iterations == 50
    assert resolved.train.weighting.num_bins == 7
    assert resolved.train.weighting.lambda_ == 0.5
    assert resolved.train.conservatism.alpha == 0.25
    assert resolved.train.optimizer.learning_rate == 0.01
    assert resolved.eval.target == TargetSpec(basis="max", value=1.5)
    assert resolved.eval.episodes == 3
    assert resolved.train.seed == resolved.eval.seed == 4


def test_flags_override_file(config_file: Path) -> None:
    """Explicit flags win over file values; unset flags are ignored."""
    resolved = resolve_config(
        config_file,
        {"weighting.lambda": 2.0, "train.iterations": None, "eval.target": "expert"},
    )

    assert resolved.train.weighting.lambda_ == 2.0
    assert resolved.train.iterations == 50
    assert resolved.eval.target.basis == "expert"


def test_seed_precedence(config_file: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    """Flags beat the environment, which beats the file."""
    monkeypatch.setenv("CWBC_SEED", "7")

    assert resolve_config(config_file).train.seed == 7
    assert resolve_config(config_file, {"seed": 9}).eval.seed == 9


def test_invalid_override_key() -> None:
    """Overrides must name a known section and field."""
    with pytest.raises(ValueError, match="Invalid override key"):
        resolve_config(overrides={"network.width": 3})


def test_invalid_values_are_reported(tmp_path: Path) -> None:
    """Values failing validation surface as errors."""
    path = tmp_path / "bad.toml"
    path.write_text("[weighting]\nnum_bins = 0\n", encoding="utf-8")

    with pytest.raises(ValueError):
        resolve_config(path)


def test_unknown_sections_are_rejected(tmp_path: Path) -> None:
    """Only the documented sections may appear."""
    path = tmp_path / "bad.toml"
    path.write_text("[network]\nwidth = 3\n", encoding="utf-8")

    with pytest.raises(ValueError, match="Unknown config sections"):
        load_config_file(path)


def test_unreadable_files_are_reported(tmp_path: Path) -> None:
    """Missing or malformed files raise a clear error."""
    broken = tmp_path / "broken.toml"
    broken.write_text("[train\n", encoding="utf-8")

    with pytest.raises(ValueError, match="Invalid TOML"):
        load_config_file(broken)
    with pytest.raises(ValueError, match="Cannot read"):
        load_config_file(tmp_path / "missing.toml")


def test_dump_uses_file_spelling(config_file: Path) -> None:
    """The dumped configuration spells the smoothing parameter ``lambda``."""
    dumped = resolve_config(config_file).dump()

    assert dumped["train"]["weighting"]["lambda"] == 0.5
    assert dumped["eval"]["target"] == {"basis": "max", "value": 1.5}


def test_environment_sections_sit_between_file_and_flags(
    config_file: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    """A section given in the environment merges over the file, under the flags."""
    monkeypatch.setenv("CWBC_WEIGHTING", '{"lambda": 0.1, "kappa_percentile": 80}')

    from_env = resolve_config(config_file)
    flagged = resolve_config(config_file, {"weighting.lambda": 3.0})

    assert from_env.train.weighting.lambda_ == 0.1
    assert from_env.train.weighting.kappa_percentile == 80
    assert from_env.train.weighting.num_bins == 7
    assert flagged.train.weighting.lambda_ == 3.0
    assert flagged.train.weighting.kappa_percentile == 80


def test_run_settings_layer_flags_over_environment(
    monkeypatch: pytest.MonkeyPatch,
) -> None:
    """Init values beat the environment in the raw settings."""
    monkeypatch.setenv("CWBC_SEED", "5")

    assert RunSettings().seed == 5
    assert RunSettings(seed=6).seed == 6
    assert RunSettings().train == {}


def test_missing_config_file_is_reported(tmp_path: Path) -> None:
    """Resolving with a missing or foreign file fails instead of using defaults."""
    bad = tmp_path / "bad.toml"
    bad.write_text("[network]\nwidth = 3\n", encoding="utf-8")

    with pytest.raises(ValueError, match="Cannot read"):
        resolve_config(tmp_path / "missing.toml")
    with pytest.raises(ValueError, match="Unknown config sections"):
        resolve_config(bad)
