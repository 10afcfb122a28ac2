"""
Config file loading and DRIVELENS_* environment overrides
"""

import pytest

from ml.config import (DriveLensConfig, SomConfig, config_from_mapping, env_name, known_keys,
                       load_config)
from ml.errors import ConfigError


def test_defaults_without_file_or_environment():
    config = load_config(environ={})
    assert config == DriveLensConfig()
    assert config.delta_seconds == 5.0
    assert (config.som.rows, config.som.cols) == (7, 21)
    assert config.som.initial_radius == 10.5
    assert config.eval.vote_threshold == 0.6


def test_known_keys_cover_every_section():
    keys = known_keys()
    assert "delta_seconds" in keys
    assert "maneuver.jerk_floor" in keys
    assert "som.active_only" in keys
    assert "explain.corpus_path" in keys
    assert env_name("som.rows") == "DRIVELENS_SOM__ROWS"


def test_file_values_and_environment_precedence(tmp_path):
    path = tmp_path / "drivelens.env"
    path.write_text("# tuned for a short corpus\n"
                    "delta_seconds=4\n"
                    "som.rows=3\n"
                    "som.active_only=false\n"
                    "som.radius0=2.5\n"
                    "explain.corpus_path=/tmp/guidelines.txt\n")
    config = load_config(str(path), environ={"DRIVELENS_SOM__ROWS": "5", "UNRELATED": "x"})

    assert config.delta_seconds == 4.0
    assert config.som.rows == 5
    assert config.som.active_only is False
    assert config.som.initial_radius == 2.5
    assert config.explain.corpus_path == "/tmp/guidelines.txt"
    assert config.som.cols == SomConfig().cols


def test_unknown_keys_are_ignored(caplog):
    config = config_from_mapping({"som.layers": "4", "topk": "3"})
    assert config.topk == 3
    assert "som.layers" in caplog.text


@pytest.mark.parametrize("values", [{"som.rows": "seven"}, {"som.active_only": "maybe"},
                                    {"epsilon": "1,5"}])
def test_bad_values(values):
    with pytest.raises(ConfigError):
        config_from_mapping(values)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(str(tmp_path / "missing.env"), environ={})
    assert info.value.exit_code == 1
