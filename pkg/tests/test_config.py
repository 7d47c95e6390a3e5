"""Tests for experiment configuration loading and validation."""

import json

import pytest

from hamflow.config import ExperimentKind, config_schema, load_config, parse_config
from hamflow.errors import ConfigError


def test_single_experiment_is_wrapped() -> None:
    """Test a bare experiment object becomes a batch of one with defaults."""
    batch = parse_config({"name": "flat", "experiment": "curvature"})
    assert len(batch.experiments) == 1, "single object wrapped in a batch"
    experiment = batch.experiments[0]
    assert experiment.experiment is ExperimentKind.CURVATURE, "enum parsed"
    assert experiment.hamiltonian.name == "euclidean", "default Hamiltonian"
    assert experiment.grid.shape == [128], "default grid"


def test_unknown_keys_are_rejected() -> None:
    """Test strict models refuse unknown keys at any depth."""
    with pytest.raises(ConfigError) as excinfo:
        parse_config({"name": "x", "experiment": "heat", "grid": {"cells": 64}, "colour": "red"})
    messages = excinfo.value.messages
    assert any("experiments.0.grid.cells" in m for m in messages), f"nested key not reported: {messages}"
    assert any("experiments.0.colour" in m for m in messages), f"top-level key not reported: {messages}"


def test_every_error_is_collected() -> None:
    """Test the error message lists one line per problem."""
    raw = {
        "experiments": [
            {"name": "a", "experiment": "heat", "grid": {"shape": [4]}},
            {"name": "b", "experiment": "no-such-kind"},
            {"name": "c", "experiment": "curvature", "hamiltonian": {"name": "klein-bottle"}},
        ]
    }
    with pytest.raises(ConfigError) as excinfo:
        parse_config(raw)
    lines = [line for line in str(excinfo.value).splitlines() if line.startswith("  - ")]
    assert len(lines) >= 3, f"Expected one line per problem, got {lines}"
    assert "available" in str(excinfo.value), "unknown builtin lists the registry"


def test_duplicate_names() -> None:
    """Test experiment names must be unique within a batch."""
    raw = {"experiments": [{"name": "a", "experiment": "heat"}, {"name": "a", "experiment": "mms"}]}
    with pytest.raises(ConfigError, match="duplicate experiment names: a"):
        parse_config(raw)


@pytest.mark.parametrize("name", ["", "../escape", ".hidden"])
def test_names_must_be_plain_directories(name: str) -> None:
    """Test experiment names cannot leave the output directory."""
    with pytest.raises(ConfigError, match="plain directory name"):
        parse_config({"name": name, "experiment": "heat"})


def test_trajectory_lengths_must_match() -> None:
    """Test x and alpha of different lengths are refused."""
    with pytest.raises(ConfigError, match="same length"):
        parse_config({"name": "a", "experiment": "curvature", "trajectory": {"x": [0.0], "alpha": [1.0, 0.0]}})


def test_transport_interval() -> None:
    """Test an empty transport window is refused."""
    with pytest.raises(ConfigError, match="upper > lower"):
        parse_config({"name": "a", "experiment": "transport", "transport": {"lower": 1.0, "upper": -1.0}})


def test_non_object_config() -> None:
    """Test a JSON array is not a config."""
    with pytest.raises(ConfigError, match="JSON object"):
        parse_config([1, 2, 3])


def test_load_config(write_config) -> None:
    """Test loading from disk, a missing file and invalid JSON."""
    path = write_config({"experiments": [{"name": "heat", "experiment": "heat"}]})
    assert load_config(path).experiments[0].name == "heat", "loaded from disk"

    with pytest.raises(ConfigError, match="file not found"):
        load_config(path.parent / "missing.json")

    broken = path.parent / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(broken)


def test_schema_lists_experiment_kinds() -> None:
    """Test the published schema is JSON and names every experiment kind."""
    schema = json.loads(config_schema())
    text = json.dumps(schema)
    for kind in ExperimentKind:
        assert kind.value in text, f"{kind.value} missing from schema"
    assert schema["title"] == "BatchConfig", "schema is for the batch file"
