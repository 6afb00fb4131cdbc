import json
from pathlib import Path
from typing import Any, Generator, List

import pytest
import yaml
from pydantic.main import BaseModel

from flowdesc import settings
from flowdesc.exceptions import ConfigError


@pytest.fixture
def yaml_file(tmp_path: Path) -> Path:
    path = tmp_path / "desk.yaml"
    path.write_text(yaml.dump({"seed": 5, "train": {"epochs": 3, "learning-rate": 0.01}}))
    return path


@pytest.fixture
def json_file(tmp_path: Path) -> Path:
    path = tmp_path / "desk.json"
    path.write_text(json.dumps({"seed": 6, "flow": {"backend": "ground-truth"}}))
    return path


@pytest.fixture
def env_variables(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("FLOWDESC_TRAIN_EPOCHS", "7")
    monkeypatch.setenv("FLOWDESC_FLOW_BACKEND", "classical")


@pytest.fixture
def env_file(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> Generator[Path, None, None]:
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("FLOWDESC_SAMPLE_N_NEG", raising=False)
    path = tmp_path / ".env"
    path.write_text("FLOWDESC_SAMPLE_N_NEG=64\n")
    yield path
    monkeypatch.delenv("FLOWDESC_SAMPLE_N_NEG", raising=False)


def test_simple_model() -> None:
    class SimpleModel(BaseModel):
        field1 = ""

    assert settings._list_settings(SimpleModel) == [["field1"]]


def test_inner_model() -> None:
    class SimpleInnerModel(BaseModel):
        inner_field1 = ""

    class SimpleModel(BaseModel):
        inner = SimpleInnerModel()

    assert settings._list_settings(SimpleModel) == [["inner", "inner_field1"]]


def test_combined_model() -> None:
    class SimpleInnerModel(BaseModel):
        inner_field1 = ""

    class SimpleModel(BaseModel):
        inner = SimpleInnerModel()
        field1 = ""

    assert settings._list_settings(SimpleModel) == [["inner", "inner_field1"], ["field1"]]


@pytest.mark.parametrize(
    "path, value, expected", ((["field1"], 1, {"field1": 1}), (["field1", "field2"], 1, {"field1": {"field2": 1}}))
)
def test_put_by_path(path: List[str], value: Any, expected: dict) -> None:
    data: dict = {}
    settings._put_by_path(data, path, value)
    assert data == expected


@pytest.mark.parametrize(
    "data, path, default_value, expected",
    (
        ({}, ["field1"], "default", "default"),
        ({"field1": "value1"}, ["field1"], "default", "value1"),
        ({"field1": {"inner_field1": "inner_value1"}}, ["field1", "inner_field1"], "default", "inner_value1"),
        ({"field1": {"inner_field1": "inner_value1"}}, ["field2", "inner_field1"], "default", "default"),
    ),
)
def test_get_by_path(data: dict, path: List[str], default_value: Any, expected: Any) -> None:
    assert settings._get_by_path(data, path, default_value) == expected


def test_schema_parsed_without_exceptions() -> None:
    name_list = settings._list_settings(settings.Settings)
    assert ["train", "epochs"] in name_list
    assert ["synth", "motion", "gain_max"] in name_list


def test_load_from_env(env_variables: None) -> None:
    data = settings._load_env(settings._list_settings(settings.Settings))

    assert data["train"]["epochs"] == 7
    assert data["flow"]["backend"] == "classical"


def test_load_settings_yaml_only(yaml_file: Path, monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.chdir(tmp_path)
    data = settings.load_settings(yaml_file)

    assert data.seed == 5
    assert data.train.epochs == 3
    assert data.train.learning_rate == 0.01


def test_load_settings_json(json_file: Path, monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.chdir(tmp_path)
    data = settings.load_settings(json_file)

    assert data.seed == 6
    assert data.flow.backend == settings.FlowBackend.GROUND_TRUTH


def test_load_settings_missing_file(tmp_path: Path) -> None:
    with pytest.raises(ConfigError, match="not found"):
        settings.load_settings(tmp_path / "absent.json")


def test_load_settings_validation_error(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.chdir(tmp_path)
    with pytest.raises(ConfigError) as error:
        settings.load_settings(overrides={"flow.backend": "raft"})
    assert any(line.startswith("flow.backend") for line in error.value.field_errors)


def test_unknown_key_rejected(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.chdir(tmp_path)
    with pytest.raises(ConfigError):
        settings.load_settings(overrides={"train.epoch": 3})


def test_load_settings_overrides(yaml_file: Path, env_variables: None) -> None:
    data = settings.load_settings(yaml_file, overrides={"seed": "9"})

    assert data.train.epochs == 7
    assert data.flow.backend == settings.FlowBackend.CLASSICAL
    assert data.seed == 9


def test_load_settings_env_file(env_file: Path) -> None:
    data = settings.load_settings(env_file=env_file)

    assert data.sample.n_neg == 64


def test_config_hash_is_stable_and_sensitive() -> None:
    first = settings.Settings()
    assert settings.config_hash(first) == settings.config_hash(settings.Settings())
    assert settings.config_hash(first) != settings.config_hash(settings.Settings(seed=1))


@pytest.mark.parametrize("deterministic, workers, expected", ((True, 8, 1), (False, 8, 8), (False, 0, 1)))
def test_effective_workers(deterministic: bool, workers: int, expected: int) -> None:
    assert settings.Settings(deterministic=deterministic, workers=workers).effective_workers == expected
