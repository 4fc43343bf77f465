import json

import pytest

from deceptlens.config import ExperimentConfig, config_from_dict, load_config, save_config
from deceptlens.errors import ConfigError, ParseError


def test_sectioned_and_flat_forms_agree():
    a = config_from_dict({"model": {"architecture": "dense", "d": 16}, "train": {"optimizer": "adam", "seed": 3}})
    b = config_from_dict({"architecture": "dense", "d": 16, "optimizer": "adam", "seed": 3})
    assert a.to_dict() == b.to_dict()
    assert a.model.architecture == "dense" and a.train.optimizer == "adam"


def test_defaults():
    cfg = config_from_dict({})
    assert cfg.to_dict() == ExperimentConfig().to_dict()
    assert cfg.train.folds == 5 and cfg.train.repetitions == 5 and cfg.train.optimizer == "sgd"


def test_unknown_keys_and_bad_values_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict({"d": 8, "bogus": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"model": {"nope": 1}})
    with pytest.raises(ConfigError):
        config_from_dict([1, 2])


def test_fingerprint_tracks_content():
    a = config_from_dict({"seed": 1})
    assert a.fingerprint() == config_from_dict({"train": {"seed": 1}}).fingerprint()
    assert a.fingerprint() != config_from_dict({"seed": 2}).fingerprint()


def test_file_round_trip_and_errors(tmp_path):
    cfg = config_from_dict({"architecture": "mha", "heads": 3, "d": 12, "max_epochs": 7})
    path = tmp_path / "c.json"
    save_config(cfg, path)
    assert load_config(path).to_dict() == cfg.to_dict()
    assert json.loads(path.read_text())["train"]["max_epochs"] == 7
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text('{\n  "d": 8,\n  oops\n}')
    with pytest.raises(ParseError) as exc:
        load_config(tmp_path / "bad.json")
    assert exc.value.line == 3
