"""Config loading, schema validation, and KEY=VALUE overrides."""

import json

import pytest
import yaml

from surfclr.config import apply_overrides, default_config, load_config, parse_override
from surfclr.exceptions import ConfigurationError, DataIOError, SchemaError


def test_defaults_are_self_consistent():
    cfg = default_config()
    assert cfg["seed"] == 1
    assert cfg["pretrain"]["train"]["batch_size"] == 16
    assert cfg["finetune"]["train"]["batch_size"] == 8
    assert cfg["finetune"]["train"]["learning_rate"] == pytest.approx(2e-3)
    assert cfg["finetune"]["train"]["grad_clip_norm"] == pytest.approx(1.0)
    assert cfg["pretrain"]["train"]["grad_clip_norm"] is None
    assert cfg["finetune"]["head"]["architecture"] == "fc_siam_diff"
    # loading nothing yields the defaults
    assert load_config() == cfg


def test_load_yaml_and_json_files(tmp_path):
    doc = {"seed": 9, "encoder": {"width_multiplier": 0.5}}
    y = tmp_path / "c.yaml"
    y.write_text(yaml.safe_dump(doc))
    cfg = load_config(y)
    assert cfg["seed"] == 9
    assert cfg["encoder"]["width_multiplier"] == 0.5
    assert cfg["encoder"]["projection_dim"] == 128  # default fills in
    j = tmp_path / "c.json"
    j.write_text(json.dumps(doc))
    assert load_config(j) == cfg


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(DataIOError):
        load_config(tmp_path / "absent.yaml")


def test_unparseable_yaml_is_schema_error(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("seed: [unclosed\n")
    with pytest.raises(SchemaError):
        load_config(p)
    p2 = tmp_path / "scalar.yaml"
    p2.write_text("42\n")
    with pytest.raises(SchemaError):
        load_config(p2)


def test_unknown_keys_are_all_reported(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"sede": 1, "encoder": {"widht": 2.0}}))
    with pytest.raises(ConfigurationError) as err:
        load_config(p)
    msg = str(err.value)
    assert "sede" in msg and "widht" in msg


def test_type_errors_are_reported(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"seed": "one"}))
    with pytest.raises(ConfigurationError) as err:
        load_config(p)
    assert "seed" in str(err.value)


def test_bool_is_not_an_int(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"synth": {"n": True}}))
    with pytest.raises(ConfigurationError):
        load_config(p)


def test_int_promotes_to_float(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"encoder": {"width_multiplier": 1}}))
    cfg = load_config(p)
    assert cfg["encoder"]["width_multiplier"] == 1.0
    assert isinstance(cfg["encoder"]["width_multiplier"], float)


def test_choice_fields_are_enforced(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"finetune": {"head": {"architecture": "transformer"}}}))
    with pytest.raises(ConfigurationError):
        load_config(p)


def test_parse_override_types():
    assert parse_override("seed=3") == (["seed"], 3)
    assert parse_override("encoder.width_multiplier=0.5") == (
        ["encoder", "width_multiplier"], 0.5
    )
    assert parse_override("synth.force=true") == (["synth", "force"], True)
    assert parse_override("pretrain.dataset=data/x") == (["pretrain", "dataset"], "data/x")
    assert parse_override("pretrain.train.checkpoint_every=null") == (
        ["pretrain", "train", "checkpoint_every"], None
    )
    with pytest.raises(ConfigurationError):
        parse_override("no_equals_sign")


def test_apply_overrides():
    cfg = apply_overrides(default_config(), ["seed=7", "finetune.train.epochs=3"])
    assert cfg["seed"] == 7
    assert cfg["finetune"]["train"]["epochs"] == 3
    with pytest.raises(ConfigurationError) as err:
        apply_overrides(default_config(), ["finetune.train.epoochs=3"])
    assert "epoochs" in str(err.value)


def test_overrides_compose_with_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"seed": 2}))
    cfg = load_config(p, overrides=["seed=5", "synth.n=32"])
    assert cfg["seed"] == 5
    assert cfg["synth"]["n"] == 32
