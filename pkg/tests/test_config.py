import datetime as dt
import json

import pytest

from roadrisk.config import RunConfig, config_hash, file_sha256, write_manifest
from roadrisk.errors import ConfigError
from roadrisk.ingest import RegionSpec


def sample_config_dict(tmp_path):
    return {
        "data_csv": str(tmp_path / "data.csv"),
        "out_dir": str(tmp_path / "out"),
        "region": {
            "name": "test",
            "bbox": [-0.2, 51.4, 0.0, 51.6],
            "period": ["2011-01-03", "2013-12-29"],
        },
        "diffusion": {"preset": "Differentiated_B"},
        "model": {"d": 8, "heads": 2, "layers": 1, "t_in": 4, "t_out": 4,
                  "conv_kernel": 3, "dropout": 0.0, "spatial_attention": True},
        "train": {"epochs_main": 2, "epochs_finetune": 1, "lr_main": 0.001,
                  "lr_finetune": None, "beta1": 0.9, "beta2": 0.999,
                  "eps": 1e-8, "seed": 0, "batch": None},
        "seed": 3,
    }


def test_config_roundtrip(tmp_path):
    raw = sample_config_dict(tmp_path)
    cfg = RunConfig.from_dict(raw)
    assert cfg.region.period[0] == dt.date(2011, 1, 3)
    assert cfg.diffusion.name == "Differentiated_B"
    assert cfg.model.d == 8
    assert cfg.train.epochs_main == 2
    assert cfg.seed == 3
    path = tmp_path / "cfg.json"
    cfg.save(path)
    again = RunConfig.load(path)
    assert again.to_dict() == cfg.to_dict()
    assert again.fingerprint == cfg.fingerprint


def test_fingerprint_changes_with_content(tmp_path):
    raw = sample_config_dict(tmp_path)
    a = RunConfig.from_dict(raw).fingerprint
    raw["seed"] = 4
    b = RunConfig.from_dict(raw).fingerprint
    assert a != b
    assert len(a) == 12


def test_config_hash_is_order_insensitive():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})


def test_invalid_config_raises(tmp_path):
    raw = sample_config_dict(tmp_path)
    del raw["region"]
    with pytest.raises(ConfigError):
        RunConfig.from_dict(raw)
    raw = sample_config_dict(tmp_path)
    raw["region"]["bbox"] = [0.0, 51.6, -0.2, 51.4]  # inverted
    with pytest.raises(ConfigError):
        RunConfig.from_dict(raw)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "nope.json")


def test_region_center():
    region = RegionSpec("x", (-0.2, 51.4, 0.0, 51.6), (dt.date(2011, 1, 1), dt.date(2011, 2, 1)))
    assert region.center == (-0.1, 51.5)


def test_file_sha256(tmp_path):
    p = tmp_path / "f.txt"
    p.write_text("hello")
    assert file_sha256(p) == file_sha256(p)
    q = tmp_path / "g.txt"
    q.write_text("hellp")
    assert file_sha256(p) != file_sha256(q)


def test_manifest_written(tmp_path):
    raw = sample_config_dict(tmp_path)
    cfg = RunConfig.from_dict(raw)
    (tmp_path / "out").mkdir()
    data = tmp_path / "data.csv"
    data.write_text("a,b\n1,2\n")
    path = write_manifest(tmp_path / "out", "ingest", cfg, {"data_csv": data}, ["records.csv"], 1.23)
    manifest = json.loads(path.read_text())
    assert manifest["command"] == "ingest"
    assert manifest["config_hash"] == cfg.fingerprint
    assert manifest["outputs"] == ["records.csv"]
    assert "data_csv" in manifest["inputs"]
