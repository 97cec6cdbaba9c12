import pytest

from tlsej.config import RunConfig, dump_config, load_config, schema
from tlsej.errors import ConfigError


def test_defaults_roundtrip(tmp_path):
    cfg = load_config()
    dump_config(cfg, tmp_path / "a.yaml")
    again = load_config(tmp_path / "a.yaml")
    assert again == cfg
    assert dump_config(again) == (tmp_path / "a.yaml").read_text()


def test_edited_tree_roundtrip(tmp_path):
    text = """
seed: 7
paths: {train_manifest: fx/train.tsv}
train:
  backend: lcnn
  use_frontend: true
  frontend_frozen: true
  frontend: {encoder_channels: [4, 8]}
  augmentation: {mode: mixed, snr_range_db: [0, 10]}
"""
    cfg = load_config(text)
    assert cfg.seed == 7 and cfg.train.backend == "lcnn" and cfg.train.frontend.encoder_channels == [4, 8]
    assert cfg.train.augmentation.snr_range_db == (0, 10)
    assert load_config(dump_config(cfg)) == cfg


@pytest.mark.parametrize("text", [
    "bogus: 1\n",
    "train:\n  lr_typo: 0.1\n",
    "train:\n  lr: fast\n",
    "train:\n  frontend_frozen: true\n",
    "train:\n  backend: aasist\n",
    "seed: [1\n",
])
def test_invalid_trees_rejected(text):
    with pytest.raises(ConfigError):
        load_config(text)


def test_schema_covers_every_section():
    s = schema()
    assert set(s) == {"seed", "paths", "fixture", "train"}
    for key in ("conformer", "lcnn", "resnet18", "frontend", "augmentation", "features"):
        assert isinstance(s["train"][key], dict)
    assert s["train"]["features"]["stft"]["window_ms"] == "float"
    assert RunConfig().train.lr == 1e-3
