"""Run-config parsing: strict keys, env seed override, round trip."""

import pytest

from krast.config import (RunConfig, config_from_dict, desk_preset,
                          load_config, paper_shape_preset)
from krast.errors import ConfigError


def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.strategy == "segkpt-shd"
    assert cfg.frames == 32
    assert cfg.focal.tau_init == 0.01
    assert cfg.focal.alpha == 0.25 and cfg.focal.gamma == 2.0
    assert cfg.train.lr == 1e-3
    assert cfg.text_encoder.context_len == 77


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigError) as e:
        config_from_dict({"strategy": "cpt", "optimizer": "sgd"})
    assert "optimizer" in str(e.value)


def test_unknown_nested_key_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"focal": {"alpha": 0.5, "beta": 1.0}})


def test_bad_strategy_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"strategy": "prompt-free"})


def test_invalid_json_file_rejected(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_round_trip_through_json(tmp_path):
    cfg = desk_preset()
    path = tmp_path / "cfg.json"
    cfg.save(str(path))
    back = load_config(str(path))
    assert back.to_json() == cfg.to_json()


def test_env_seed_override(tmp_path, monkeypatch):
    cfg = RunConfig(seed=1)
    path = tmp_path / "cfg.json"
    cfg.save(str(path))
    monkeypatch.setenv("KRAST_SEED", "99")
    assert load_config(str(path)).seed == 99
    monkeypatch.setenv("KRAST_SEED", "not-a-number")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_presets_shapes():
    desk = desk_preset()
    assert desk.vision_encoder.n_layers == 4
    assert desk.frames == 8
    paper = paper_shape_preset()
    assert paper.vision_encoder.n_layers == 12
    assert paper.vision_encoder.patch_size == 32
    assert paper.frames == 32
    assert paper.video_prompts.n_layers == 12
