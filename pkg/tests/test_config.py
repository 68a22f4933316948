import configparser

import pytest

from tsaliency.config import (
    ConfigError,
    DEFAULTS,
    default_config,
    load_config,
    render_default_config,
)


def write(tmp_path, text):
    p = tmp_path / "c.cfg"
    p.write_text(text)
    return p


def test_empty_config_gives_defaults(tmp_path):
    cfg = load_config(write(tmp_path, ""))
    assert cfg["train"]["lr"] == 1e-4
    assert cfg["train"]["weight_decay"] == 1e-3
    assert cfg["train"]["lambda1"] == 1e-3 and cfg["train"]["lambda2"] == 1e-3
    assert cfg["data"]["fractions"] == (0.6, 0.2, 0.2)
    assert cfg["interpret"]["steps"] == 500
    assert cfg["reference"]["sigma1"] == 0.5
    assert cfg["reference"]["sigma2"] == 2.0


def test_values_parse_with_types(tmp_path):
    cfg = load_config(write(tmp_path, """
[train]
lr = 0.01
mask_enabled = false
[data]
fractions = 0.7,0.2,0.1
timestamp_col = 0
"""))
    assert cfg["train"]["lr"] == 0.01
    assert cfg["train"]["mask_enabled"] is False
    assert cfg["data"]["fractions"] == (0.7, 0.2, 0.1)
    assert cfg["data"]["timestamp_col"] == 0


def test_unknown_keys_listed(tmp_path):
    p = write(tmp_path, "[train]\nlr = 0.1\nturbo = yes\n[wat]\nx = 1\n")
    with pytest.raises(ConfigError) as err:
        load_config(p)
    assert "train.turbo" in str(err.value)
    assert "[wat]" in str(err.value)


def test_bad_value_names_key(tmp_path):
    with pytest.raises(ConfigError, match="train.lr"):
        load_config(write(tmp_path, "[train]\nlr = fast\n"))
    with pytest.raises(ConfigError, match="model.variant"):
        load_config(write(tmp_path, "[model]\nvariant = lstm\n"))


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.cfg")


def test_override_seed_touches_every_stage():
    cfg = default_config()
    cfg.override_seed(99)
    assert cfg["train"]["seed"] == 99
    assert cfg["reference"]["seed"] == 99
    assert cfg["interpret"]["seed"] == 99
    assert cfg["permute"]["seed"] == 99


def test_rendered_defaults_parse_back(tmp_path):
    text = render_default_config()
    p = write(tmp_path, text)
    cfg = load_config(p)
    assert cfg.echo() == default_config().echo()


def test_every_key_documented():
    parser = configparser.ConfigParser()
    parser.read_string(render_default_config())
    for section, keys in DEFAULTS.items():
        assert parser.has_section(section)
        for key in keys:
            assert parser.has_option(section, key), f"{section}.{key}"


def test_derived_configs_build():
    cfg = default_config()
    assert cfg.train_config().lr == 1e-4
    assert cfg.model_config().variant == "mlp"
    assert cfg.reference_spec().mode == "noise"
    icfg = cfg.interpret_config()
    assert icfg.steps == 500 and icfg.reference.mode == "blur"
