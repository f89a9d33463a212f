import pytest

from atls.config import ConfigError, ExperimentConfig, load_config, parse_config, valid_keys
from atls.device import DeviceKind


def test_defaults_validate_and_build():
    cfg = ExperimentConfig().validate()
    assert cfg["run.epochs"] == 30 and cfg["trainer.kind"] == "cttv2"
    assert cfg.device_spec().kind is DeviceKind.SOFT_BOUNDS
    assert cfg.sweep_key is None


def test_parse_sections_and_literals():
    cfg = parse_config("""
[model]
hidden = [8, 4]   # two layers
[device]
kind = ideal_linear
dw_min_c2c = 0.2
[trainer]
kind = ttv2
[run]
epochs = 3
[sweep]
analog.tau = [0, 0.05, 0.1]
""")
    assert cfg["model.hidden"] == [8, 4]
    assert cfg.device_spec().kind is DeviceKind.IDEAL_LINEAR
    assert cfg.device_spec().dw_min_c2c == 0.2
    assert cfg.trainer_kind == "ttv2" and cfg["run.epochs"] == 3
    assert cfg.sweep_key == "analog.tau" and cfg.sweep_values == [0, 0.05, 0.1]
    point = cfg.with_value("analog.tau", 0.1)
    assert point.analog_setup().tau == 0.1 and cfg.analog_setup().tau == 0


@pytest.mark.parametrize("text, match", [
    ("[run]\nepochs = 0\n", "epochs"),
    ("[run]\nrepeats = 0\n", "repeats"),
    ("[trainer]\nkind = adam\n", "trainer.kind"),
    ("[run]\nmodes = ['analog_tl', 'bogus']\n", "bogus"),
    ("[device]\nsps_percent = 120\n", "sps_percent"),
    ("[nope]\nx = 1\n", "unknown section"),
    ("[sweep]\n", "exactly one"),
    ("[sweep]\nanalog.tau = [0]\ndevice.spv_percent = [1]\n", "exactly one"),
    ("[sweep]\nanalog.tau = []\n", "non-empty"),
    ("[sweep]\nanalog.tau = 0.1\n", "non-empty"),
    ("not an ini file", "parse"),
])
def test_invalid_configs(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_unknown_key_lists_valid_keys():
    with pytest.raises(ConfigError) as info:
        parse_config("[sweep]\ndevice.colour = [1, 2]\n")
    msg = str(info.value)
    assert "device.colour" in msg
    assert all(k in msg for k in valid_keys())


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.ini")


def test_csv_dataset_errors_become_config_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("0,1\n1,x\n")
    cfg = parse_config(f"[task]\ntrain_csv = '{bad}'\n")
    with pytest.raises(ConfigError, match="line 2"):
        cfg.datasets("finetune")


def test_attention_model_needs_divisible_width():
    cfg = parse_config("[model]\nkind = attention\npatch_dim = 5\n")
    with pytest.raises(ConfigError, match="patch_dim"):
        cfg.build_model(32, 2, 0)
    model = cfg.with_value("model.patch_dim", 8).build_model(32, 2, 0)
    assert model.input_dim == 32 and model.class_count == 2
