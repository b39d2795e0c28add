import pytest
from saltext.csmt.utils import config
from saltext.csmt.utils.exceptions import ConfigError


def test_defaults():
    settings = config.load_settings(environ={})
    assert settings.scale == 12
    assert settings.tree_height == 16
    assert settings.port == 5013
    assert settings.state_dir is None
    assert settings.seed_bytes is None
    assert settings.public_dir is None


def test_resolution_order():
    environ = {"ZKP_SCALER": "8", "TREE_HEIGHT": "20", "CSMT_WORKERS": "2"}
    salt_config = {"tree_height": 24, "workers": 3}
    settings = config.load_settings({"workers": 6, "scale": None}, salt_config, environ)
    assert settings.scale == 8
    assert settings.tree_height == 24
    assert settings.workers == 6


def test_empty_environment_values_are_ignored():
    assert config.load_settings(environ={"ZKP_SCALER": ""}).scale == 12


@pytest.mark.parametrize(
    "overrides",
    [
        {"scale": 63},
        {"tree_height": 0},
        {"tree_height": 33},
        {"security_bits": 100},
        {"salt_length": 4},
        {"workers": 0},
        {"port": 70000},
        {"scale": "twelve"},
        {"colour": "blue"},
    ],
)
def test_invalid_settings(overrides):
    with pytest.raises(ConfigError):
        config.load_settings(overrides, environ={})


def test_seed_bytes():
    assert config.Settings(backend_seed="00ff").seed_bytes == b"\x00\xff"
    assert config.Settings(backend_seed="not hex").seed_bytes == b"not hex"


def test_pipeline_ports(tmp_path):
    settings = config.Settings(state_dir=str(tmp_path))
    assert settings.for_pipeline("acc").port == 5012
    assert settings.for_pipeline("lrt").port == 5014
    assert settings.public_dir == str(tmp_path / "public")
    with pytest.raises(ConfigError):
        settings.for_pipeline("anova")
