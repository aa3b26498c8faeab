import pytest

from splatfuse.config import TrainConfig, load_config
from splatfuse.errors import ConfigError


def test_defaults_validate():
    c = TrainConfig()
    assert c.hash_levels == 8 and c.hash_table_size == 2**15 and c.lambda_ssim == 0.2


def test_toml_roundtrip(tmp_path):
    c = TrainConfig(seed=3, decoder_hidden=[32, 16], refiner="oracle", densify=True)
    (tmp_path / "c.toml").write_text(c.to_toml())
    back = load_config(tmp_path / "c.toml")
    assert back == c and back.digest() == c.digest()


def test_overrides_win(tmp_path):
    (tmp_path / "c.toml").write_text("seed = 1\nlambda_ssim = 0.5\n")
    c = load_config(tmp_path / "c.toml", ["seed=4", "background=[1.0, 1.0, 1.0]"])
    assert c.seed == 4 and c.lambda_ssim == 0.5 and c.background == [1.0, 1.0, 1.0]


@pytest.mark.parametrize("text", ["nope = 1\n", "seed = 'x'\n", "lambda_ssim = 2.0\n",
                                  "[section]\nseed = 1\n", "seed = \n"])
def test_bad_configs(tmp_path, text):
    (tmp_path / "c.toml").write_text(text)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.toml")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.toml")


def test_digest_tracks_changes():
    assert TrainConfig().digest() != TrainConfig(seed=1).digest()
