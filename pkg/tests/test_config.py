import pytest

from app.core import config
from app.core.errors import ConfigError
from tests.conftest import make_small_config


def test_defaults_are_desk_scale():
    cfg = config.TrainConfig()
    assert (cfg.F, cfg.H, cfg.W, cfg.T, cfg.steps) == (8, 32, 32, 50, 750)
    assert cfg.latent_channels == 4 and cfg.latent_hw == (16, 16)


def test_text_round_trip():
    cfg = make_small_config(lr=3e-5, variant="hyper", masked=False, guidance_w=2.5)
    assert config.parse_config_text(config.config_to_text(cfg)) == cfg


def test_parse_comments_and_base():
    base = make_small_config()
    cfg = config.parse_config_text("# run\nsteps = 7  # short\n\ndisable_gan = yes\n", base)
    assert cfg.steps == 7 and cfg.disable_gan and cfg.F == base.F


@pytest.mark.parametrize("text", ["nonsense = 1", "steps 5", "steps = five", "masked = maybe",
                                  "variant = diagonal", "steps = -1", "patch_size = 3", "prompt_id = 0"])
def test_malformed_config(text):
    with pytest.raises(ConfigError):
        config.parse_config_text(text)


def test_overrides_are_validated():
    with pytest.raises(ConfigError):
        make_small_config().with_overrides(alpha=-1.0)


def test_config_hash_tracks_content(tmp_path):
    cfg = make_small_config()
    assert config.config_hash(cfg) == config.config_hash(make_small_config())
    assert config.config_hash(cfg) != config.config_hash(cfg.with_overrides(seed=1))
    assert len(config.config_hash(cfg)) == 64
    path = config.save_config(cfg, tmp_path / "nested" / "config.txt")
    assert config.load_config(path) == cfg


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        config.load_config(tmp_path / "absent.txt")
