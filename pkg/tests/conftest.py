import numpy as np
import pytest

from app.core import config
from app.core import tensor as tn
from app.utils.synthetic_generator.scene_generator import SceneSpec, gen_video


@pytest.fixture
def float64():
    with tn.precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_small_config(**overrides) -> config.TrainConfig:
    values = dict(steps=3, F=4, H=16, W=16, T=10, vgt_width=16, vgt_heads=2, vgt_layers_spatial=1,
                  vgt_layers_temporal=1, patch_size=4, unet_channels=4, seed=0)
    values.update(overrides)
    return config.TrainConfig(**values)


@pytest.fixture
def small_cfg():
    return make_small_config()


@pytest.fixture
def small_video(small_cfg):
    return gen_video(SceneSpec(kind="moving_square", F=small_cfg.F, H=small_cfg.H, W=small_cfg.W, size=6))
