import numpy as np
import pytest

from app.core import tensor as tn
from app.core.errors import ConfigError, DimensionError
from app.core.vgt import (HyperFusion, MaskedSelfAttention, VgtConfig, VideoGenerationTransformer, causal_mask,
                          count_trainable, fuse_hyper, fuse_pure, mmsa, vgt_forward)


def small_cfg(**overrides) -> VgtConfig:
    values = dict(variant="pure", spatial_layers=1, temporal_layers=1, heads=2, width=8, patch_size=4,
                  latent_channels=4, frames=3, latent_h=8, latent_w=8)
    values.update(overrides)
    return VgtConfig(**values)


def test_causal_mask():
    assert causal_mask(3).tolist() == [[True, False, False], [True, True, False], [True, True, True]]


def test_invalid_config():
    with pytest.raises(ConfigError):
        small_cfg(variant="bogus")
    with pytest.raises(ConfigError):
        small_cfg(width=9, heads=2)
    with pytest.raises(ConfigError):
        small_cfg(hyper_temporal_kernel=2)
    with pytest.raises(DimensionError):
        small_cfg(patch_size=3)


def test_single_token_attention(float64, rng):
    layer = MaskedSelfAttention(4, 1, rng)
    seq = tn.tensor(rng.standard_normal((1, 1, 4)))
    qkv = layer.norm(seq).data @ layer.qkv.weight.data + layer.qkv.bias.data
    v = qkv[..., 8:12]
    expected = v @ layer.out.weight.data + layer.out.bias.data + seq.data
    assert np.allclose(mmsa(layer, seq, causal_mask(1)).data, expected)


def test_non_square_mask(rng):
    layer = MaskedSelfAttention(4, 1, rng)
    with pytest.raises(DimensionError):
        layer(tn.tensor(np.zeros((1, 2, 4))), np.ones((2, 3), dtype=bool))
    with pytest.raises(DimensionError):
        layer(tn.tensor(np.zeros((1, 2, 4))), np.ones((3, 3), dtype=bool))


@pytest.mark.parametrize("variant", ["pure", "hyper"])
def test_zero_initialized_head(variant, rng):
    vgt = VideoGenerationTransformer(small_cfg(variant=variant))
    z = rng.standard_normal((1, 3, 4, 8, 8))
    out = vgt_forward(vgt, z, 5)
    assert out.shape == z.shape
    assert np.all(out.data == 0.0)
    assert vgt.calls == 1


def test_randomized_head_depends_on_step(float64, rng):
    vgt = VideoGenerationTransformer(small_cfg())
    vgt.head_out.weight.data = rng.standard_normal(vgt.head_out.weight.shape)
    z = rng.standard_normal((1, 3, 4, 8, 8))
    assert not np.allclose(vgt(z, 2).data, vgt(z, 7).data)


def test_frame_count_mismatch(rng):
    with pytest.raises(DimensionError):
        VideoGenerationTransformer(small_cfg())(rng.standard_normal((1, 2, 4, 8, 8)), 1)


@pytest.mark.parametrize("masked", [True, False])
def test_spatial_cls_ignores_patches_only_when_masked(float64, rng, masked):
    vgt = VideoGenerationTransformer(small_cfg(masked=masked, patch_size=8))
    z = rng.standard_normal((1, 3, 4, 8, 8))
    cls_a, _ = vgt.spatial_decode(z, 4)
    cls_b, _ = vgt.spatial_decode(z + rng.standard_normal(z.shape), 4)
    assert np.allclose(cls_a.data, cls_b.data, atol=1e-12) == masked


def test_temporal_causality(float64, rng):
    vgt = VideoGenerationTransformer(small_cfg(frames=4))
    cls = rng.standard_normal((1, 4, 8))
    perturbed = cls.copy()
    perturbed[0, 2] += 1.0
    _, a = vgt.temporal_decode(tn.tensor(cls))
    _, b = vgt.temporal_decode(tn.tensor(perturbed))
    assert np.allclose(a.data[0, :2], b.data[0, :2], atol=1e-12)
    assert not np.allclose(a.data[0, 2:], b.data[0, 2:])


def test_temporal_without_mask_sees_future(float64, rng):
    vgt = VideoGenerationTransformer(small_cfg(frames=4, masked=False))
    cls = rng.standard_normal((1, 4, 8))
    perturbed = cls.copy()
    perturbed[0, 3] += 1.0
    _, a = vgt.temporal_decode(tn.tensor(cls))
    _, b = vgt.temporal_decode(tn.tensor(perturbed))
    assert not np.allclose(a.data[0, 0], b.data[0, 0])


def test_single_frame_temporal_sequence(float64, rng):
    vgt = VideoGenerationTransformer(small_cfg(frames=1))
    cls_a, frames_a = vgt.temporal_decode(tn.tensor(rng.standard_normal((1, 1, 8))))
    cls_b, _ = vgt.temporal_decode(tn.tensor(rng.standard_normal((1, 1, 8))))
    assert frames_a.shape == (1, 1, 8)
    assert np.allclose(cls_a.data, cls_b.data, atol=1e-12)


def test_fuse_pure(rng):
    patches = tn.tensor(rng.standard_normal((1, 2, 4, 8)))
    assert np.array_equal(fuse_pure(patches, tn.tensor(np.ones((1, 2, 8)))).data, patches.data)
    zeros = tn.tensor(np.zeros((1, 2, 4, 8)))
    assert np.all(fuse_pure(zeros, tn.tensor(rng.standard_normal((1, 2, 8)))).data == 0.0)
    with pytest.raises(DimensionError):
        fuse_pure(patches, tn.tensor(np.ones((1, 3, 8))))


def test_fuse_hyper_identity_pass_through(float64, rng):
    cfg = small_cfg(variant="hyper", patch_size=8, hyper_temporal_kernel=1)
    fusion = HyperFusion(cfg, rng)
    eye = np.eye(8).reshape(8, 8, 1, 1, 1)
    for conv in (fusion.spatial, fusion.temporal):
        conv.weight.data = eye.copy()
        conv.bias.data = np.zeros(8)
    temporal_out = rng.standard_normal((2, 4, 8))
    out = fuse_hyper(fusion, tn.tensor(temporal_out))
    assert out.shape == (2, 3, 1, 8)
    assert np.allclose(out.data[:, :, 0, :], temporal_out[:, 1:, :])


def test_fuse_hyper_grid_shape(rng):
    fusion = HyperFusion(small_cfg(variant="hyper"), rng)
    assert fuse_hyper(fusion, tn.tensor(rng.standard_normal((1, 4, 8)))).shape == (1, 3, 4, 8)


def test_parameter_counts():
    pure, pure_en = small_cfg(masked=True), small_cfg(masked=False)
    assert count_trainable(pure) == count_trainable(pure_en)
    assert count_trainable(small_cfg(variant="hyper")) > count_trainable(pure)


def test_parameter_count_by_hand():
    cfg = small_cfg()
    d, f, n = cfg.width, cfg.frames, cfg.grid.num_patches
    tok = cfg.grid.token_dim
    block = 8 * d * d + 11 * d
    spatial = tok * d + d + f * d + (n + 1) * d + block
    temporal = d + d * d + d + 2 * d + (f + 1) * d + block
    head = d * d + d + d * tok + tok
    assert count_trainable(cfg) == spatial + temporal + head

    hyper = small_cfg(variant="hyper")
    fusion = d * d * cfg.grid.h_patch * cfg.grid.w_patch + d + d * d * hyper.hyper_temporal_kernel + d
    assert count_trainable(hyper) == spatial + temporal + head + fusion


def test_spatial_raster_causality(float64, rng):
    vgt = VideoGenerationTransformer(small_cfg())
    z = rng.standard_normal((1, 3, 4, 8, 8))
    perturbed = z.copy()
    perturbed[:, :, :, 4:8, 0:4] += 1.0  # raster patch 2 of the 2 x 2 grid
    cls_a, patches_a = vgt.spatial_decode(z, 3)
    cls_b, patches_b = vgt.spatial_decode(perturbed, 3)
    assert np.allclose(cls_a.data, cls_b.data, atol=1e-12)
    assert np.allclose(patches_a.data[:, :, :2], patches_b.data[:, :, :2], atol=1e-12)
    assert not np.allclose(patches_a.data[:, :, 2], patches_b.data[:, :, 2])
