import numpy as np
import pytest

from app.core.errors import DimensionError
from app.core.latent_codec import LatentCodec, PatchGrid, patchify, unpatchify


def test_identity_codec_is_pass_through(rng):
    x = rng.random((1, 3, 1, 8, 8))
    codec = LatentCodec(channels=1, reduction=1, identity=True)
    assert np.allclose(codec.encode(x), x)
    assert np.allclose(codec.decode(np.zeros((1, 3, 1, 8, 8))), 0.0)


def test_encode_shape_arithmetic(rng):
    codec = LatentCodec(channels=1, reduction=2)
    z = codec.encode(rng.random((1, 4, 1, 16, 16)))
    assert z.shape == (1, 4, 4, 8, 8)


def test_encode_rejects_indivisible_extents():
    with pytest.raises(DimensionError):
        LatentCodec(channels=1, reduction=2).encode(np.zeros((1, 2, 1, 15, 16)))
    with pytest.raises(DimensionError):
        LatentCodec(channels=1, reduction=2).encode(np.zeros((1, 2, 3, 16, 16)))


def test_decode_clamps_to_unit_range():
    codec = LatentCodec(channels=1, reduction=1, identity=True)
    out = codec.decode(np.full((1, 1, 1, 2, 2), 1.2))
    assert np.all(out == 1.0)
    assert np.allclose(codec.decode(np.full((1, 1, 1, 2, 2), 1.2), clamp=False), 1.2)


def test_decode_rejects_wrong_latent_channels():
    with pytest.raises(DimensionError):
        LatentCodec(channels=1, reduction=2).decode(np.zeros((1, 2, 3, 4, 4)))


def test_codec_round_trip_and_linearity(float64, rng):
    codec = LatentCodec(channels=1, reduction=2, seed=3)
    x = rng.random((2, 3, 1, 8, 8))
    z = codec.encode(x)
    assert np.abs(codec.decode(z) - x).max() < 1e-10
    assert np.allclose(codec.encode(0.5 * x), 0.5 * z)
    # B and F axes are untouched: encoding one frame alone gives the same latent.
    assert np.allclose(codec.encode(x[1:2, 2:3]), z[1:2, 2:3])


def test_codec_is_deterministic_per_seed():
    assert np.array_equal(LatentCodec(seed=7).matrix, LatentCodec(seed=7).matrix)
    assert not np.array_equal(LatentCodec(seed=7).matrix, LatentCodec(seed=8).matrix)


def test_patch_counts():
    assert PatchGrid.for_latent(4, 8, 8, 4).num_patches == 4
    full = PatchGrid.for_latent(4, 8, 8, 8)
    assert full.num_patches == 1
    assert patchify(np.zeros((1, 2, 4, 8, 8)), full).shape == (1, 2, 1, 4 * 8 * 8)


def test_patchify_single_patch_contains_whole_frame(rng):
    z = rng.standard_normal((1, 1, 1, 4, 4))
    tokens = patchify(z, PatchGrid.for_latent(1, 4, 4, 4)).data
    assert np.allclose(tokens.reshape(4, 4), z[0, 0, 0])


def test_patchify_raster_order():
    z = np.zeros((1, 1, 1, 4, 4))
    z[0, 0, 0, 0, 2] = 1.0  # top-right patch of a 2 x 2 grid
    tokens = patchify(z, PatchGrid.for_latent(1, 4, 4, 2)).data
    assert tokens[0, 0, 1].sum() == 1.0
    assert tokens[0, 0, [0, 2, 3]].sum() == 0.0


def test_patchify_bijection(float64, rng):
    grid = PatchGrid.for_latent(4, 8, 8, 4)
    z = rng.standard_normal((2, 3, 4, 8, 8))
    tokens = patchify(z, grid)
    assert np.array_equal(unpatchify(tokens, grid).data, z)
    assert np.array_equal(patchify(unpatchify(tokens, grid), grid).data, tokens.data)


def test_inconsistent_grid():
    with pytest.raises(DimensionError):
        PatchGrid.for_latent(4, 8, 8, 3)
    with pytest.raises(DimensionError):
        patchify(np.zeros((1, 2, 4, 8, 8)), PatchGrid.for_latent(4, 4, 4, 2))
    with pytest.raises(DimensionError):
        unpatchify(np.zeros((1, 2, 3, 64)), PatchGrid.for_latent(4, 8, 8, 4))
