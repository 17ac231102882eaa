"""
Encoder/decoder between pixel videos and the latent space, plus the
patchify/unpatchify rearrangement consumed by the video transformer.

Videos are B x F x C x H x W arrays in [0, 1]; latents are B x F x c x h x w
with h = H / r, w = W / r and c = C * r * r. The codec is a fixed, seeded
orthogonal map applied to every r x r pixel block, so decode(encode(x)) == x
up to rounding and any reconstruction error comes from diffusion.
"""
from dataclasses import dataclass

import numpy as np

from app.core import config
from app.core import tensor as tn
from app.core.errors import DimensionError
from app.core.tensor import Tensor


class LatentCodec:
    def __init__(self, channels: int = config.DEFAULT_CHANNELS, reduction: int = config.CODEC_REDUCTION,
                 seed: int = 0, identity: bool = False):
        if channels < 1 or reduction < 1:
            raise DimensionError(f"invalid codec shape: channels={channels}, reduction={reduction}")
        self.channels = channels
        self.reduction = reduction
        self.latent_channels = channels * reduction * reduction
        dim = self.latent_channels
        if identity:
            self.matrix = np.eye(dim)
        else:
            q, r = np.linalg.qr(np.random.default_rng(seed).standard_normal((dim, dim)))
            # Sign fix makes the factorization unique for a given seed.
            self.matrix = q * np.sign(np.diag(r))

    def _check_video(self, x: np.ndarray) -> None:
        if x.ndim != 5:
            raise DimensionError(f"video must be B x F x C x H x W, got shape {x.shape}")
        _, _, c, h, w = x.shape
        r = self.reduction
        if c != self.channels:
            raise DimensionError(f"codec expects {self.channels} channels, video has {c}")
        if h % r or w % r:
            raise DimensionError(f"frame {h}x{w} not divisible by reduction factor {r}")

    def encode(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        self._check_video(x)
        b, f, c, height, width = x.shape
        r = self.reduction
        h, w = height // r, width // r
        blocks = x.reshape(b, f, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4, 6).reshape(b, f, h, w, c * r * r)
        z = blocks.astype(np.float64) @ self.matrix
        return np.ascontiguousarray(z.transpose(0, 1, 4, 2, 3), dtype=tn.get_dtype())

    def decode(self, z: np.ndarray, clamp: bool = True) -> np.ndarray:
        z = np.asarray(z)
        if z.ndim != 5 or z.shape[2] != self.latent_channels:
            raise DimensionError(f"latent must be B x F x {self.latent_channels} x h x w, got shape {z.shape}")
        b, f, _, h, w = z.shape
        r, c = self.reduction, self.channels
        blocks = z.astype(np.float64).transpose(0, 1, 3, 4, 2) @ self.matrix.T
        x = blocks.reshape(b, f, h, w, c, r, r).transpose(0, 1, 4, 2, 5, 3, 6).reshape(b, f, c, h * r, w * r)
        if clamp:
            x = np.clip(x, 0.0, 1.0)
        return np.ascontiguousarray(x, dtype=tn.get_dtype())


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int
    h_patch: int
    w_patch: int
    channels: int

    @classmethod
    def for_latent(cls, channels: int, h: int, w: int, patch_size: int) -> "PatchGrid":
        if patch_size < 1 or h % patch_size or w % patch_size:
            raise DimensionError(f"latent {h}x{w} not divisible by patch size {patch_size}")
        return cls(patch_size, h // patch_size, w // patch_size, channels)

    @property
    def num_patches(self) -> int:
        return self.h_patch * self.w_patch

    @property
    def token_dim(self) -> int:
        return self.channels * self.patch_size * self.patch_size

    @property
    def latent_hw(self) -> tuple:
        return self.h_patch * self.patch_size, self.w_patch * self.patch_size


def patchify(z, grid: PatchGrid) -> Tensor:
    """B x F x c x h x w -> B x F x (H_patch * W_patch) x (c * P * P), raster order."""
    z = tn.tensor(z)
    if z.ndim != 5 or z.shape[2] != grid.channels or z.shape[3:] != grid.latent_hw:
        raise DimensionError(f"latent shape {z.shape} inconsistent with {grid}")
    b, f = z.shape[:2]
    p = grid.patch_size
    blocks = tn.reshape(z, (b, f, grid.channels, grid.h_patch, p, grid.w_patch, p))
    blocks = tn.transpose(blocks, (0, 1, 3, 5, 2, 4, 6))
    return tn.reshape(blocks, (b, f, grid.num_patches, grid.token_dim))


def unpatchify(tokens, grid: PatchGrid) -> Tensor:
    tokens = tn.tensor(tokens)
    if tokens.ndim != 4 or tokens.shape[2:] != (grid.num_patches, grid.token_dim):
        raise DimensionError(f"token block shape {tokens.shape} inconsistent with {grid}")
    b, f = tokens.shape[:2]
    p = grid.patch_size
    blocks = tn.reshape(tokens, (b, f, grid.h_patch, grid.w_patch, grid.channels, p, p))
    blocks = tn.transpose(blocks, (0, 1, 4, 2, 5, 3, 6))
    h, w = grid.latent_hw
    return tn.reshape(blocks, (b, f, grid.channels, h, w))
