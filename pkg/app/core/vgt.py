"""
Video Generation Transformer: a spatial masked-decoder stack per frame, a
temporal masked-decoder stack over the per-frame cls tokens, and one of two
fusion heads producing a latent-shaped perturbation.

  pure  : patch tokens (Hadamard) frame tokens, frame token broadcast over its patches
  hyper : frame tokens -> transposed 3-D convolution block -> patch-grid token maps

Both heads end in an MLP whose last layer starts at zero, so an untrained
VGT contributes nothing to the denoiser's prediction.
"""
from dataclasses import dataclass

import numpy as np

from app.core import config
from app.core import tensor as tn
from app.core.errors import ConfigError, DimensionError
from app.core.latent_codec import PatchGrid, patchify, unpatchify
from app.core.layers import ConvTranspose3d, LayerNorm, Linear, Module, sinusoidal_embedding
from app.core.tensor import Tensor


@dataclass(frozen=True)
class VgtConfig:
    variant: str = "pure"
    spatial_layers: int = config.VGT_SPATIAL_LAYERS
    temporal_layers: int = config.VGT_TEMPORAL_LAYERS
    heads: int = config.VGT_HEADS
    width: int = config.VGT_WIDTH
    patch_size: int = config.VGT_PATCH_SIZE
    masked: bool = True
    latent_channels: int = 4
    frames: int = config.DEFAULT_FRAMES
    latent_h: int = 16
    latent_w: int = 16
    hyper_temporal_kernel: int = 3

    def __post_init__(self):
        if self.variant not in config.VARIANTS:
            raise ConfigError(f"unknown VGT variant '{self.variant}'")
        if self.spatial_layers < 1 or self.temporal_layers < 1:
            raise ConfigError("VGT needs at least one spatial and one temporal layer")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by {self.heads} heads")
        if self.width % 2:
            raise ConfigError("width must be even for the sinusoidal time embedding")
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")
        if self.hyper_temporal_kernel < 1 or self.hyper_temporal_kernel % 2 == 0:
            raise ConfigError("hyper_temporal_kernel must be a positive odd number")
        PatchGrid.for_latent(self.latent_channels, self.latent_h, self.latent_w, self.patch_size)

    @property
    def grid(self) -> PatchGrid:
        return PatchGrid.for_latent(self.latent_channels, self.latent_h, self.latent_w, self.patch_size)

    @classmethod
    def from_train_config(cls, cfg, **overrides) -> "VgtConfig":
        h, w = cfg.latent_hw
        values = dict(variant=cfg.variant, spatial_layers=cfg.vgt_layers_spatial,
                      temporal_layers=cfg.vgt_layers_temporal, heads=cfg.vgt_heads, width=cfg.vgt_width,
                      patch_size=cfg.patch_size, masked=cfg.masked, latent_channels=cfg.latent_channels,
                      frames=cfg.F, latent_h=h, latent_w=w)
        values.update(overrides)
        return cls(**values)


def causal_mask(n: int) -> np.ndarray:
    """Position i may attend to positions j <= i."""
    return np.tril(np.ones((n, n), dtype=bool))


class MaskedSelfAttention(Module):
    """Masked multi-head self-attention with the pre-norm residual z + MMSA(LN(z))."""

    def __init__(self, width: int, heads: int, rng: np.random.Generator):
        self.heads = heads
        self.head_dim = width // heads
        self.norm = LayerNorm(width)
        self.qkv = Linear(width, 3 * width, rng)
        self.out = Linear(width, width, rng)

    def forward(self, seq: Tensor, mask: np.ndarray | None = None) -> Tensor:
        s, n, d = seq.shape
        if mask is None:
            mask = np.ones((n, n), dtype=bool)
        qkv = tn.reshape(self.qkv(self.norm(seq)), (s, n, 3, self.heads, self.head_dim))
        qkv = tn.transpose(qkv, (2, 0, 3, 1, 4))  # 3 x S x heads x N x head_dim
        q, k, v = qkv[0], qkv[1], qkv[2]
        logits = tn.matmul(q, tn.transpose(k, (0, 1, 3, 2))) * (self.head_dim ** -0.5)
        weights = tn.softmax_rows(tn.apply_attention_mask(logits, mask))
        heads_out = tn.transpose(tn.matmul(weights, v), (0, 2, 1, 3))
        return self.out(tn.reshape(heads_out, (s, n, d))) + seq


def mmsa(layer: MaskedSelfAttention, seq: Tensor, mask: np.ndarray | None = None) -> Tensor:
    return layer(seq, mask)


class DecoderBlock(Module):
    def __init__(self, width: int, heads: int, rng: np.random.Generator):
        self.attn = MaskedSelfAttention(width, heads, rng)
        self.norm = LayerNorm(width)
        self.ff_in = Linear(width, 2 * width, rng)
        self.ff_out = Linear(2 * width, width, rng)

    def forward(self, seq: Tensor, mask: np.ndarray | None) -> Tensor:
        seq = self.attn(seq, mask)
        return seq + self.ff_out(tn.silu(self.ff_in(self.norm(seq))))


class SpatialDecoder(Module):
    def __init__(self, cfg: VgtConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.grid = cfg.grid
        d = cfg.width
        self.patch_embed = Linear(self.grid.token_dim, d, rng)
        self.cls = tn.parameter(rng.standard_normal((cfg.frames, d)) * 0.02)  # one per frame
        self.pos = tn.parameter(rng.standard_normal((self.grid.num_patches + 1, d)) * 0.02)
        self.blocks = [DecoderBlock(d, cfg.heads, rng) for _ in range(cfg.spatial_layers)]

    def forward(self, z_t, t: int) -> tuple:
        z = tn.tensor(z_t)
        if z.ndim != 5 or z.shape[1] != self.cfg.frames:
            raise DimensionError(f"VGT configured for {self.cfg.frames} frames, got latent {z.shape}")
        b, f = z.shape[:2]
        n, d = self.grid.num_patches, self.cfg.width

        tokens = self.patch_embed(patchify(z, self.grid))
        cls = tn.expand(tn.reshape(self.cls, (1, f, 1, d)), (b, f, 1, d))
        seq = tn.concat([cls, tokens], axis=2)
        temb = tn.tensor(sinusoidal_embedding(t, d).reshape(1, d))
        offset = self.pos + tn.expand(temb, self.pos.shape)
        seq = seq + tn.expand(offset, seq.shape)

        x = tn.reshape(seq, (b * f, n + 1, d))
        mask = causal_mask(n + 1) if self.cfg.masked else None
        for block in self.blocks:
            x = block(x, mask)
        x = tn.reshape(x, (b, f, n + 1, d))
        return x[:, :, 0, :], x[:, :, 1:, :]


class TemporalDecoder(Module):
    def __init__(self, cfg: VgtConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.width
        self.cls = tn.parameter(rng.standard_normal(d) * 0.02)
        self.entry = Linear(d, d, rng)
        self.entry_norm = LayerNorm(d)
        self.pos = tn.parameter(rng.standard_normal((cfg.frames + 1, d)) * 0.02)
        self.blocks = [DecoderBlock(d, cfg.heads, rng) for _ in range(cfg.temporal_layers)]

    def full_sequence(self, cls_per_frame: Tensor) -> Tensor:
        if cls_per_frame.ndim != 3 or cls_per_frame.shape[1] < 1:
            raise DimensionError(f"expected B x F x d frame cls tokens, got {cls_per_frame.shape}")
        b, f, d = cls_per_frame.shape
        if f + 1 > self.pos.shape[0] or d != self.cfg.width:
            raise DimensionError(f"frame cls tokens {cls_per_frame.shape} exceed the configured {self.cfg.frames} x {self.cfg.width}")
        frame_tokens = self.entry_norm(self.entry(cls_per_frame))
        cls = tn.expand(tn.reshape(self.cls, (1, 1, d)), (b, 1, d))
        seq = tn.concat([cls, frame_tokens], axis=1)
        seq = seq + tn.expand(self.pos[: f + 1], seq.shape)
        mask = causal_mask(f + 1) if self.cfg.masked else None
        for block in self.blocks:
            seq = block(seq, mask)
        return seq

    def forward(self, cls_per_frame: Tensor) -> tuple:
        seq = self.full_sequence(cls_per_frame)
        return seq[:, 0, :], seq[:, 1:, :]


class HyperFusion(Module):
    """Transposed 3-D convolution block: frame tokens -> per-patch token maps."""

    def __init__(self, cfg: VgtConfig, rng: np.random.Generator):
        self.grid = cfg.grid
        d, kt = cfg.width, cfg.hyper_temporal_kernel
        self.spatial = ConvTranspose3d(d, d, (1, self.grid.h_patch, self.grid.w_patch), rng)
        self.temporal = ConvTranspose3d(d, d, (kt, 1, 1), rng, padding=((kt - 1) // 2, 0, 0))

    def forward(self, temporal_out: Tensor) -> Tensor:
        b, f1, d = temporal_out.shape
        f = f1 - 1
        frames = temporal_out[:, 1:, :]  # temporal cls dropped
        x = tn.reshape(tn.transpose(frames, (0, 2, 1)), (b, d, f, 1, 1))
        x = self.temporal(self.spatial(x))
        if x.shape[3:] != (self.grid.h_patch, self.grid.w_patch):
            raise DimensionError(f"fusion output {x.shape} does not match grid {self.grid}")
        x = tn.reshape(x, (b, d, f, self.grid.num_patches))
        return tn.transpose(x, (0, 2, 3, 1))


def fuse_pure(patch_tokens: Tensor, frame_tokens: Tensor) -> Tensor:
    """y[b, f, n, k] = patch[b, f, n, k] * frame[b, f, k]."""
    if patch_tokens.ndim != 4 or frame_tokens.ndim != 3:
        raise DimensionError(f"expected B x F x N x d and B x F x d, got {patch_tokens.shape} and {frame_tokens.shape}")
    b, f, n, d = patch_tokens.shape
    if frame_tokens.shape != (b, f, d):
        raise DimensionError(f"frame tokens {frame_tokens.shape} do not match patch tokens {patch_tokens.shape}")
    return patch_tokens * tn.expand(tn.reshape(frame_tokens, (b, f, 1, d)), patch_tokens.shape)


def fuse_hyper(fusion: HyperFusion, temporal_out: Tensor) -> Tensor:
    return fusion(temporal_out)


class VideoGenerationTransformer(Module):
    def __init__(self, cfg: VgtConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.grid = cfg.grid
        self.spatial = SpatialDecoder(cfg, rng)
        self.temporal = TemporalDecoder(cfg, rng)
        self.fusion = HyperFusion(cfg, rng) if cfg.variant == "hyper" else None
        self.head_in = Linear(cfg.width, cfg.width, rng)
        self.head_out = Linear(cfg.width, self.grid.token_dim, rng, zero_init=True)
        self.calls = 0

    def spatial_decode(self, z_t, t: int) -> tuple:
        return self.spatial(z_t, t)

    def temporal_decode(self, cls_per_frame: Tensor) -> tuple:
        return self.temporal(cls_per_frame)

    def forward(self, z_t, t: int) -> Tensor:
        self.calls += 1
        z = tn.tensor(z_t)
        cls_per_frame, patch_tokens = self.spatial_decode(z, t)
        if self.fusion is None:
            _, frame_tokens = self.temporal_decode(cls_per_frame)
            y = fuse_pure(patch_tokens, frame_tokens)
        else:
            y = fuse_hyper(self.fusion, self.temporal.full_sequence(cls_per_frame))
        tokens = self.head_out(tn.silu(self.head_in(y)))
        return unpatchify(tokens, self.grid)


def vgt_forward(vgt: VideoGenerationTransformer, z_t, t: int) -> Tensor:
    return vgt(z_t, t)


def count_trainable(cfg: VgtConfig) -> int:
    return VideoGenerationTransformer(cfg).num_parameters()
