from dataclasses import dataclass

import numpy as np

from app.core import config
from app.core import tensor as tn
from app.core.errors import ConfigError, ContractError, DimensionError
from app.core.layers import Conv2d, ConvTranspose2d, Embedding, Linear, Module, sinusoidal_embedding
from app.core.tensor import Tensor

NULL_PROMPT = 0


class TinyUNet(Module):
    """
    Small trainable noise predictor: two stride-2 down blocks, a conditioned
    bottleneck and two transposed-conv up blocks with additive skips. Frames
    are processed independently with shared weights.
    """

    def __init__(self, latent_channels: int, T: int, channels: int = config.UNET_CHANNELS,
                 n_prompts: int = config.N_PROMPTS, time_dim: int = config.TIME_EMBED_DIM,
                 prompt_dim: int = config.PROMPT_EMBED_DIM, seed: int = 0):
        rng = np.random.default_rng(seed)
        ch = channels
        self.latent_channels = latent_channels
        self.T = T
        self.n_prompts = n_prompts
        self.time_dim = time_dim
        self.conv_in = Conv2d(latent_channels, ch, 3, rng, padding=1)
        self.down1 = Conv2d(ch, 2 * ch, 3, rng, stride=2, padding=1)
        self.down2 = Conv2d(2 * ch, 4 * ch, 3, rng, stride=2, padding=1)
        self.time_proj = Linear(time_dim, 4 * ch, rng)
        self.prompt_table = Embedding(n_prompts, prompt_dim, rng)
        self.prompt_proj = Linear(prompt_dim, 4 * ch, rng)
        self.mid = Conv2d(4 * ch, 4 * ch, 3, rng, padding=1)
        self.up1 = ConvTranspose2d(4 * ch, 2 * ch, 4, rng, stride=2, padding=1)
        self.up2 = ConvTranspose2d(2 * ch, ch, 4, rng, stride=2, padding=1)
        # Zero-initialised so the untrained model predicts exactly zero noise.
        self.conv_out = Conv2d(ch, latent_channels, 3, rng, padding=1, zero_init=True)
        print(f"[INFO]: Denoiser initialised with {self.num_parameters()} trainable parameters.")

    def _conditioning(self, t: int, prompt_id: int) -> Tensor:
        temb = tn.tensor(sinusoidal_embedding(t, self.time_dim).reshape(1, -1))
        return self.time_proj(temb) + self.prompt_proj(self.prompt_table(prompt_id))

    def forward(self, z_t, t: int, prompt_id: int) -> Tensor:
        if not 1 <= t <= self.T:
            raise ContractError(f"step {t} outside [1, {self.T}]")
        if not 0 <= prompt_id < self.n_prompts:
            raise ContractError(f"unknown prompt id {prompt_id} (have {self.n_prompts})")
        z = tn.tensor(z_t)
        if z.ndim != 5 or z.shape[2] != self.latent_channels:
            raise DimensionError(f"latent must be B x F x {self.latent_channels} x h x w, got {z.shape}")
        b, f, c, h, w = z.shape
        if h % 4 or w % 4:
            raise DimensionError(f"latent grid {h}x{w} must be divisible by 4")

        x = tn.reshape(z, (b * f, c, h, w))
        h0 = tn.silu(self.conv_in(x))
        h1 = tn.silu(self.down1(h0))
        h2 = tn.silu(self.down2(h1))
        cond = tn.reshape(self._conditioning(t, prompt_id), (1, h2.shape[1], 1, 1))
        mid = tn.silu(self.mid(h2 + tn.expand(cond, h2.shape)))
        u1 = tn.silu(self.up1(mid)) + h1
        u2 = tn.silu(self.up2(u1)) + h0
        return tn.reshape(self.conv_out(u2), (b, f, c, h, w))


def unet_forward(unet: TinyUNet, z_hat_t, t: int, prompt_id: int) -> Tensor:
    return unet(z_hat_t, t, prompt_id)


@dataclass
class CombinedPrediction:
    unet_out: Tensor
    vgt_out: Tensor
    combined: Tensor
    norm_ratio: float


def norm_ratio(vgt_out: np.ndarray, unet_out: np.ndarray) -> float:
    unet_norm = float(np.linalg.norm(np.asarray(unet_out, dtype=np.float64)))
    vgt_norm = float(np.linalg.norm(np.asarray(vgt_out, dtype=np.float64)))
    return vgt_norm / max(unet_norm, config.NORM_RATIO_EPS)


def combine(unet: TinyUNet, z_hat_t, z_t, t: int, prompt_id: int, vgt=None) -> CombinedPrediction:
    """APLA prediction: denoiser output on z_hat_t plus the VGT perturbation of z_t."""
    z_hat_t, z_t = tn.tensor(z_hat_t), tn.tensor(z_t)
    if z_hat_t.shape != z_t.shape:
        raise DimensionError(f"denoiser input {z_hat_t.shape} and VGT input {z_t.shape} differ")
    unet_out = unet_forward(unet, z_hat_t, t, prompt_id)
    if vgt is None:
        vgt_out = tn.tensor(np.zeros(unet_out.shape))
    else:
        vgt_out = vgt(z_t, t)
    combined = unet_out + vgt_out
    return CombinedPrediction(unet_out, vgt_out, combined, norm_ratio(vgt_out.data, unet_out.data))


def guided_epsilon(unet: TinyUNet, z_hat_t, t: int, prompt_id: int, guidance_w: float) -> Tensor:
    """Classifier-free guidance: eps_null + w * (eps_prompt - eps_null)."""
    if guidance_w < 0:
        raise ConfigError(f"guidance weight must be >= 0, got {guidance_w}")
    eps_prompt = unet(z_hat_t, t, prompt_id)
    if guidance_w == 1.0:
        return eps_prompt
    eps_null = unet(z_hat_t, t, NULL_PROMPT)
    return eps_null + guidance_w * (eps_prompt - eps_null)
