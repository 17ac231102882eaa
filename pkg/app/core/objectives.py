"""
Training objectives: the hyper-loss (MSE + L1 + perceptual feature distance)
on predicted noise and the adversarial term from a single 1x1-convolution
discriminator that judges noise residuals.

Generator adversarial loss is the non-saturating form -log sigmoid(D(fake)).
"""
import functools
import math
from dataclasses import dataclass

import numpy as np

from app.core import config
from app.core import tensor as tn
from app.core.errors import ConfigError, DimensionError
from app.core.layers import Conv2d, Module
from app.core.tensor import Tensor

PERCEPTUAL_SEED = 1234
PERCEPTUAL_WIDTH = 8


@dataclass(frozen=True)
class LossWeights:
    alpha: float = config.DEFAULT_ALPHA
    beta: float = config.DEFAULT_BETA
    gamma: float = config.DEFAULT_GAMMA
    lam: float = config.DEFAULT_LAMBDA

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "lam"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"loss weight {name} must be finite and >= 0, got {value}")

    @classmethod
    def from_config(cls, cfg) -> "LossWeights":
        return cls(alpha=cfg.alpha, beta=cfg.beta, gamma=cfg.gamma, lam=cfg.lam)


def _pair(eps, eps_hat, name: str) -> tuple:
    eps, eps_hat = tn.tensor(eps), tn.tensor(eps_hat)
    if eps.shape != eps_hat.shape:
        raise DimensionError(f"{name}: target {eps.shape} and prediction {eps_hat.shape} differ")
    return eps, eps_hat


def mse_loss(eps, eps_hat) -> Tensor:
    eps, eps_hat = _pair(eps, eps_hat, "mse_loss")
    return tn.mean(tn.square(eps_hat - eps))


def l1_loss(eps, eps_hat) -> Tensor:
    """Mean absolute difference; the subgradient of |x| at 0 is taken as 0."""
    eps, eps_hat = _pair(eps, eps_hat, "l1_loss")
    return tn.mean(tn.abs_(eps_hat - eps))


class FeatureExtractor(Module):
    """Fixed, seeded, untrained three-layer conv stack applied frame by frame."""

    def __init__(self, channels: int, width: int = PERCEPTUAL_WIDTH, seed: int = PERCEPTUAL_SEED):
        rng = np.random.default_rng(seed)
        self.conv1 = Conv2d(channels, width, 3, rng, padding=1)
        self.conv2 = Conv2d(width, width, 3, rng, stride=2, padding=1)
        self.conv3 = Conv2d(width, width, 3, rng, padding=1)
        self.freeze()

    def forward(self, x: Tensor) -> list:
        f1 = tn.silu(self.conv1(x))
        f2 = tn.silu(self.conv2(f1))
        f3 = self.conv3(f2)
        return [f1, f2, f3]


@functools.lru_cache(maxsize=8)
def feature_extractor(channels: int, dtype_name: str) -> FeatureExtractor:
    with tn.precision(dtype_name):
        return FeatureExtractor(channels)


def perceptual_loss(eps, eps_hat) -> Tensor:
    """Layer-averaged feature MSE between the two noise tensors."""
    eps, eps_hat = _pair(eps, eps_hat, "perceptual_loss")
    if eps.ndim != 5:
        raise DimensionError(f"perceptual_loss expects B x F x c x h x w, got {eps.shape}")
    b, f, c, h, w = eps.shape
    net = feature_extractor(c, tn.get_dtype().name)
    feats_a = net(tn.reshape(eps, (b * f, c, h, w)))
    feats_b = net(tn.reshape(eps_hat, (b * f, c, h, w)))
    per_layer = [tn.mean(tn.square(fb - fa)) for fa, fb in zip(feats_a, feats_b)]
    total = per_layer[0]
    for term in per_layer[1:]:
        total = total + term
    return total * (1.0 / len(per_layer))


def hyper_loss(eps, eps_hat, weights: LossWeights) -> Tensor:
    return (weights.alpha * mse_loss(eps, eps_hat)
            + weights.beta * l1_loss(eps, eps_hat)
            + weights.gamma * perceptual_loss(eps, eps_hat))


class Discriminator(Module):
    """One 1x1 convolution from c latent channels to a single score map: c + 1 parameters."""

    def __init__(self, latent_channels: int, seed: int = 0, zero_init: bool = False):
        rng = np.random.default_rng(seed)
        self.latent_channels = latent_channels
        if zero_init:
            kernel = np.zeros((1, latent_channels))
        else:
            kernel = rng.standard_normal((1, latent_channels)) / math.sqrt(latent_channels)
        self.kernel = tn.parameter(kernel)
        self.bias = tn.parameter(np.zeros(1))

    def forward(self, noise, frozen: bool = False) -> Tensor:
        return discriminate(self, noise, frozen=frozen)


def discriminate(disc: Discriminator, noise, frozen: bool = False) -> Tensor:
    """
    Scores a noise tensor B x F x c x h x w; returns one logit per batch element.

    All frames are judged together: per-location scores are averaged over
    F, h and w. With `frozen` the discriminator weights enter the graph as
    constants so no gradient reaches them.
    """
    x = tn.tensor(noise)
    if x.ndim != 5:
        raise DimensionError(f"discriminator expects B x F x c x h x w, got {x.shape}")
    if x.shape[2] != disc.latent_channels:
        raise DimensionError(f"discriminator expects {disc.latent_channels} channels, got {x.shape[2]}")
    kernel, bias = disc.kernel, disc.bias
    if frozen:
        kernel, bias = kernel.detach(), bias.detach()
    scores = tn.conv1x1(tn.transpose(x, (0, 2, 1, 3, 4)), kernel, bias)
    return tn.mean(scores, axis=(1, 2, 3, 4))


@dataclass
class GanLosses:
    d_loss: Tensor
    g_term: Tensor


def gan_losses(disc: Discriminator, real_eps, fake_eps) -> GanLosses:
    """
    d_loss = -[log s(D(real)) + log(1 - s(D(fake.detach())))], gradient on D only.
    g_term = -log s(D(fake)) with D frozen, gradient on the generator only.
    """
    real, fake = _pair(real_eps, fake_eps, "gan_losses")
    return GanLosses(d_loss=discriminator_loss(disc, real, fake), g_term=generator_adversarial_term(disc, fake))


def discriminator_loss(disc: Discriminator, real_eps, fake_eps) -> Tensor:
    real, fake = _pair(real_eps, fake_eps, "discriminator_loss")
    d_real = discriminate(disc, real.detach())
    d_fake = discriminate(disc, fake.detach())
    return -tn.mean(tn.log_sigmoid(d_real) + tn.log_sigmoid(-d_fake))


def generator_adversarial_term(disc: Discriminator, fake_eps) -> Tensor:
    return -tn.mean(tn.log_sigmoid(discriminate(disc, fake_eps, frozen=True)))


def total_objective(eps, eps_hat, weights: LossWeights, g_term) -> Tensor:
    return hyper_loss(eps, eps_hat, weights) + weights.lam * tn.tensor(g_term)


@dataclass
class LossBreakdown:
    mse: Tensor
    l1: Tensor
    per: Tensor
    lg: Tensor
    total: Tensor

    def as_row(self) -> dict:
        return {"mse": self.mse.item(), "l1": self.l1.item(), "per": self.per.item(),
                "lg": self.lg.item(), "total": self.total.item()}


def generator_objective(eps, eps_hat, weights: LossWeights, g_term=None, mse_only: bool = False) -> LossBreakdown:
    """
    Generator loss with every component kept for logging.

    `mse_only` swaps the hyper-loss for the plain noise MSE. It only touches
    the reconstruction part: a given `g_term` still adds lam * L_g, so the
    plain MSE path needs the discriminator disabled as well. A missing
    `g_term` (discriminator disabled) contributes zero.
    """
    mse = mse_loss(eps, eps_hat)
    l1 = l1_loss(eps, eps_hat)
    per = perceptual_loss(eps, eps_hat)
    lg = tn.tensor(0.0) if g_term is None else g_term
    if mse_only:
        recon = mse
    else:
        recon = weights.alpha * mse + weights.beta * l1 + weights.gamma * per
    total = recon if g_term is None else recon + weights.lam * lg
    return LossBreakdown(mse=mse, l1=l1, per=per, lg=lg, total=total)
