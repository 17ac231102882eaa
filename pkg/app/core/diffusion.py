"""
Forward noising, noise schedule and deterministic (eta = 0) DDIM sampling and
inversion. The denoiser passed to the loops is any callable
`(z_t: np.ndarray, t: int) -> predicted noise` of the same shape.
"""
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from app.core import config
from app.core.errors import ConfigError, ContractError, DimensionError

Denoiser = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def alpha_bar(self, t: int) -> float:
        """Cumulative product up to step t; alpha_bar(0) is 1 by definition."""
        if not 0 <= t <= self.T:
            raise ContractError(f"step {t} outside [0, {self.T}]")
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def beta(self, t: int) -> float:
        check_step(self, t)
        return float(self.betas[t - 1])

    def snr(self) -> np.ndarray:
        return self.alpha_bars / (1.0 - self.alpha_bars)


@dataclass
class NoiseRecord:
    """The true noise drawn at step t; the discriminator's real sample."""
    t: int
    noise: np.ndarray
    z_t: np.ndarray


def make_schedule(T: int = config.DEFAULT_T, beta_min: float = config.BETA_MIN,
                  beta_max: float = config.BETA_MAX) -> NoiseSchedule:
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if not 0 < beta_min <= beta_max < 1:
        raise ConfigError(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    betas = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def check_step(schedule: NoiseSchedule, t: int) -> None:
    if not 1 <= t <= schedule.T:
        raise ContractError(f"step {t} outside [1, {schedule.T}]")


def q_sample(schedule: NoiseSchedule, z0: np.ndarray, t: int, noise: np.ndarray) -> tuple:
    """Closed form z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps."""
    check_step(schedule, t)
    if z0.shape != noise.shape:
        raise DimensionError(f"noise shape {noise.shape} != latent shape {z0.shape}")
    ab = schedule.alpha_bar(t)
    z_t = (math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * noise).astype(z0.dtype)
    return z_t, NoiseRecord(t=t, noise=noise, z_t=z_t)


def q_step(schedule: NoiseSchedule, z_prev: np.ndarray, t: int, noise: np.ndarray) -> np.ndarray:
    """One Markov step z_t = sqrt(alpha_t) z_{t-1} + sqrt(beta_t) eps."""
    check_step(schedule, t)
    if z_prev.shape != noise.shape:
        raise DimensionError(f"noise shape {noise.shape} != latent shape {z_prev.shape}")
    return (math.sqrt(schedule.alphas[t - 1]) * z_prev + math.sqrt(schedule.beta(t)) * noise).astype(z_prev.dtype)


def ddim_step(schedule: NoiseSchedule, z_t: np.ndarray, eps: np.ndarray, t: int) -> np.ndarray:
    check_step(schedule, t)
    if z_t.shape != eps.shape:
        raise DimensionError(f"predicted noise shape {eps.shape} != latent shape {z_t.shape}")
    ab_t, ab_prev = schedule.alpha_bar(t), schedule.alpha_bar(t - 1)
    z0_pred = (z_t - math.sqrt(1.0 - ab_t) * eps) / math.sqrt(ab_t)
    return (math.sqrt(ab_prev) * z0_pred + math.sqrt(1.0 - ab_prev) * eps).astype(z_t.dtype)


def ddim_step_inverse(schedule: NoiseSchedule, z_prev: np.ndarray, eps: np.ndarray, t: int) -> np.ndarray:
    """Inverse of ddim_step for a fixed noise estimate: z_{t-1} -> z_t."""
    check_step(schedule, t)
    if z_prev.shape != eps.shape:
        raise DimensionError(f"predicted noise shape {eps.shape} != latent shape {z_prev.shape}")
    ab_t, ab_prev = schedule.alpha_bar(t), schedule.alpha_bar(t - 1)
    z0_pred = (z_prev - math.sqrt(1.0 - ab_prev) * eps) / math.sqrt(ab_prev)
    return (math.sqrt(ab_t) * z0_pred + math.sqrt(1.0 - ab_t) * eps).astype(z_prev.dtype)


def _num_steps(schedule: NoiseSchedule, T: int | None) -> int:
    T = schedule.T if T is None else T
    if not 1 <= T <= schedule.T:
        raise ContractError(f"T={T} outside [1, {schedule.T}]")
    return T


def ddim_inversion(schedule: NoiseSchedule, z0: np.ndarray, denoiser: Denoiser, T: int | None = None) -> np.ndarray:
    """Runs DDIM forward in time with the model's own noise estimates, z0 -> z_T."""
    z = z0
    for t in range(1, _num_steps(schedule, T) + 1):
        z = ddim_step_inverse(schedule, z, denoiser(z, t), t)
    return z


def ddim_sample(schedule: NoiseSchedule, z_T: np.ndarray, denoiser: Denoiser, T: int | None = None) -> np.ndarray:
    z = z_T
    for t in range(_num_steps(schedule, T), 0, -1):
        z = ddim_step(schedule, z, denoiser(z, t), t)
    return z
