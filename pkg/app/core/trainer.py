"""
Single-video fine-tuning and sampling.

Each training step draws t uniformly in [1, T] and a fresh noise tensor,
noises the encoded reference video, predicts the noise as denoiser output
plus VGT perturbation, then updates the discriminator once and the
generator (denoiser + VGT) once, in that order.
"""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from app.core import config
from app.core import tensor as tn
from app.core.checkpoint import Checkpoint, save_checkpoint
from app.core.denoiser import NULL_PROMPT, TinyUNet, combine, guided_epsilon
from app.core.diffusion import ddim_inversion, ddim_sample, make_schedule, q_sample
from app.core.errors import ConfigError, DimensionError, FormatError, NumericalError
from app.core.latent_codec import LatentCodec
from app.core.metrics import export_ratio_trajectory, fci, mse, psnr
from app.core.objectives import (Discriminator, LossWeights, discriminator_loss, generator_adversarial_term,
                                 generator_objective)
from app.core.optim import Adam
from app.core.vgt import VgtConfig, VideoGenerationTransformer
from app.utils.synthetic_generator import video_io

LOG_HEADER = ["step", "mse", "l1", "per", "lg", "total", "norm_ratio", "d_loss"]

ABLATION_PRESETS = {
    "full": {},
    "no_discriminator": {"disable_gan": True},
    "no_vgt": {"disable_vgt": True},
    "no_hyper_loss": {"mse_only": True},
    "no_vgt_no_discriminator": {"disable_vgt": True, "disable_gan": True},
    "no_hyper_loss_no_discriminator": {"mse_only": True, "disable_gan": True},
    "no_vgt_no_hyper_loss": {"disable_vgt": True, "mse_only": True},
}
ABLATION_HEADER = ["variant", "steps", "mse", "psnr", "fci", "norm_ratio"]

VGT_VARIANTS = {
    "pure": {"variant": "pure", "masked": True},
    "pure-EN": {"variant": "pure", "masked": False},
    "hyper": {"variant": "hyper", "masked": True},
    "hyper-EN": {"variant": "hyper", "masked": False},
}
VGT_COMPARE_HEADER = ["variant", "masked", "trainable_params", "psnr", "norm_ratio"]


@dataclass
class StepRecord:
    step: int
    t: int
    prompt_id: int
    mse: float
    l1: float
    per: float
    lg: float
    total: float
    norm_ratio: float
    d_loss: float | None = None

    def as_row(self) -> list:
        d_loss = "" if self.d_loss is None else repr(self.d_loss)
        return [self.step] + [repr(v) for v in (self.mse, self.l1, self.per, self.lg, self.total, self.norm_ratio)] + [d_loss]


def _check_video(video: np.ndarray, cfg: config.TrainConfig) -> np.ndarray:
    video = np.asarray(video)
    if video.ndim == 4:
        video = video[None]
    expected = (1, cfg.F, cfg.C, cfg.H, cfg.W)
    if video.shape != expected:
        raise DimensionError(f"video shape {video.shape} does not match config extents {expected}")
    return video


class AplaTrainer:
    """Owns every network, both optimizers and the RNG of one fine-tuning run."""

    def __init__(self, cfg: config.TrainConfig, video: np.ndarray | None = None, reference_latent: np.ndarray | None = None):
        cfg.validate()
        self.cfg = cfg
        self.weights = LossWeights.from_config(cfg)
        self.rng = np.random.default_rng(cfg.seed)
        self.step = 0
        self.d_updates = 0
        self.g_updates = 0
        self.records: list[StepRecord] = []
        with tn.precision(cfg.precision):
            self.codec = LatentCodec(cfg.C, cfg.r, seed=cfg.seed)
            if reference_latent is not None:
                self.z0 = np.asarray(reference_latent, dtype=tn.get_dtype())
            elif video is not None:
                self.z0 = self.codec.encode(_check_video(video, cfg))
            else:
                raise ConfigError("a reference video or latent is required")
            self.schedule = make_schedule(cfg.T, cfg.beta_min, cfg.beta_max)
            self.unet = TinyUNet(cfg.latent_channels, cfg.T, cfg.unet_channels, cfg.n_prompts, seed=cfg.seed)
            self.vgt = VideoGenerationTransformer(VgtConfig.from_train_config(cfg), seed=cfg.seed + 1)
            self.disc = Discriminator(cfg.latent_channels, seed=cfg.seed + 2)
        print(f"[INFO]: VGT ({cfg.variant}, masked={cfg.masked}) has {self.vgt.num_parameters()} trainable parameters.")

        generator = {f"unet.{k}": p for k, p in self.unet.named_parameters().items()}
        if not cfg.disable_vgt:
            generator.update({f"vgt.{k}": p for k, p in self.vgt.named_parameters().items()})
        self.opt_g = Adam(generator, cfg.lr)
        self.opt_d = Adam({f"disc.{k}": p for k, p in self.disc.named_parameters().items()}, cfg.lr)

    @property
    def active_vgt(self):
        return None if self.cfg.disable_vgt else self.vgt

    def train_step(self) -> StepRecord:
        cfg = self.cfg
        with tn.precision(cfg.precision):
            t = int(self.rng.integers(1, cfg.T + 1))
            noise = self.rng.standard_normal(self.z0.shape).astype(tn.get_dtype())
            prompt_id = NULL_PROMPT if self.rng.random() < config.PROMPT_DROP_PROB else cfg.prompt_id
            try:
                z_t, record = q_sample(self.schedule, self.z0, t, noise)
                pred = combine(self.unet, z_t, z_t, t, prompt_id, vgt=self.active_vgt)

                d_loss, g_term = None, None
                if not cfg.disable_gan:
                    loss_d = discriminator_loss(self.disc, record.noise, pred.combined)
                    self.opt_d.zero_grad()
                    tn.backward(loss_d)
                    self.opt_d.step()
                    self.d_updates += 1
                    d_loss = loss_d.item()
                    g_term = generator_adversarial_term(self.disc, pred.combined)

                losses = generator_objective(record.noise, pred.combined, self.weights, g_term, mse_only=cfg.mse_only)
                self.opt_g.zero_grad()
                tn.backward(losses.total)
                self.opt_g.step()
                self.g_updates += 1
            except NumericalError as e:
                e.record.update({"step": self.step, "t": t, "prompt_id": prompt_id})
                print(f"[ERROR]: Non-finite value at step {self.step} (t={t}): {e}")
                raise

        row = losses.as_row()
        rec = StepRecord(step=self.step, t=t, prompt_id=prompt_id, norm_ratio=pred.norm_ratio, d_loss=d_loss, **row)
        self.records.append(rec)
        self.step += 1
        return rec

    def train(self, steps: int | None = None) -> list:
        steps = self.cfg.steps if steps is None else steps
        new_records = []
        for _ in range(steps):
            rec = self.train_step()
            new_records.append(rec)
            if rec.step % config.LOG_EVERY == 0 or rec.step == self.cfg.steps - 1:
                print(f"[INFO]: step {rec.step:5d} | total {rec.total:.4f} | mse {rec.mse:.4f} | norm_ratio {rec.norm_ratio:.2e}")
        return new_records

    # --- checkpointing ---
    def to_checkpoint(self) -> Checkpoint:
        blobs = {"reference.z0": self.z0, "codec.matrix": self.codec.matrix}
        for prefix, module in (("unet.", self.unet), ("vgt.", self.vgt), ("disc.", self.disc)):
            blobs.update({prefix + k: v for k, v in module.state_dict().items()})
        blobs.update({f"opt_g.{k}": v for k, v in self.opt_g.state_dict().items()})
        blobs.update({f"opt_d.{k}": v for k, v in self.opt_d.state_dict().items()})
        meta = {
            "step": self.step,
            "d_updates": self.d_updates,
            "g_updates": self.g_updates,
            "opt_g_steps": self.opt_g.step_count,
            "opt_d_steps": self.opt_d.step_count,
            "rng_state": self.rng.bit_generator.state,
            "config": config.config_to_text(self.cfg),
        }
        return Checkpoint(config_hash=config.config_hash(self.cfg), meta=meta, blobs=blobs)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, cfg: config.TrainConfig | None = None) -> "AplaTrainer":
        """Rebuilds a trainer; `cfg` may override sampling-only keys of the stored config."""
        stored = config.parse_config_text(ckpt.meta["config"])
        if cfg is None:
            cfg = stored
        elif changed := config.model_mismatch(stored, cfg):
            raise ConfigError(f"config disagrees with the checkpoint on {changed}")
        if "codec.matrix" not in ckpt.blobs:
            raise FormatError("checkpoint has no codec matrix")
        trainer = cls(cfg, reference_latent=ckpt.blobs["reference.z0"])
        # The codec is fixed by the checkpoint, not by the seed of the caller's config.
        trainer.codec.matrix = ckpt.blobs["codec.matrix"].astype(np.float64)
        with tn.precision(cfg.precision):
            trainer.unet.load_state_dict(ckpt.section("unet."))
            trainer.vgt.load_state_dict(ckpt.section("vgt."))
            trainer.disc.load_state_dict(ckpt.section("disc."))
        trainer.opt_g.load_state_dict(ckpt.section("opt_g."), ckpt.meta["opt_g_steps"])
        trainer.opt_d.load_state_dict(ckpt.section("opt_d."), ckpt.meta["opt_d_steps"])
        trainer.step = ckpt.meta["step"]
        trainer.d_updates = ckpt.meta["d_updates"]
        trainer.g_updates = ckpt.meta["g_updates"]
        trainer.rng.bit_generator.state = ckpt.meta["rng_state"]
        return trainer

    # --- sampling ---
    def _predict(self, z: np.ndarray, t: int, prompt_id: int, guidance_w: float) -> np.ndarray:
        eps = guided_epsilon(self.unet, z, t, prompt_id, guidance_w).data
        if self.active_vgt is not None:
            eps = eps + self.vgt(z, t).data
        return eps

    def sample(self, prompt_id: int | None = None, guidance_w: float | None = None,
               generation_mode: bool | None = None) -> np.ndarray:
        cfg = self.cfg
        prompt_id = cfg.prompt_id if prompt_id is None else prompt_id
        guidance_w = cfg.guidance_w if guidance_w is None else guidance_w
        generation_mode = cfg.generation_mode if generation_mode is None else generation_mode
        with tn.precision(cfg.precision), tn.no_grad():
            if generation_mode:
                z_T = np.random.default_rng(cfg.seed).standard_normal(self.z0.shape).astype(tn.get_dtype())
            else:
                # Invert with the prompt the model was tuned on, then sample with the requested one.
                z_T = ddim_inversion(self.schedule, self.z0, lambda z, t: self._predict(z, t, cfg.prompt_id, 1.0))
            z0 = ddim_sample(self.schedule, z_T, lambda z, t: self._predict(z, t, prompt_id, guidance_w))
            video = self.codec.decode(z0)
        mode = "generation" if generation_mode else "reconstruction"
        print(f"[INFO]: Sampled {mode} video for prompt {prompt_id} (guidance {guidance_w}).")
        return video

    def reference_video(self) -> np.ndarray:
        with tn.precision(self.cfg.precision):
            return self.codec.decode(self.z0)

    def write_log(self, path: str | Path) -> str:
        return video_io.write_csv(path, LOG_HEADER, [rec.as_row() for rec in self.records])


@dataclass
class FineTuneResult:
    checkpoint: Checkpoint
    records: list
    trainer: AplaTrainer
    out_dir: str | None = None
    paths: dict = field(default_factory=dict)


def fine_tune(video: np.ndarray, prompt_id: int, cfg: config.TrainConfig, out_dir: str | Path | None = None) -> FineTuneResult:
    """Fine-tunes on one video; with `out_dir` writes checkpoint, log, config echo and ratio plot."""
    cfg = cfg.with_overrides(prompt_id=prompt_id)
    trainer = AplaTrainer(cfg, video)
    print(f"[INFO]: Fine-tuning for {cfg.steps} steps (variant={cfg.variant}, disable_vgt={cfg.disable_vgt}, "
          f"disable_gan={cfg.disable_gan}, mse_only={cfg.mse_only})")
    trainer.train()
    ckpt = trainer.to_checkpoint()
    result = FineTuneResult(checkpoint=ckpt, records=list(trainer.records), trainer=trainer)
    if out_dir is not None:
        out = Path(out_dir)
        result.out_dir = str(out)
        result.paths["config"] = config.save_config(cfg, out / config.CONFIG_ECHO_FILENAME)
        result.paths["log"] = trainer.write_log(out / config.TRAIN_LOG_FILENAME)
        result.paths["checkpoint"] = save_checkpoint(ckpt, out / config.CHECKPOINT_FILENAME)
        if trainer.records:
            export_ratio_trajectory(result.paths["log"], out)
    print(f"[SUCCESS]: Fine-tuning finished after {trainer.step} steps.")
    return result


def sample(checkpoint: Checkpoint, prompt_id: int, guidance_w: float, cfg: config.TrainConfig | None = None) -> np.ndarray:
    trainer = AplaTrainer.from_checkpoint(checkpoint, cfg)
    return trainer.sample(prompt_id=prompt_id, guidance_w=guidance_w)


def _evaluate(video: np.ndarray, cfg: config.TrainConfig) -> tuple:
    result = fine_tune(video, cfg.prompt_id, cfg)
    recon = result.trainer.sample()
    reference = _check_video(video, cfg)
    final_ratio = result.records[-1].norm_ratio if result.records else 0.0
    return result, recon, reference, final_ratio


def ablate(video: np.ndarray, cfg: config.TrainConfig, presets: list | None = None,
           out_csv: str | Path | None = None) -> list:
    """One fine-tune + sample + metrics run per ablation preset; returns the table rows."""
    names = list(ABLATION_PRESETS) if presets is None else list(presets)
    unknown = [n for n in names if n not in ABLATION_PRESETS]
    if unknown:
        raise ConfigError(f"unknown ablation preset(s) {unknown}, expected from {list(ABLATION_PRESETS)}")
    rows = []
    for name in names:
        print(f"[INFO]: Ablation run '{name}'")
        run_cfg = cfg.with_overrides(**ABLATION_PRESETS[name])
        _, recon, reference, ratio = _evaluate(video, run_cfg)
        rows.append([name, run_cfg.steps, mse(recon, reference), psnr(recon, reference), fci(recon), ratio])
    if out_csv is not None:
        video_io.write_csv(out_csv, ABLATION_HEADER, rows)
        print(f"[SUCCESS]: Ablation table written to {out_csv}")
    return rows


def compare_vgt_variants(video: np.ndarray, cfg: config.TrainConfig, out_csv: str | Path | None = None) -> list:
    """Trains the four VGT variants under the same budget and reports size and reconstruction quality."""
    rows = []
    for name, overrides in VGT_VARIANTS.items():
        print(f"[INFO]: VGT comparison run '{name}'")
        run_cfg = cfg.with_overrides(disable_vgt=False, **overrides)
        result, recon, reference, ratio = _evaluate(video, run_cfg)
        rows.append([name, run_cfg.masked, result.trainer.vgt.num_parameters(), psnr(recon, reference), ratio])
    if out_csv is not None:
        video_io.write_csv(out_csv, VGT_COMPARE_HEADER, rows)
        print(f"[SUCCESS]: VGT comparison written to {out_csv}")
    return rows
