import numpy as np
import pytest

from app.core import checkpoint, config
from app.core import trainer as apla
from app.core.denoiser import combine
from app.core.diffusion import q_sample
from app.core.errors import ConfigError, DimensionError
from app.core.metrics import psnr, ratio_trajectory
from app.core.objectives import mse_loss
from app.utils.synthetic_generator import video_io
from app.utils.synthetic_generator.scene_generator import SceneSpec, gen_video
from tests.conftest import make_small_config


def test_video_must_match_config(small_cfg):
    with pytest.raises(DimensionError):
        apla.AplaTrainer(small_cfg, np.zeros((1, 3, 1, 16, 16)))
    with pytest.raises(ConfigError):
        apla.AplaTrainer(small_cfg)


def test_initial_prediction_is_the_bare_denoiser(small_cfg, small_video):
    trainer = apla.AplaTrainer(small_cfg, small_video)
    z_t, _ = q_sample(trainer.schedule, trainer.z0, 5, np.ones_like(trainer.z0))
    pred = combine(trainer.unet, z_t, z_t, 5, 1, vgt=trainer.vgt)
    assert np.array_equal(pred.combined.data, pred.unet_out.data)
    assert pred.norm_ratio == 0.0


def test_initial_mse_is_noise_variance(small_cfg, small_video):
    trainer = apla.AplaTrainer(small_cfg, small_video)
    rng = np.random.default_rng(0)
    losses = []
    for _ in range(100):
        t = int(rng.integers(1, small_cfg.T + 1))
        noise = rng.standard_normal(trainer.z0.shape).astype(np.float32)
        z_t, record = q_sample(trainer.schedule, trainer.z0, t, noise)
        pred = combine(trainer.unet, z_t, z_t, t, 1, vgt=trainer.vgt)
        losses.append(mse_loss(record.noise, pred.combined).item())
    assert np.mean(losses) == pytest.approx(1.0, rel=0.1)


def test_zero_steps_emit_valid_checkpoint(tmp_path, small_video):
    cfg = make_small_config(steps=0)
    result = apla.fine_tune(small_video, 1, cfg, out_dir=tmp_path)
    loaded = checkpoint.load_checkpoint(result.paths["checkpoint"])
    assert loaded.meta["step"] == 0
    assert "unet.conv_out.weight" in loaded.blobs
    assert video_io.read_csv_header(result.paths["log"]) == apla.LOG_HEADER
    assert (tmp_path / "config.txt").exists()


def test_training_writes_log_and_ratio_trajectory(tmp_path, small_cfg, small_video):
    result = apla.fine_tune(small_video, 2, small_cfg, out_dir=tmp_path)
    assert len(result.records) == small_cfg.steps
    points = ratio_trajectory(result.paths["log"])
    assert [step for step, _ in points] == list(range(small_cfg.steps))
    assert points[0][1] == 0.0
    for rec in result.records:
        assert np.isfinite([rec.mse, rec.l1, rec.per, rec.lg, rec.total, rec.d_loss]).all()


def test_update_counts_alternate(small_cfg, small_video):
    trainer = apla.AplaTrainer(small_cfg, small_video)
    for _ in range(small_cfg.steps):
        trainer.train_step()
        assert abs(trainer.d_updates - trainer.g_updates) <= 1
    assert trainer.g_updates == small_cfg.steps


def test_disabled_discriminator_is_never_updated(small_video):
    trainer = apla.AplaTrainer(make_small_config(disable_gan=True), small_video)
    before = trainer.disc.kernel.data.copy()
    records = trainer.train()
    assert trainer.d_updates == 0
    assert np.array_equal(trainer.disc.kernel.data, before)
    assert all(rec.d_loss is None and rec.lg == 0.0 for rec in records)


def test_mse_only_total_is_plain_mse(small_video):
    records = apla.AplaTrainer(make_small_config(mse_only=True, disable_gan=True), small_video).train()
    assert all(rec.total == rec.mse for rec in records)


def test_mse_only_with_discriminator_adds_the_adversarial_term(small_video):
    cfg = make_small_config(mse_only=True)
    trainer = apla.AplaTrainer(cfg, small_video)
    records = trainer.train()
    assert trainer.d_updates == cfg.steps
    for rec in records:
        assert rec.lg > 0.0
        assert rec.total == pytest.approx(rec.mse + cfg.lam * rec.lg, rel=1e-5)


def test_disabled_vgt_is_never_called(small_video):
    trainer = apla.AplaTrainer(make_small_config(disable_vgt=True), small_video)
    trainer.train()
    trainer.sample()
    assert trainer.vgt.calls == 0
    assert not any(name.startswith("vgt.") for name in trainer.opt_g.params)


def test_identical_configs_give_identical_checkpoints(small_cfg, small_video):
    digests = []
    for _ in range(2):
        result = apla.fine_tune(small_video, 1, small_cfg)
        digests.append(checkpoint.checkpoint_digest(result.checkpoint))
    assert digests[0] == digests[1]


def test_resume_matches_uninterrupted_training(small_video):
    cfg = make_small_config(steps=4)
    straight = apla.AplaTrainer(cfg, small_video)
    straight.train(4)

    first = apla.AplaTrainer(cfg, small_video)
    first.train(2)
    restored = checkpoint.from_bytes(checkpoint.to_bytes(first.to_checkpoint()))
    resumed = apla.AplaTrainer.from_checkpoint(restored)
    resumed.train(2)

    assert checkpoint.to_bytes(resumed.to_checkpoint()) == checkpoint.to_bytes(straight.to_checkpoint())


def test_fresh_model_reconstructs_reference(small_cfg, small_video):
    trainer = apla.AplaTrainer(small_cfg, small_video)
    video = trainer.sample()
    assert video.shape == small_video.shape
    assert np.abs(video - small_video).max() < 1e-2


def test_sampling_is_deterministic(small_cfg, small_video):
    ckpt = apla.fine_tune(small_video, 1, small_cfg).checkpoint
    first = apla.sample(ckpt, prompt_id=1, guidance_w=1.5)
    second = apla.sample(ckpt, prompt_id=1, guidance_w=1.5)
    assert np.array_equal(first, second)
    trainer = apla.AplaTrainer.from_checkpoint(ckpt)
    assert np.array_equal(trainer.sample(generation_mode=True), trainer.sample(generation_mode=True))


def test_ablate_writes_one_row_per_preset(tmp_path, small_video):
    cfg = make_small_config(steps=1)
    out = tmp_path / "ablation.csv"
    rows = apla.ablate(small_video, cfg, presets=["full", "no_vgt", "no_discriminator"], out_csv=out)
    assert [row[0] for row in rows] == ["full", "no_vgt", "no_discriminator"]
    table = video_io.read_csv(out)
    assert [row["variant"] for row in table] == ["full", "no_vgt", "no_discriminator"]
    assert all(np.isfinite(float(row["mse"])) for row in table)


def test_ablate_rejects_unknown_preset(small_cfg, small_video):
    with pytest.raises(ConfigError):
        apla.ablate(small_video, small_cfg, presets=["no_such_thing"])


def test_compare_vgt_variants_reports_equal_mask_counts(tmp_path, small_video):
    rows = apla.compare_vgt_variants(small_video, make_small_config(steps=1), out_csv=tmp_path / "vgt.csv")
    counts = {row[0]: row[2] for row in rows}
    assert counts["pure"] == counts["pure-EN"]
    assert counts["hyper"] == counts["hyper-EN"] > counts["pure"]


@pytest.mark.slow
def test_desk_scale_run_learns_the_reference():
    cfg = make_small_config(steps=500, F=8, H=32, W=32, T=50, vgt_width=32, vgt_heads=4, unet_channels=16)
    video = gen_video(SceneSpec(kind="moving_square", F=8, H=32, W=32))
    result = apla.fine_tune(video, 1, cfg)
    mses = [rec.mse for rec in result.records]
    assert np.mean(mses[-50:]) <= 0.5 * np.mean(mses[:50])
    assert psnr(result.trainer.sample(), video) >= 25.0


def test_checkpoint_carries_its_codec(small_cfg, small_video):
    ckpt = apla.fine_tune(small_video, 1, small_cfg).checkpoint
    reference = apla.sample(ckpt, prompt_id=1, guidance_w=1.0)
    reseeded = apla.sample(ckpt, prompt_id=1, guidance_w=1.0, cfg=small_cfg.with_overrides(seed=7))
    assert np.array_equal(reference, reseeded)
    assert np.abs(reseeded - small_video).max() < 0.1


def test_checkpoint_rejects_a_different_model_config(small_cfg, small_video):
    ckpt = apla.fine_tune(small_video, 1, small_cfg).checkpoint
    with pytest.raises(ConfigError):
        apla.AplaTrainer.from_checkpoint(ckpt, small_cfg.with_overrides(T=20))
    with pytest.raises(ConfigError):
        apla.AplaTrainer.from_checkpoint(ckpt, small_cfg.with_overrides(variant="hyper"))


def test_logged_ratio_matches_checkpointed_networks(tmp_path, small_video):
    cfg = make_small_config(steps=4)
    trainer = apla.AplaTrainer(cfg, small_video)
    trainer.train(3)
    restored = apla.AplaTrainer.from_checkpoint(checkpoint.from_bytes(checkpoint.to_bytes(trainer.to_checkpoint())))

    # Replay the draws of the next step on the restored copy before training continues.
    rng = restored.rng
    t = int(rng.integers(1, cfg.T + 1))
    noise = rng.standard_normal(restored.z0.shape).astype(np.float32)
    prompt_id = 0 if rng.random() < config.PROMPT_DROP_PROB else cfg.prompt_id
    z_t, _ = q_sample(restored.schedule, restored.z0, t, noise)
    pred = combine(restored.unet, z_t, z_t, t, prompt_id, vgt=restored.vgt)
    recomputed = np.linalg.norm(pred.vgt_out.data.astype(np.float64)) / np.linalg.norm(pred.unet_out.data.astype(np.float64))

    trainer.train(1)
    log = trainer.write_log(tmp_path / config.TRAIN_LOG_FILENAME)
    step, logged = ratio_trajectory(log)[-1]
    assert step == 3
    assert logged > 0.0
    assert logged == pytest.approx(recomputed, rel=1e-6)


@pytest.mark.slow
def test_vgt_comparison_at_desk_scale():
    cfg = make_small_config(steps=300, F=8, H=32, W=32, T=50, vgt_width=32, vgt_heads=4, unet_channels=16)
    video = gen_video(SceneSpec(kind="moving_square", F=8, H=32, W=32))
    rows = {row[0]: row for row in apla.compare_vgt_variants(video, cfg)}
    assert set(rows) == {"pure", "pure-EN", "hyper", "hyper-EN"}
    assert all(np.isfinite(row[3]) for row in rows.values())
    if rows["hyper"][3] < rows["pure"][3]:
        pytest.xfail(f"hyper PSNR {rows['hyper'][3]:.2f} below pure {rows['pure'][3]:.2f}; ordering is reported, not enforced")
