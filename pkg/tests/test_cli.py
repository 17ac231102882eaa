import numpy as np
import pytest

from app import main as cli
from app.core import config
from app.core.checkpoint import load_checkpoint
from app.core.errors import NumericalError
from app.utils.synthetic_generator import video_io
from tests.conftest import make_small_config


@pytest.fixture
def config_file(tmp_path):
    return config.save_config(make_small_config(steps=1), tmp_path / "small.txt")


def test_gen_data_and_metrics_on_static_video(tmp_path, capsys):
    out = tmp_path / "static.vten"
    code = cli.main(["gen-data", "--kind", "static", "--frames", "3", "--height", "16", "--width", "16",
                     "--out", str(out), "--frames-dir", str(tmp_path / "frames")])
    assert code == 0
    assert len(list((tmp_path / "frames").glob("*.ppm"))) == 3

    assert cli.main(["metrics", "--video", str(out), "--reference", str(out), "--out", str(tmp_path / "m.csv")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert "fci,0.0" in lines
    assert "psnr,100.0" in lines


def test_train_zero_steps_then_sample(tmp_path, config_file):
    run = tmp_path / "run"
    assert cli.main(["train", "--config", config_file, "--steps", "0", "--out", str(run)]) == 0
    ckpt = load_checkpoint(run / config.CHECKPOINT_FILENAME)
    assert ckpt.meta["step"] == 0
    assert config.parse_config_text((run / config.CONFIG_ECHO_FILENAME).read_text()).steps == 0

    out = tmp_path / "sample"
    assert cli.main(["sample", "--checkpoint", str(run / config.CHECKPOINT_FILENAME), "--guidance", "1.0",
                     "--out", str(out)]) == 0
    video = video_io.read_vten(out / "sample.vten")
    cfg = make_small_config()
    assert video.shape == (1, cfg.F, cfg.C, cfg.H, cfg.W)
    assert len(list((out / config.SAMPLE_FRAMES_SUBDIR).glob("*.ppm"))) == cfg.F


def test_train_writes_log_and_ratio(tmp_path, config_file):
    run = tmp_path / "run"
    assert cli.main(["train", "--config", config_file, "--set", "steps=2", "--out", str(run)]) == 0
    assert len(video_io.read_csv(run / config.TRAIN_LOG_FILENAME)) == 2
    assert cli.main(["ratio", "--log", str(run / config.TRAIN_LOG_FILENAME), "--out", str(tmp_path / "r"),
                     "--no-plot"]) == 0
    assert (tmp_path / "r" / "ratio_trajectory.csv").exists()


def test_ablate_subset(tmp_path, config_file):
    assert cli.main(["ablate", "--config", config_file, "--presets", "full", "no_vgt", "--out", str(tmp_path)]) == 0
    rows = video_io.read_csv(tmp_path / "ablation.csv")
    assert [row["variant"] for row in rows] == ["full", "no_vgt"]


def test_bad_config_is_a_usage_error(tmp_path, config_file):
    assert cli.main(["train", "--config", config_file, "--set", "nonsense=1", "--out", str(tmp_path)]) == 2
    assert cli.main(["train", "--config", config_file, "--set", "H=30", "--out", str(tmp_path)]) == 2


def test_unknown_flag_exits_with_usage_code():
    with pytest.raises(SystemExit) as info:
        cli.main(["train", "--no-such-flag"])
    assert info.value.code == 2


def test_corrupt_input_is_a_usage_error(tmp_path):
    bad = tmp_path / "bad.vten"
    bad.write_bytes(b"not a tensor")
    assert cli.main(["metrics", "--video", str(bad)]) == 2


def test_missing_file_is_an_io_error(tmp_path):
    assert cli.main(["metrics", "--video", str(tmp_path / "absent.vten")]) == 1


def test_numerical_failure_exit_code(tmp_path, config_file, monkeypatch):
    def explode(*args, **kwargs):
        raise NumericalError("non-finite values produced by 'log'", {"step": 0})

    monkeypatch.setattr(cli.apla, "fine_tune", explode)
    assert cli.main(["train", "--config", config_file, "--out", str(tmp_path)]) == 3


def test_gradcheck_ops_only():
    assert cli.main(["gradcheck", "--ops-only"]) == 0


def test_generated_default_video_matches_config(config_file):
    cfg = config.load_config(config_file)
    video = cli.load_or_generate_video(None, cfg)
    assert video.shape == (1, cfg.F, cfg.C, cfg.H, cfg.W)
    assert np.isfinite(video).all()
