import argparse
import os
import subprocess
import sys
from pathlib import Path

# Add the project root to the Python path to ensure all imports work correctly.
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from app.core import config
from app.core import trainer as apla
from app.core.checkpoint import load_checkpoint
from app.core.errors import ConfigError, ContractError, DimensionError, FormatError, NumericalError
from app.core.metrics import export_ratio_trajectory, video_metrics
from app.utils import gradcheck
from app.utils.synthetic_generator import video_io
from app.utils.synthetic_generator.scene_generator import SceneSpec, gen_video

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def setup_directories():
    """Ensures that the main 'app/data' directory exists before the app starts."""
    print("[INFO]: Setting up data directory...")
    data_dir = Path(__file__).parent / "data"
    data_dir.mkdir(exist_ok=True)
    print(f"  -> Ensuring '{data_dir}' exists.")


def run_streamlit_app():
    """Runs the Streamlit UI from the project root so module paths and data folders resolve."""
    try:
        project_root = Path(__file__).resolve().parent.parent
        ui_script_path = project_root / "app" / "ui" / "main_ui.py"

        print("=" * 50)
        print(f"  Project Root: {project_root}")
        print(f"  Launching UI: {ui_script_path}")
        print("=" * 50)

        subprocess.run(
            [sys.executable, "-m", "streamlit", "run", str(ui_script_path)],
            check=True,
            cwd=project_root
        )
    except FileNotFoundError:
        print("\n[ERROR] Could not run Streamlit.")
        print("Please ensure Streamlit is installed in your virtual environment.")
        return EXIT_IO
    except subprocess.CalledProcessError as e:
        print(f"\n[ERROR] The Streamlit app exited with an error: {e}")
        return EXIT_IO
    return EXIT_OK


# --- Config assembly ---
def build_config(args) -> config.TrainConfig:
    cfg = config.load_config(args.config) if getattr(args, "config", None) else config.TrainConfig()
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "steps", None) is not None:
        overrides.append(f"steps = {args.steps}")
    if getattr(args, "long_run", False):
        overrides.append(f"steps = {config.LONG_RUN_STEPS}")
    if overrides:
        cfg = config.parse_config_text("\n".join(overrides), cfg)
    return cfg


def load_or_generate_video(path, cfg: config.TrainConfig):
    if path:
        return video_io.read_vten(path)
    print("[WARNING]: No --video given, using a generated moving_square scene.")
    return gen_video(SceneSpec(kind="moving_square", F=cfg.F, H=cfg.H, W=cfg.W, channels=cfg.C, seed=cfg.seed))


# --- Subcommands ---
def cmd_gen_data(args) -> int:
    spec = SceneSpec(kind=args.kind, F=args.frames, H=args.height, W=args.width,
                     velocity=(args.vx, args.vy), seed=args.seed, size=args.size, channels=args.channels)
    video = gen_video(spec)
    video_io.write_vten(video, args.out)
    if args.frames_dir:
        video_io.export_frames(video, args.frames_dir)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_config(args)
    if args.prompt_id is not None:
        cfg = cfg.with_overrides(prompt_id=args.prompt_id)
    video = load_or_generate_video(args.video, cfg)
    apla.fine_tune(video, cfg.prompt_id, cfg, out_dir=args.out)
    return EXIT_OK


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    trainer = apla.AplaTrainer.from_checkpoint(ckpt)
    cfg = trainer.cfg.with_overrides(
        prompt_id=trainer.cfg.prompt_id if args.prompt_id is None else args.prompt_id,
        guidance_w=trainer.cfg.guidance_w if args.guidance is None else args.guidance,
        generation_mode=args.generation or trainer.cfg.generation_mode)
    video = trainer.sample(prompt_id=cfg.prompt_id, guidance_w=cfg.guidance_w, generation_mode=cfg.generation_mode)
    out = Path(args.out)
    config.save_config(cfg, out / config.CONFIG_ECHO_FILENAME)
    video_io.write_vten(video, out / "sample.vten")
    video_io.export_frames(video, out / config.SAMPLE_FRAMES_SUBDIR)
    return EXIT_OK


def cmd_metrics(args) -> int:
    video = video_io.read_vten(args.video)
    reference = video_io.read_vten(args.reference) if args.reference else None
    row = video_metrics(video, reference)
    for key, value in row.items():
        print(f"{key},{value}")
    if args.out:
        video_io.write_csv(args.out, ["metric", "value"], list(row.items()))
        print(f"[SUCCESS]: Metrics written to {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = build_config(args)
    video = load_or_generate_video(args.video, cfg)
    out = Path(args.out)
    config.save_config(cfg, out / config.CONFIG_ECHO_FILENAME)
    apla.ablate(video, cfg, presets=args.presets, out_csv=out / "ablation.csv")
    return EXIT_OK


def cmd_compare_vgt(args) -> int:
    cfg = build_config(args)
    video = load_or_generate_video(args.video, cfg)
    out = Path(args.out)
    config.save_config(cfg, out / config.CONFIG_ECHO_FILENAME)
    apla.compare_vgt_variants(video, cfg, out_csv=out / "vgt_variants.csv")
    return EXIT_OK


def cmd_ratio(args) -> int:
    export_ratio_trajectory(args.log, args.out, plot=not args.no_plot)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_suite(seed=args.seed, include_networks=not args.ops_only)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"[ERROR]: Gradient check failed for: {', '.join(failed)}")
        return EXIT_NUMERICAL
    print(f"[SUCCESS]: All {len(results)} gradient checks passed.")
    return EXIT_OK


def cmd_ui(args) -> int:
    setup_directories()
    return run_streamlit_app()


def _add_config_args(parser):
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    parser.add_argument("--steps", type=int, help="number of fine-tuning steps")
    parser.add_argument("--long-run", action="store_true", help=f"use the long budget of {config.LONG_RUN_STEPS} steps")
    parser.add_argument("--video", help=".vten reference video (default: generated moving square)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apla", description="Single-video diffusion fine-tuning with a video perturbation transformer.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic scene to a .vten file")
    p.add_argument("--kind", default="moving_square", choices=["moving_square", "bouncing_ball", "static"])
    p.add_argument("--frames", type=int, default=config.DEFAULT_FRAMES)
    p.add_argument("--height", type=int, default=config.DEFAULT_HEIGHT)
    p.add_argument("--width", type=int, default=config.DEFAULT_WIDTH)
    p.add_argument("--vx", type=int, default=1)
    p.add_argument("--vy", type=int, default=0)
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--channels", type=int, default=config.DEFAULT_CHANNELS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--frames-dir", help="also export PPM frames here")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fine-tune on one video")
    _add_config_args(p)
    p.add_argument("--prompt-id", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample a video from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompt-id", type=int)
    p.add_argument("--guidance", type=float)
    p.add_argument("--generation", action="store_true", help="start from seeded noise instead of the inverted reference")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("metrics", help="FCI (and PSNR against a reference) of a video")
    p.add_argument("--video", required=True)
    p.add_argument("--reference")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("ablate", help="run the ablation presets and write a CSV table")
    _add_config_args(p)
    p.add_argument("--presets", nargs="+", choices=list(apla.ABLATION_PRESETS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("compare-vgt", help="train pure / hyper VGT variants with and without masking")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare_vgt)

    p = sub.add_parser("ratio", help="export the perturbation-ratio trajectory of a training log")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_ratio)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ops-only", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ui", help="launch the Streamlit interface")
    p.set_defaults(func=cmd_ui)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, DimensionError, ContractError) as e:
        print(f"[ERROR]: {e}")
        return EXIT_USAGE
    except NumericalError as e:
        print(f"[ERROR]: {e} {e.record}")
        return EXIT_NUMERICAL
    except OSError as e:
        print(f"[ERROR]: {e}")
        return EXIT_IO


if __name__ == '__main__':
    sys.exit(main())
