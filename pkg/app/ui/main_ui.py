import os
import sys
from pathlib import Path

import numpy as np
import streamlit as st
from PIL import Image

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../../')))

from app.core import config
from app.core import metrics
from app.core import trainer as apla
from app.core.errors import AplaError
from app.utils.synthetic_generator import config as scene_config
from app.utils.synthetic_generator import video_io
from app.utils.synthetic_generator.scene_generator import SceneSpec, gen_video


def frame_strip(video: np.ndarray, width: int = 96) -> list[Image.Image]:
    """Converts a 1 x F x C x H x W video into displayable PIL frames."""
    frames = video[0] if video.ndim == 5 else video
    images = []
    for frame in frames:
        rgb = np.repeat(frame, 3, axis=0) if frame.shape[0] == 1 else frame
        pixels = (np.clip(rgb, 0.0, 1.0) * 255).round().astype(np.uint8).transpose(1, 2, 0)
        image = Image.fromarray(pixels)
        images.append(image.resize((width, width * image.height // image.width), Image.NEAREST))
    return images


def show_video(video: np.ndarray, caption: str):
    st.markdown(f"##### {caption}")
    images = frame_strip(video)
    st.image(images, caption=[f"f{i}" for i in range(len(images))])


def render_scene_generator_page():
    """Renders the synthetic video generator."""
    st.header("Synthetic Video Generator")
    st.write("Render a deterministic toy scene to use as the reference video for fine-tuning.")

    st.sidebar.header("Scene Settings")
    kind = st.sidebar.selectbox("Scene", scene_config.SCENE_KINDS)
    frames = st.sidebar.slider("Frames", 2, 24, config.DEFAULT_FRAMES)
    size = st.sidebar.select_slider("Frame size", options=[16, 32, 64], value=config.DEFAULT_HEIGHT)
    obj = st.sidebar.slider("Object size", 2, 16, scene_config.DEFAULT_OBJECT_SIZE)
    vx = st.sidebar.slider("Velocity x", -3, 3, 1)
    vy = st.sidebar.slider("Velocity y", -3, 3, 0)
    seed = st.sidebar.number_input("Seed", value=0, step=1)

    if st.button("Generate Video"):
        try:
            spec = SceneSpec(kind=kind, F=frames, H=size, W=size, velocity=(vx, vy), seed=int(seed), size=obj)
            st.session_state['scene_video'] = gen_video(spec)
            st.session_state['scene_name'] = f"{kind}_{frames}f_{size}px_seed{int(seed)}"
        except AplaError as e:
            st.error(f"Invalid scene: {e}")

    if 'scene_video' in st.session_state:
        video = st.session_state['scene_video']
        show_video(video, "Preview")
        st.metric("FCI", f"{metrics.fci(video):.4f}")
        if st.button("Save as .vten"):
            out = Path(scene_config.OUTPUT_VIDEO_DIR) / (st.session_state['scene_name'] + scene_config.VIDEO_EXTENSION)
            st.success(f"Saved to '{video_io.write_vten(video, out)}'.")


def render_fine_tuning_page():
    """Renders fine-tuning, sampling and training curves."""
    st.header("APLA Fine-Tuning")

    st.sidebar.header("Training Settings")
    videos = sorted(Path(scene_config.OUTPUT_VIDEO_DIR).glob("*" + scene_config.VIDEO_EXTENSION))
    choice = st.sidebar.selectbox("Reference video", ["(generated moving square)"] + [p.name for p in videos])
    variant = st.sidebar.selectbox("VGT variant", config.VARIANTS)
    masked = st.sidebar.checkbox("Masked attention", value=True)
    steps = st.sidebar.number_input("Steps", 0, config.LONG_RUN_STEPS, 200, step=50)
    lr = st.sidebar.number_input("Learning rate", value=config.DEFAULT_LEARNING_RATE, format="%.0e")

    st.sidebar.subheader("Loss Weights")
    alpha = st.sidebar.slider("alpha (MSE)", 0.0, 1.0, config.DEFAULT_ALPHA)
    beta = st.sidebar.slider("beta (L1)", 0.0, 1.0, config.DEFAULT_BETA)
    gamma = st.sidebar.slider("gamma (perceptual)", 0.0, 1.0, config.DEFAULT_GAMMA)
    lam = st.sidebar.slider("lambda (adversarial)", 0.0, 1.0, config.DEFAULT_LAMBDA)

    st.sidebar.subheader("Ablations")
    disable_vgt = st.sidebar.checkbox("Disable VGT")
    disable_gan = st.sidebar.checkbox("Disable discriminator")
    mse_only = st.sidebar.checkbox("MSE only")

    st.sidebar.subheader("Sampling")
    prompt_id = st.sidebar.slider("Prompt id", 1, config.N_PROMPTS - 1, 1)
    guidance = st.sidebar.slider("Guidance weight", 0.0, 5.0, config.DEFAULT_GUIDANCE)
    generation = st.sidebar.checkbox("Generate from noise")

    if st.button("Fine-Tune and Sample"):
        try:
            cfg = config.TrainConfig(steps=int(steps), lr=float(lr), alpha=alpha, beta=beta, gamma=gamma, lam=lam,
                                     variant=variant, masked=masked, disable_vgt=disable_vgt,
                                     disable_gan=disable_gan, mse_only=mse_only, guidance_w=guidance,
                                     generation_mode=generation)
            if choice.endswith(scene_config.VIDEO_EXTENSION):
                video = video_io.read_vten(Path(scene_config.OUTPUT_VIDEO_DIR) / choice)
            else:
                video = gen_video(SceneSpec(F=cfg.F, H=cfg.H, W=cfg.W))
            with st.spinner("Fine-tuning... Please wait."):
                result = apla.fine_tune(video, prompt_id, cfg)
                sampled = result.trainer.sample(prompt_id=prompt_id, guidance_w=guidance, generation_mode=generation)
            st.session_state['tune_result'] = (video, sampled, result.records)
            st.success(f"Finished {len(result.records)} steps.")
        except AplaError as e:
            st.error(f"Fine-tuning failed: {e}")

    if 'tune_result' in st.session_state:
        video, sampled, records = st.session_state['tune_result']
        show_video(video, "Reference")
        show_video(sampled, "Sampled")
        col1, col2 = st.columns(2)
        col1.metric("PSNR (dB)", f"{metrics.psnr(sampled, video[None] if video.ndim == 4 else video):.2f}")
        col2.metric("FCI", f"{metrics.fci(sampled):.4f}")
        if records:
            st.markdown("##### Losses")
            st.line_chart({"mse": [r.mse for r in records], "total": [r.total for r in records]})
            st.markdown("##### VGT / denoiser norm ratio")
            st.line_chart({"norm_ratio": [r.norm_ratio for r in records]})


def render_metrics_page():
    """Renders FCI and a flow visualisation for a stored video."""
    st.header("Video Metrics")
    uploaded_file = st.sidebar.file_uploader("Upload a .vten video", type=["vten"])
    if not uploaded_file:
        st.info("Upload a .vten file to inspect its motion consistency.")
        return
    input_dir = Path(config.INPUT_FOLDER)
    input_dir.mkdir(parents=True, exist_ok=True)
    path = input_dir / uploaded_file.name
    with open(path, "wb") as f: f.write(uploaded_file.getbuffer())
    try:
        video = video_io.read_vten(path)
        show_video(video, uploaded_file.name)
        st.metric("FCI", f"{metrics.fci(video):.4f}")
        flows = metrics.video_flow(video)
        pair = st.slider("Frame pair", 0, len(flows) - 1, 0) if len(flows) > 1 else 0
        st.markdown("##### Optical Flow (hue = direction, brightness = magnitude)")
        st.image(Image.fromarray(metrics.flow_to_image(flows[pair])).resize((256, 256), Image.NEAREST))
    except AplaError as e:
        st.error(f"Could not evaluate video: {e}")


def main():
    app_mode = st.sidebar.radio("Choose App", ["Synthetic Video Generator", "APLA Fine-Tuning", "Video Metrics"])
    if app_mode == "Synthetic Video Generator":
        render_scene_generator_page()
    elif app_mode == "APLA Fine-Tuning":
        render_fine_tuning_page()
    else:
        render_metrics_page()


if __name__ == '__main__':
    main()
