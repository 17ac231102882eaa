"""
Evaluation metrics: Horn-Schunck optical flow, the flow consistency index
(FCI), PSNR and the VGT / denoiser perturbation-ratio trajectory.

Flow is computed on a periodic domain (wrap-around boundaries), so
translating both frames circularly translates the flow field exactly.
"""
import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from app.core import config
from app.core.errors import ContractError, DimensionError, FormatError
from app.utils.synthetic_generator import video_io

# Neighbour average used by the Horn-Schunck update.
HS_AVERAGE_KERNEL = np.array([[1 / 12, 1 / 6, 1 / 12],
                              [1 / 6, 0.0, 1 / 6],
                              [1 / 12, 1 / 6, 1 / 12]])
CENTRAL_DIFF = np.array([-0.5, 0.0, 0.5])
INTENSITY_SCALE = 255.0  # flow runs on 8-bit intensity levels


@dataclass
class FlowPair:
    u: np.ndarray
    v: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


def to_grayscale(frame: np.ndarray) -> np.ndarray:
    """C x H x W (or H x W) -> H x W by channel mean."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 3:
        return frame.mean(axis=0)
    if frame.ndim != 2:
        raise DimensionError(f"expected a C x H x W or H x W frame, got {frame.shape}")
    return frame


def optical_flow(frame_a: np.ndarray, frame_b: np.ndarray, iterations: int = config.HS_ITERATIONS,
                 smoothness: float = config.HS_SMOOTHNESS) -> FlowPair:
    a, b = to_grayscale(frame_a), to_grayscale(frame_b)
    if a.shape != b.shape:
        raise DimensionError(f"frames differ in shape: {a.shape} vs {b.shape}")
    a, b = a * INTENSITY_SCALE, b * INTENSITY_SCALE

    ix = 0.5 * (ndimage.correlate1d(a, CENTRAL_DIFF, axis=1, mode="wrap")
                + ndimage.correlate1d(b, CENTRAL_DIFF, axis=1, mode="wrap"))
    iy = 0.5 * (ndimage.correlate1d(a, CENTRAL_DIFF, axis=0, mode="wrap")
                + ndimage.correlate1d(b, CENTRAL_DIFF, axis=0, mode="wrap"))
    it = b - a
    denom = smoothness ** 2 + ix ** 2 + iy ** 2

    u = np.zeros_like(a)
    v = np.zeros_like(a)
    for _ in range(iterations):
        u_avg = ndimage.convolve(u, HS_AVERAGE_KERNEL, mode="wrap")
        v_avg = ndimage.convolve(v, HS_AVERAGE_KERNEL, mode="wrap")
        der = (ix * u_avg + iy * v_avg + it) / denom
        u = u_avg - ix * der
        v = v_avg - iy * der
    return FlowPair(u=u, v=v)


def _frames(video: np.ndarray) -> np.ndarray:
    video = np.asarray(video)
    if video.ndim == 5:
        if video.shape[0] != 1:
            raise DimensionError(f"metrics take a single video, got batch of {video.shape[0]}")
        video = video[0]
    if video.ndim != 4:
        raise DimensionError(f"expected F x C x H x W video, got {video.shape}")
    return video


def video_flow(video: np.ndarray) -> list:
    frames = _frames(video)
    return [optical_flow(frames[i], frames[i + 1]) for i in range(len(frames) - 1)]


def flow_deviation(flow: FlowPair, size: int = config.FCI_NEIGHBOURHOOD) -> np.ndarray:
    """Per-pixel L2 distance between the flow vector and its neighbourhood mean."""
    u_mean = ndimage.uniform_filter(flow.u, size=size, mode="wrap")
    v_mean = ndimage.uniform_filter(flow.v, size=size, mode="wrap")
    return np.hypot(flow.u - u_mean, flow.v - v_mean)


def fci(video: np.ndarray) -> float:
    frames = _frames(video)
    if frames.shape[0] < 2:
        raise ContractError(f"FCI needs at least 2 frames, got {frames.shape[0]}")
    return float(np.mean([flow_deviation(flow).mean() for flow in video_flow(frames)]))


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"videos differ in shape: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) for signals in [0, 1], capped for (near) identical inputs."""
    err = mse(a, b)
    if err < config.PSNR_MIN_MSE:
        return config.PSNR_CAP_DB
    return -10.0 * math.log10(err)


def ratio_trajectory(log_path: str | Path) -> list:
    """(step, norm_ratio) pairs from a training log CSV."""
    header = video_io.read_csv_header(log_path)
    for column in ("step", "norm_ratio"):
        if column not in header:
            raise FormatError(f"training log '{log_path}' has no '{column}' column")
    return [(int(row["step"]), float(row["norm_ratio"])) for row in video_io.read_csv(log_path)]


def plot_series(points: list, path: str | Path, title: str = "norm_ratio", size: tuple = (480, 320)) -> str:
    """Renders a line plot of (x, y) points to a PNG with OpenCV."""
    width, height = size
    margin = 40
    canvas = np.full((height, width, 3), 255, dtype=np.uint8)
    cv2.rectangle(canvas, (margin, margin // 2), (width - margin // 2, height - margin), (200, 200, 200), 1)
    if points:
        xs = np.array([p[0] for p in points], dtype=np.float64)
        ys = np.array([p[1] for p in points], dtype=np.float64)
        x_span = max(xs.max() - xs.min(), 1e-12)
        y_lo, y_hi = float(ys.min()), float(ys.max())
        y_span = max(y_hi - y_lo, 1e-12)
        px = margin + (xs - xs.min()) / x_span * (width - 1.5 * margin)
        py = (height - margin) - (ys - y_lo) / y_span * (height - 1.5 * margin)
        curve = np.stack([px, py], axis=1).round().astype(np.int32).reshape(-1, 1, 2)
        cv2.polylines(canvas, [curve], isClosed=False, color=(200, 60, 20), thickness=1, lineType=cv2.LINE_AA)
        cv2.putText(canvas, f"{y_hi:.3g}", (2, margin // 2 + 10), cv2.FONT_HERSHEY_SIMPLEX, 0.35, (0, 0, 0), 1)
        cv2.putText(canvas, f"{y_lo:.3g}", (2, height - margin), cv2.FONT_HERSHEY_SIMPLEX, 0.35, (0, 0, 0), 1)
    cv2.putText(canvas, title, (margin, height - 12), cv2.FONT_HERSHEY_SIMPLEX, 0.45, (0, 0, 0), 1)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), canvas):
        raise OSError(f"could not write plot '{path}'")
    return str(path)


def export_ratio_trajectory(log_path: str | Path, out_dir: str | Path, plot: bool = True) -> list:
    points = ratio_trajectory(log_path)
    out_dir = Path(out_dir)
    video_io.write_csv(out_dir / "ratio_trajectory.csv", ["step", "norm_ratio"], points)
    if plot:
        plot_series(points, out_dir / "ratio_trajectory.png")
    print(f"[SUCCESS]: Ratio trajectory ({len(points)} steps) written to {out_dir}")
    return points


def flow_to_image(flow: FlowPair) -> np.ndarray:
    """HSV flow coding: direction -> hue, magnitude -> value. Returns H x W x 3 uint8 RGB."""
    magnitude, angle = cv2.cartToPolar(flow.u.astype(np.float32), flow.v.astype(np.float32), angleInDegrees=True)
    hsv = np.zeros(flow.u.shape + (3,), dtype=np.uint8)
    hsv[..., 0] = (angle / 2).astype(np.uint8)
    hsv[..., 1] = 255
    hsv[..., 2] = cv2.normalize(magnitude, None, 0, 255, cv2.NORM_MINMAX).astype(np.uint8)
    return cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)


def video_metrics(video: np.ndarray, reference: np.ndarray | None = None) -> dict:
    """FCI of `video` plus MSE/PSNR against `reference` when given."""
    row = {"fci": fci(video)}
    if reference is not None:
        row["mse"] = mse(video, reference)
        row["psnr"] = psnr(video, reference)
    return row
