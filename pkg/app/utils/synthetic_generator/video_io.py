"""
On-disk formats: .vten tensor files, per-frame binary PPM exports and the
CSV tables written by training, metrics and ablations.

.vten layout (little-endian): b"VTEN", u16 version, u16 rank,
rank x u32 extents, float32 payload in row-major order.
"""
import csv
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from app.core.errors import FormatError
from app.utils.synthetic_generator import config


def write_vten(array: np.ndarray, path: str | Path) -> str:
    array = np.asarray(array)
    path = Path(path)
    header = config.VTEN_MAGIC + struct.pack("<HH", config.VTEN_VERSION, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(header + np.ascontiguousarray(array, dtype="<f4").tobytes())
    except OSError as e:
        raise OSError(f"could not write tensor file '{path}': {e}") from e
    print(f"[SUCCESS]: Saved tensor {array.shape} to {path}")
    return str(path)


def read_vten(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise OSError(f"could not read tensor file '{path}': {e}") from e
    if data[:4] != config.VTEN_MAGIC:
        raise FormatError(f"'{path}' is not a .vten file (bad magic)")
    if len(data) < 8:
        raise FormatError(f"'{path}' is truncated")
    version, rank = struct.unpack("<HH", data[4:8])
    if version != config.VTEN_VERSION:
        raise FormatError(f"'{path}' has unsupported .vten version {version}")
    offset = 8 + 4 * rank
    if len(data) < offset:
        raise FormatError(f"'{path}' is truncated inside the header")
    shape = struct.unpack(f"<{rank}I", data[8:offset])
    expected = int(np.prod(shape, dtype=np.int64)) * 4
    if len(data) - offset != expected:
        raise FormatError(f"'{path}' payload has {len(data) - offset} bytes, expected {expected} for shape {shape}")
    return np.frombuffer(data[offset:], dtype="<f4").reshape(shape).astype(np.float32)


def _frames_of(video: np.ndarray) -> np.ndarray:
    video = np.asarray(video)
    if video.ndim == 5:
        if video.shape[0] != 1:
            raise FormatError(f"frame export takes a single video, got batch of {video.shape[0]}")
        video = video[0]
    if video.ndim != 4 or video.shape[1] not in (1, 3):
        raise FormatError(f"expected F x C x H x W with C in (1, 3), got {video.shape}")
    return video


def export_frames(video: np.ndarray, out_dir: str | Path) -> list:
    """Writes frame_0000.ppm ... as 8-bit binary PPM; grayscale is replicated to RGB."""
    frames = _frames_of(video)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for index, frame in enumerate(frames):
        rgb = np.repeat(frame, 3, axis=0) if frame.shape[0] == 1 else frame
        pixels = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
        path = out_dir / config.FRAME_PATTERN.format(index)
        try:
            Image.fromarray(pixels).save(path, format="PPM")
        except OSError as e:
            raise OSError(f"could not write frame '{path}': {e}") from e
        paths.append(str(path))
    print(f"[SUCCESS]: Exported {len(paths)} frames to {out_dir}")
    return paths


def import_frames(frame_dir: str | Path, channels: int = 1) -> np.ndarray:
    """Reads frame_*.ppm back into a 1 x F x C x H x W float32 video."""
    paths = sorted(Path(frame_dir).glob("frame_*.ppm"))
    if not paths:
        raise FormatError(f"no frame_*.ppm files in '{frame_dir}'")
    frames = []
    for path in paths:
        with Image.open(path) as image:
            pixels = np.asarray(image.convert("RGB"), dtype=np.float32) / 255.0
        frames.append(pixels.transpose(2, 0, 1)[:channels])
    return np.stack(frames)[None].astype(np.float32)


def write_csv(path: str | Path, header: list, rows: list) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)
    return str(path)


def read_csv(path: str | Path) -> list:
    """Returns the rows as dicts keyed by the header."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as handle:
            return list(csv.DictReader(handle))
    except OSError as e:
        raise OSError(f"could not read table '{path}': {e}") from e


def read_csv_header(path: str | Path) -> list:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        return next(csv.reader(handle), [])
