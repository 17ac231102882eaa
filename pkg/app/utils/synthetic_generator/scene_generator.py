from dataclasses import dataclass

import cv2
import numpy as np

from app.core.errors import ConfigError
from app.utils.synthetic_generator import config


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "moving_square"
    F: int = 8
    H: int = 32
    W: int = 32
    velocity: tuple = config.DEFAULT_VELOCITY
    seed: int = 0
    size: int = config.DEFAULT_OBJECT_SIZE
    channels: int = 1

    def validate(self):
        if self.kind not in config.SCENE_KINDS:
            raise ConfigError(f"unknown scene kind '{self.kind}', expected one of {config.SCENE_KINDS}")
        if self.F < 1 or self.H < 1 or self.W < 1 or self.channels < 1:
            raise ConfigError(f"scene extents must be positive, got F={self.F} H={self.H} W={self.W}")
        if self.size < 1 or self.size > min(self.H, self.W):
            raise ConfigError(f"object size {self.size} does not fit a {self.H}x{self.W} frame")
        if len(self.velocity) != 2:
            raise ConfigError(f"velocity must be (vx, vy), got {self.velocity}")


class SyntheticVideoGenerator:
    """Renders deterministic toy scenes as 1 x F x C x H x W float32 videos in [0, 1]."""

    def __init__(self, spec: SceneSpec):
        spec.validate()
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.level = float(self.rng.uniform(*config.OBJECT_LEVEL_RANGE))

    def _blank(self) -> np.ndarray:
        return np.full((self.spec.H, self.spec.W), config.BACKGROUND_LEVEL, dtype=np.float32)

    def _start(self) -> tuple:
        s = self.spec
        x = int(self.rng.integers(0, s.W - s.size + 1))
        y = int(self.rng.integers(0, s.H - s.size + 1))
        return x, y

    def _draw_square(self, x: int, y: int) -> np.ndarray:
        frame = self._blank()
        size = self.spec.size
        cv2.rectangle(frame, (x, y), (x + size - 1, y + size - 1), self.level, thickness=-1)
        return frame

    def _moving_square(self) -> list:
        # Periodic motion: frame f is frame 0 rolled by f * velocity.
        vx, vy = (int(v) for v in self.spec.velocity)
        first = self._draw_square(*self._start())
        return [np.roll(first, (f * vy, f * vx), axis=(0, 1)) for f in range(self.spec.F)]

    def _bouncing_ball(self) -> list:
        s = self.spec
        radius = s.size // 2
        x, y = self._start()
        x, y = float(x + radius), float(y + radius)
        vx, vy = (float(v) for v in s.velocity)
        lo_x, hi_x = radius, s.W - 1 - radius
        lo_y, hi_y = radius, s.H - 1 - radius
        frames = []
        for _ in range(s.F):
            frame = self._blank()
            cv2.circle(frame, (int(round(x)), int(round(y))), radius, self.level, thickness=-1)
            frames.append(frame)
            x, y = x + vx, y + vy
            # Reflect at the borders so the ball never leaves the frame.
            if x < lo_x or x > hi_x:
                vx = -vx
                x = min(max(2 * lo_x - x if x < lo_x else 2 * hi_x - x, lo_x), hi_x)
            if y < lo_y or y > hi_y:
                vy = -vy
                y = min(max(2 * lo_y - y if y < lo_y else 2 * hi_y - y, lo_y), hi_y)
        return frames

    def _static(self) -> list:
        frame = self._draw_square(*self._start())
        ramp = np.linspace(0.0, 0.2, self.spec.W, dtype=np.float32)
        frame = np.clip(frame + ramp[None, :], 0.0, 1.0)
        return [frame.copy() for _ in range(self.spec.F)]

    def generate(self) -> np.ndarray:
        s = self.spec
        print(f"[INFO]: Rendering {s.kind} scene ({s.F} frames, {s.H}x{s.W}, seed {s.seed})")
        frames = {"moving_square": self._moving_square,
                  "bouncing_ball": self._bouncing_ball,
                  "static": self._static}[s.kind]()
        video = np.stack(frames)[:, None, :, :]
        if s.channels > 1:
            tint = self.rng.uniform(0.8, 1.0, size=s.channels).astype(np.float32)
            video = np.clip(video * tint[None, :, None, None], 0.0, 1.0)
        return np.ascontiguousarray(video[None], dtype=np.float32)


def gen_video(spec: SceneSpec) -> np.ndarray:
    return SyntheticVideoGenerator(spec).generate()
