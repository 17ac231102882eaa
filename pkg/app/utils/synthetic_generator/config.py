# Configuration file for the synthetic video generator

OUTPUT_VIDEO_DIR = "app/data/input_videos"
VIDEO_EXTENSION = ".vten"
FRAME_PATTERN = "frame_{:04d}.ppm"

SCENE_KINDS = ("moving_square", "bouncing_ball", "static")
DEFAULT_OBJECT_SIZE = 8
DEFAULT_VELOCITY = (1, 0)  # (vx, vy) in pixels per frame
BACKGROUND_LEVEL = 0.1
OBJECT_LEVEL_RANGE = (0.7, 1.0)

# --- .vten tensor files ---
VTEN_MAGIC = b"VTEN"
VTEN_VERSION = 1
