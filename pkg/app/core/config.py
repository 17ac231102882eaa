# Main configuration file for the APLA video fine-tuning application.
import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from app.core.errors import ConfigError

PROCESSING_DATA_DIR = "app/data/runs"
INPUT_FOLDER = "app/data/input_videos"

# --- Numerical precision ---
# float32 for training runs, float64 for gradient checks.
DEFAULT_PRECISION = "float32"

# --- Desk-scale video defaults ---
DEFAULT_FRAMES = 8
DEFAULT_HEIGHT = 32
DEFAULT_WIDTH = 32
DEFAULT_CHANNELS = 1
CODEC_REDUCTION = 2  # latent channels c = C * r * r

# --- Diffusion schedule ---
DEFAULT_T = 50
BETA_MIN = 1e-4
BETA_MAX = 0.02

# --- Loss weights ---
DEFAULT_ALPHA = 0.5
DEFAULT_BETA = 0.2
DEFAULT_GAMMA = 0.1
DEFAULT_LAMBDA = 0.5

# --- Training ---
DEFAULT_STEPS = 750
LONG_RUN_STEPS = 1500
DEFAULT_LEARNING_RATE = 1e-3
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
PROMPT_DROP_PROB = 0.1
LOG_EVERY = 50  # Console progress cadence in steps
TRAIN_LOG_FILENAME = "train_log.csv"
CHECKPOINT_FILENAME = "checkpoint.apla"
CONFIG_ECHO_FILENAME = "config.txt"

# --- Model sizes ---
UNET_CHANNELS = 16
TIME_EMBED_DIM = 32
PROMPT_EMBED_DIM = 16
N_PROMPTS = 4  # prompt 0 is the reserved null prompt
VGT_WIDTH = 32
VGT_HEADS = 4
VGT_SPATIAL_LAYERS = 2
VGT_TEMPORAL_LAYERS = 2
VGT_PATCH_SIZE = 4
ATTENTION_MASK_VALUE = -1e9
LAYER_NORM_EPS = 1e-5
NORM_RATIO_EPS = 1e-12

# --- Metrics ---
HS_ITERATIONS = 100
HS_SMOOTHNESS = 0.5
PSNR_CAP_DB = 100.0
PSNR_MIN_MSE = 1e-10
FCI_NEIGHBOURHOOD = 3

# --- Sampling ---
DEFAULT_GUIDANCE = 1.0
SAMPLE_FRAMES_SUBDIR = "frames"

VARIANTS = ("pure", "hyper")

# Keys that shape the trained networks and the diffusion schedule; a checkpoint
# can only be reloaded under a config that agrees on all of them.
MODEL_KEYS = ("T", "beta_min", "beta_max", "F", "H", "W", "C", "r", "variant", "masked", "disable_vgt",
              "vgt_layers_spatial", "vgt_layers_temporal", "vgt_heads", "vgt_width", "patch_size",
              "unet_channels", "n_prompts")


@dataclass
class TrainConfig:
    steps: int = DEFAULT_STEPS
    lr: float = DEFAULT_LEARNING_RATE
    batch: int = 1
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    gamma: float = DEFAULT_GAMMA
    lam: float = DEFAULT_LAMBDA
    T: int = DEFAULT_T
    beta_min: float = BETA_MIN
    beta_max: float = BETA_MAX
    F: int = DEFAULT_FRAMES
    H: int = DEFAULT_HEIGHT
    W: int = DEFAULT_WIDTH
    C: int = DEFAULT_CHANNELS
    r: int = CODEC_REDUCTION
    seed: int = 0
    variant: str = "pure"
    masked: bool = True
    disable_vgt: bool = False
    disable_gan: bool = False
    mse_only: bool = False
    vgt_layers_spatial: int = VGT_SPATIAL_LAYERS
    vgt_layers_temporal: int = VGT_TEMPORAL_LAYERS
    vgt_heads: int = VGT_HEADS
    vgt_width: int = VGT_WIDTH
    patch_size: int = VGT_PATCH_SIZE
    unet_channels: int = UNET_CHANNELS
    n_prompts: int = N_PROMPTS
    prompt_id: int = 1
    guidance_w: float = DEFAULT_GUIDANCE
    generation_mode: bool = False
    precision: str = DEFAULT_PRECISION

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.batch != 1:
            raise ConfigError("only batch = 1 is supported (single-video fine-tuning)")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}', expected one of {VARIANTS}")
        for name in ("alpha", "beta", "gamma", "lam", "lr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got '{self.precision}'")
        if self.H % self.r or self.W % self.r:
            raise ConfigError(f"H={self.H}, W={self.W} must be divisible by r={self.r}")
        h, w = self.H // self.r, self.W // self.r
        if h % self.patch_size or w % self.patch_size:
            raise ConfigError(f"latent grid {h}x{w} must be divisible by patch_size={self.patch_size}")
        if h % 4 or w % 4:
            raise ConfigError(f"latent grid {h}x{w} must be divisible by 4 for the denoiser")
        if self.vgt_width % self.vgt_heads:
            raise ConfigError("vgt_width must be divisible by vgt_heads")
        if not 1 <= self.prompt_id < self.n_prompts:
            raise ConfigError(f"prompt_id must be in [1, {self.n_prompts - 1}]")
        if self.guidance_w < 0:
            raise ConfigError("guidance_w must be >= 0")

    @property
    def latent_channels(self) -> int:
        return self.C * self.r * self.r

    @property
    def latent_hw(self) -> tuple[int, int]:
        return self.H // self.r, self.W // self.r

    def with_overrides(self, **overrides) -> "TrainConfig":
        return replace(self, **overrides)


def _field_types() -> dict:
    return {f.name: f.type for f in fields(TrainConfig)}


def _parse_value(key: str, raw: str, kind):
    kind_name = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind_name == "bool":
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind_name == "int":
            return int(raw)
        if kind_name == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"invalid value for '{key}': '{raw}'") from None


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parses the flat 'key = value' format into a TrainConfig."""
    types = _field_types()
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got '{line}'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {line_no}: unknown config key '{key}'")
        values[key] = _parse_value(key, raw, types[key])
    base = base or TrainConfig()
    return replace(base, **values)


def load_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"could not read config '{path}': {e}") from e
    return parse_config_text(text, base)


def config_to_text(cfg: TrainConfig) -> str:
    lines = []
    for name in sorted(_field_types()):
        value = getattr(cfg, name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"


def save_config(cfg: TrainConfig, path: str | Path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config_to_text(cfg), encoding="utf-8")
    return str(path)


def config_hash(cfg: TrainConfig) -> str:
    return hashlib.sha256(config_to_text(cfg).encode("utf-8")).hexdigest()


def model_mismatch(stored: TrainConfig, cfg: TrainConfig) -> list:
    """Names of the MODEL_KEYS on which two configs disagree."""
    return [key for key in MODEL_KEYS if getattr(stored, key) != getattr(cfg, key)]
