import math

import numpy as np

from app.core import config
from app.core import tensor as tn
from app.core.errors import ContractError, DimensionError, FormatError
from app.core.tensor import Tensor


class Module:
    """Base class: parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> dict:
        params = {}
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                params[full] = value
            elif isinstance(value, Module):
                params.update(value.named_parameters(full + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.update(item.named_parameters(f"{full}.{i}."))
        return params

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def freeze(self) -> "Module":
        """Turns every parameter into a constant; the module stops reporting parameters."""
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict, prefix: str = ""):
        for name, p in self.named_parameters().items():
            key = prefix + name
            if key not in state:
                raise FormatError(f"missing parameter '{key}' in state")
            value = np.asarray(state[key])
            if value.shape != p.shape:
                raise FormatError(f"parameter '{key}' has shape {value.shape}, expected {p.shape}")
            p.data = np.require(value.astype(tn.get_dtype()), requirements="C")

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _init(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) / math.sqrt(max(fan_in, 1))


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, zero_init: bool = False):
        shape = (in_features, out_features)
        self.weight = tn.parameter(np.zeros(shape) if zero_init else _init(rng, shape, in_features))
        self.bias = tn.parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        out = tn.matmul(x, self.weight)
        return out + tn.expand(self.bias, out.shape)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = tn.parameter(np.ones(dim))
        self.bias = tn.parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return tn.layer_norm(x, self.gain, self.bias, config.LAYER_NORM_EPS)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, zero_init: bool = False):
        shape = (out_ch, in_ch, kernel, kernel)
        self.weight = tn.parameter(np.zeros(shape) if zero_init else _init(rng, shape, in_ch * kernel * kernel))
        self.bias = tn.parameter(np.zeros(out_ch))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return tn.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        shape = (in_ch, out_ch, kernel, kernel)
        self.weight = tn.parameter(_init(rng, shape, in_ch * kernel * kernel // max(stride * stride, 1)))
        self.bias = tn.parameter(np.zeros(out_ch))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return tn.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose3d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: tuple, rng: np.random.Generator,
                 stride=1, padding=0):
        kernel = tuple(kernel)
        shape = (in_ch, out_ch) + kernel
        self.weight = tn.parameter(_init(rng, shape, in_ch))
        self.bias = tn.parameter(np.zeros(out_ch))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return tn.conv_transpose3d(x, self.weight, self.bias, self.stride, self.padding)


class Embedding(Module):
    def __init__(self, num: int, dim: int, rng: np.random.Generator):
        self.table = tn.parameter(rng.standard_normal((num, dim)) * 0.02)

    def forward(self, ids) -> Tensor:
        ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        if ids.min() < 0 or ids.max() >= self.table.shape[0]:
            raise ContractError(f"embedding ids {ids.tolist()} outside [0, {self.table.shape[0]})")
        return tn.index_select(self.table, ids)


def sinusoidal_embedding(t: int, dim: int) -> np.ndarray:
    """Transformer-style sin/cos embedding of a diffusion step."""
    if dim < 2 or dim % 2:
        raise DimensionError(f"embedding width must be an even number >= 2, got {dim}")
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = float(t) * freqs
    return np.concatenate([np.sin(args), np.cos(args)])
