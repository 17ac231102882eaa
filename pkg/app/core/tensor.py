"""
Dense tensor with reverse-mode automatic differentiation.

Every op builds a node holding its parents and a backward closure over the
activations it needs. Buffers are numpy arrays in the active precision
(float32 for training, float64 for gradient checks). Broadcasting is only
allowed for 0-d scalars and through the explicit `expand` op.
"""
import contextlib

import numpy as np

from app.core import config
from app.core.errors import ContractError, DimensionError, GraphStateError, NumericalError

_DTYPE = np.dtype(config.DEFAULT_PRECISION)
_GRAD_ENABLED = True


def set_precision(name: str) -> None:
    """Switches the scalar type used for every tensor created afterwards."""
    global _DTYPE
    if name not in ("float32", "float64"):
        raise ContractError(f"unsupported precision '{name}'")
    _DTYPE = np.dtype(name)


def get_dtype() -> np.dtype:
    return _DTYPE


@contextlib.contextmanager
def precision(name: str):
    previous = _DTYPE.name
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


@contextlib.contextmanager
def no_grad():
    """Runs forward ops without recording a graph (sampling, inversion)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    def __init__(self, data, requires_grad: bool = False):
        self.data = np.require(np.asarray(data, dtype=_DTYPE), requirements="C")
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward_fn = None
        self._op = "leaf"
        self._released = False

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward_fn is None and not self._released

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # --- operator sugar ---
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(self, other)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return add(neg(self), other)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(self, other)
    def __truediv__(self, other): return div(self, other)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return index_select(self, index)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def transpose(self, *axes): return transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)

    def backward(self):
        backward(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    if isinstance(data, Tensor):
        return data
    return Tensor(data, requires_grad=requires_grad)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _make(data: np.ndarray, parents: tuple, backward_fn, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericalError(f"non-finite values produced by '{op}'", {"op": op})
    out = Tensor(data)
    out._op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    if np.ndim(value) != 0:
        raise DimensionError("only Python scalars are implicitly converted; wrap arrays with tensor()")
    return Tensor(np.asarray(value))


def _unbroadcast_scalar(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ (use expand for broadcasting)")


# ==============================================================================
#  ELEMENTWISE
# ==============================================================================
def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "add")

    def backward_fn(g):
        return _unbroadcast_scalar(g, a.shape), _unbroadcast_scalar(g, b.shape)
    return _make(a.data + b.data, (a, b), backward_fn, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "sub")

    def backward_fn(g):
        return _unbroadcast_scalar(g, a.shape), _unbroadcast_scalar(-g, b.shape)
    return _make(a.data - b.data, (a, b), backward_fn, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "mul")

    def backward_fn(g):
        return _unbroadcast_scalar(g * b.data, a.shape), _unbroadcast_scalar(g * a.data, b.shape)
    return _make(a.data * b.data, (a, b), backward_fn, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "div")

    def backward_fn(g):
        return (_unbroadcast_scalar(g / b.data, a.shape),
                _unbroadcast_scalar(-g * a.data / (b.data * b.data), b.shape))
    return _make(a.data / b.data, (a, b), backward_fn, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g / (2.0 * out),), "sqrt")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def abs_(a: Tensor) -> Tensor:
    # Subgradient at 0 is 0 (np.sign(0) == 0).
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def relu(a: Tensor) -> Tensor:
    return _make(np.maximum(a.data, 0), (a,), lambda g: (g * (a.data > 0),), "relu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)

    def backward_fn(g):
        return (g * (s + a.data * s * (1.0 - s)),)
    return _make(a.data * s, (a,), backward_fn, "silu")


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)) computed without overflow for large |x|."""
    x = a.data
    out = -(np.maximum(-x, 0) + np.log1p(np.exp(-np.abs(x))))
    return _make(out, (a,), lambda g: (g * _sigmoid(-x),), "log_sigmoid")


# ==============================================================================
#  REDUCTIONS AND SHAPE OPS
# ==============================================================================
def _normalize_axes(axis, ndim: int) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(ax % ndim for ax in axes)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward_fn(g):
        g = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _make(np.asarray(out), (a,), backward_fn, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return mul(sum_(a, axes, keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}") from e
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"invalid permutation {axes} for rank {a.ndim}")
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, slice)) or p is Ellipsis for p in parts)


def index_select(a: Tensor, index) -> Tensor:
    out = a.data[index]
    basic = _is_basic_index(index)

    def backward_fn(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)
    return _make(np.array(out), (a,), backward_fn, "index")


def concat(tensors: list, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis):
            raise DimensionError(f"concat: shape {t.shape} incompatible with {ref.shape} on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward_fn(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward_fn, "concat")


def stack(tensors: list, axis: int = 0) -> Tensor:
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def expand(a: Tensor, shape) -> Tensor:
    """Explicit broadcast of size-1 axes (and leading axes) to `shape`."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as e:
        raise DimensionError(f"cannot expand {a.shape} to {shape}") from e
    lead = len(shape) - a.ndim

    def backward_fn(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(a.shape) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)
    return _make(np.array(out), (a,), backward_fn, "expand")


# ==============================================================================
#  LINEAR ALGEBRA AND NORMALIZATION
# ==============================================================================
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product on the last two axes.

    Supported layouts: a[..., m, k] @ b[k, n] (shared weight matrix) and
    a[..., m, k] @ b[..., k, n] with identical leading extents.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if b.ndim == 2:
        k, n = b.shape

        def backward_fn(g):
            ga = g @ b.data.T
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            return ga, gb
    else:
        if a.shape[:-2] != b.shape[:-2]:
            raise DimensionError(f"matmul leading extents differ: {a.shape} @ {b.shape}")

        def backward_fn(g):
            return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g
    return _make(a.data @ b.data, (a, b), backward_fn, "matmul")


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError("softmax_rows needs a last axis of length >= 1")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)
    return _make(out, (x,), backward_fn, "softmax")


def apply_attention_mask(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Adds a large negative constant to logits where `mask` is False."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or mask.shape[0] != mask.shape[1]:
        raise DimensionError(f"attention mask must be square, got {mask.shape}")
    if scores.shape[-2:] != mask.shape:
        raise DimensionError(f"attention mask {mask.shape} does not match logits {scores.shape}")
    bias = np.where(mask, 0.0, config.ATTENTION_MASK_VALUE).astype(scores.data.dtype)
    return _make(scores.data + bias, (scores,), lambda g: (g,), "attention_mask")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = config.LAYER_NORM_EPS) -> Tensor:
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError("layer_norm needs a non-empty last axis")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm gain/bias must have shape ({d},), got {gain.shape}/{bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    rstd = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * rstd
    out = xhat * gain.data + bias.data

    def backward_fn(g):
        lead = tuple(range(g.ndim - 1))
        g_gain = (g * xhat).sum(axis=lead)
        g_bias = g.sum(axis=lead)
        gxhat = g * gain.data
        gx = rstd * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                     - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, g_gain, g_bias
    return _make(out, (x, gain, bias), backward_fn, "layer_norm")


# ==============================================================================
#  CONVOLUTIONS
# ==============================================================================
def _triple(value) -> tuple:
    if isinstance(value, int):
        return (value,) * 3
    value = tuple(value)
    if len(value) != 3:
        raise DimensionError(f"expected 3 values, got {value}")
    return value


def _window(offset: tuple, stride: tuple, out_size: tuple) -> tuple:
    return (slice(None), slice(None)) + tuple(
        slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, stride, out_size))


def _correlate(xp: np.ndarray, w: np.ndarray, stride: tuple, out_size: tuple) -> np.ndarray:
    out = np.zeros((xp.shape[0], w.shape[0]) + tuple(out_size), dtype=xp.dtype)
    for offset in np.ndindex(*w.shape[2:]):
        patch = xp[_window(offset, stride, out_size)]
        wk = w[(slice(None), slice(None)) + offset]
        out += np.moveaxis(np.tensordot(patch, wk, axes=([1], [1])), -1, 1)
    return out


def _correlate_input_grad(g: np.ndarray, w: np.ndarray, stride: tuple, xp_shape: tuple) -> np.ndarray:
    gxp = np.zeros(xp_shape, dtype=g.dtype)
    out_size = g.shape[2:]
    for offset in np.ndindex(*w.shape[2:]):
        wk = w[(slice(None), slice(None)) + offset]
        gxp[_window(offset, stride, out_size)] += np.moveaxis(np.tensordot(g, wk, axes=([1], [0])), -1, 1)
    return gxp


def _correlate_kernel_grad(xp: np.ndarray, g: np.ndarray, stride: tuple, kernel_size: tuple) -> np.ndarray:
    gw = np.zeros((g.shape[1], xp.shape[1]) + tuple(kernel_size), dtype=g.dtype)
    out_size = g.shape[2:]
    for offset in np.ndindex(*kernel_size):
        patch = xp[_window(offset, stride, out_size)]
        gw[(slice(None), slice(None)) + offset] = np.tensordot(g, patch, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    return gw


def _check_bias(bias, channels: int) -> None:
    if bias is not None and bias.shape != (channels,):
        raise DimensionError(f"bias must have shape ({channels},), got {bias.shape}")


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of x[B, C, F, H, W] with kernel[C', C, kf, kh, kw]."""
    if x.ndim != 5 or kernel.ndim != 5:
        raise DimensionError(f"conv3d needs 5-D input and kernel, got {x.shape} and {kernel.shape}")
    if kernel.shape[1] != x.shape[1]:
        raise DimensionError(f"conv3d kernel expects {kernel.shape[1]} channels, input has {x.shape[1]}")
    _check_bias(bias, kernel.shape[0])
    stride, pad = _triple(stride), _triple(padding)
    xp = np.pad(x.data, ((0, 0), (0, 0)) + tuple((p, p) for p in pad))
    ksize = kernel.shape[2:]
    if any(k > n for k, n in zip(ksize, xp.shape[2:])):
        raise DimensionError(f"kernel {ksize} larger than padded input {xp.shape[2:]}")
    out_size = tuple((n - k) // s + 1 for n, k, s in zip(xp.shape[2:], ksize, stride))
    out = _correlate(xp, kernel.data, stride, out_size)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1, 1)
    crop = (slice(None), slice(None)) + tuple(slice(p, p + n) for p, n in zip(pad, x.shape[2:]))

    def backward_fn(g):
        gx = _correlate_input_grad(g, kernel.data, stride, xp.shape)[crop]
        gw = _correlate_kernel_grad(xp, g, stride, ksize)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3, 4))
    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, backward_fn, "conv3d")


def conv_transpose3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Transposed 3-D convolution; kernel layout is [C_in, C_out, kf, kh, kw]."""
    if x.ndim != 5 or kernel.ndim != 5:
        raise DimensionError(f"conv_transpose3d needs 5-D input and kernel, got {x.shape} and {kernel.shape}")
    if kernel.shape[0] != x.shape[1]:
        raise DimensionError(f"conv_transpose3d kernel expects {kernel.shape[0]} channels, input has {x.shape[1]}")
    _check_bias(bias, kernel.shape[1])
    stride, pad = _triple(stride), _triple(padding)
    ksize = kernel.shape[2:]
    full_size = tuple((n - 1) * s + k for n, s, k in zip(x.shape[2:], stride, ksize))
    out_size = tuple(n - 2 * p for n, p in zip(full_size, pad))
    if any(n <= 0 for n in out_size):
        raise DimensionError(f"padding {pad} leaves no output for input {x.shape[2:]}")
    full = _correlate_input_grad(x.data, kernel.data, stride, (x.shape[0], kernel.shape[1]) + full_size)
    crop = (slice(None), slice(None)) + tuple(slice(p, p + n) for p, n in zip(pad, out_size))
    out = full[crop]
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1, 1)

    def backward_fn(g):
        gfull = np.zeros(full.shape, dtype=g.dtype)
        gfull[crop] = g
        gx = _correlate(gfull, kernel.data, stride, x.shape[2:])
        gw = _correlate_kernel_grad(gfull, x.data, stride, ksize)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3, 4))
    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(np.ascontiguousarray(out), parents, backward_fn, "conv_transpose3d")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d needs 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    out = conv3d(reshape(x, (n, c, 1, h, w)), reshape(kernel, (o, c, 1, kh, kw)), bias,
                 stride=(1, stride, stride), padding=(0, padding, padding))
    return reshape(out, (n, o) + out.shape[3:])


def conv_transpose2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv_transpose2d needs 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    _, o, kh, kw = kernel.shape
    out = conv_transpose3d(reshape(x, (n, c, 1, h, w)), reshape(kernel, (c, o, 1, kh, kw)), bias,
                           stride=(1, stride, stride), padding=(0, padding, padding))
    return reshape(out, (n, o) + out.shape[3:])


def conv1x1(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-location linear map across channels: x[B, C, ...] with kernel[C', C]."""
    if x.ndim < 3 or kernel.ndim != 2:
        raise DimensionError(f"conv1x1 needs x[B, C, ...] and kernel[C', C], got {x.shape} and {kernel.shape}")
    if kernel.shape[1] != x.shape[1]:
        raise DimensionError(f"conv1x1 kernel expects {kernel.shape[1]} channels, input has {x.shape[1]}")
    _check_bias(bias, kernel.shape[0])
    out = np.moveaxis(np.tensordot(kernel.data, x.data, axes=([1], [1])), 0, 1)
    spatial = (1,) * (x.ndim - 2)
    if bias is not None:
        out = out + bias.data.reshape((1, -1) + spatial)
    reduce_axes = [0] + list(range(2, x.ndim))

    def backward_fn(g):
        gx = np.moveaxis(np.tensordot(kernel.data, g, axes=([0], [1])), 0, 1)
        gk = np.tensordot(g, x.data, axes=(reduce_axes, reduce_axes))
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=tuple(reduce_axes))
    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(np.ascontiguousarray(out), parents, backward_fn, "conv1x1")


# ==============================================================================
#  BACKWARD PASS
# ==============================================================================
def _topological_order(root: Tensor) -> list:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        if node._released:
            raise GraphStateError("graph was already released by a previous backward(); run a new forward pass")
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populates `.grad` on every requires_grad leaf reachable from a scalar loss."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._released:
        raise GraphStateError("backward called twice without a new forward pass")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")

    order = _topological_order(loss)
    grads = {id(loss): np.ones(loss.shape, dtype=loss.data.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise DimensionError(f"gradient shape {pg.shape} != tensor shape {parent.shape} in '{node._op}'")
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg

    for node in order:
        if node._backward_fn is not None:
            node._backward_fn = None
            node._parents = ()
            node._released = True
