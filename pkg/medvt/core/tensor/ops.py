"""Tensor-core primitives.

The Tensor value is a numpy ndarray (f32 for speed, f64 for verification),
row-major and channels-last: frame stacks are (T, H, W, C). Every function
here returns a new array and leaves its inputs untouched.

Summation order is part of the contract. In the default "ordered" mode,
matmul accumulates over the contracted index in increasing order starting
from zero, and softmax normalizers are running sums along the axis. Both
therefore reproduce a naive loop oracle bit-for-bit, and adding exact zeros
(masked entries) never changes a result. The "blas" mode hands matmul to
BLAS for speed; it stays deterministic for a fixed thread count but no
longer matches the loop oracle.

There is no implicit broadcasting. Channel-wise bias and gain have their own
ops (bias_add, channel_scale), scalars go through scale/add_scalar, and
repeat makes copies explicit.
"""

import logging
import math
from typing import NamedTuple, Sequence, Tuple

import numpy as np

from medvt.core.exceptions import ConfigError, DegenerateRowError, DimensionError, NonFiniteError
from medvt.domain.models.common import Tensor

logger = logging.getLogger(__name__)

SUMMATION_MODES = ("ordered", "blas")
PADDINGS = ("same", "valid")

# Upper bound on the (k-chunk, m, n) product buffer of the ordered matmul.
_CHUNK_ELEMENTS = 1 << 21

_summation_mode = "ordered"


def set_summation_mode(mode: str) -> None:
    """Selects how matmul reduces: 'ordered' (loop-oracle exact) or 'blas'."""
    global _summation_mode
    if mode not in SUMMATION_MODES:
        raise ConfigError(f"Unknown summation mode '{mode}'. Choose one of {SUMMATION_MODES}.")
    if mode != _summation_mode:
        logger.info(f"Tensor summation mode set to '{mode}'")
    _summation_mode = mode


def get_summation_mode() -> str:
    return _summation_mode


def assert_finite(x: Tensor, what: str) -> None:
    """Raises NonFiniteError if any entry of x is NaN or infinite."""
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains non-finite values")


# --- Reductions and products ---

def ordered_sum(x: Tensor, axis: int = -1, keepdims: bool = True) -> Tensor:
    """Sums along `axis` strictly left to right (running accumulation)."""
    axis = _normalize_axis(axis, x.ndim)
    running = np.cumsum(x, axis=axis)
    if keepdims:
        return np.take(running, [x.shape[axis] - 1], axis=axis)
    return np.take(running, x.shape[axis] - 1, axis=axis)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a (m, k) and b (k, n).

    In ordered mode, entry (i, j) is ((0 + a[i,0]b[0,j]) + a[i,1]b[1,j]) + ...,
    evaluated in exactly that order.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul expects rank-2 operands", a.shape, b.shape)
    if a.shape[1] != b.shape[0]:
        raise DimensionError("matmul inner extents differ", a.shape, b.shape)
    dtype = np.result_type(a, b)
    a = a.astype(dtype, copy=False)
    b = b.astype(dtype, copy=False)
    if _summation_mode == "blas":
        return np.matmul(a, b)

    m, k = a.shape
    n = b.shape[1]
    acc = np.zeros((1, m, n), dtype=dtype)
    chunk = max(1, _CHUNK_ELEMENTS // max(1, m * n))
    for start in range(0, k, chunk):
        stop = min(k, start + chunk)
        products = a[:, start:stop].T[:, :, None] * b[start:stop, None, :]
        running = np.cumsum(np.concatenate([acc, products], axis=0), axis=0)
        acc = running[-1:]
    return acc[0]


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; -inf entries receive exactly zero weight.

    Raises:
        DegenerateRowError: if a slice along `axis` is entirely -inf.
    """
    axis = _normalize_axis(axis, x.ndim)
    peak = np.max(x, axis=axis, keepdims=True)
    if np.any(np.isneginf(peak)):
        raise DegenerateRowError(f"softmax slice along axis {axis} has every entry at -inf")
    exps = np.exp(x - peak)
    return exps / ordered_sum(exps, axis=axis)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable log of softmax along `axis`."""
    axis = _normalize_axis(axis, x.ndim)
    peak = np.max(x, axis=axis, keepdims=True)
    if np.any(np.isneginf(peak)):
        raise DegenerateRowError(f"log_softmax slice along axis {axis} has every entry at -inf")
    shifted = x - peak
    return shifted - np.log(ordered_sum(np.exp(shifted), axis=axis))


# --- Convolution ---

class ConvGeometry(NamedTuple):
    """Output extents and zero padding (before, after) per (t, y, x) axis."""
    out: Tuple[int, int, int]
    pads: Tuple[Tuple[int, int], Tuple[int, int], Tuple[int, int]]


def _axis_geometry(size: int, k: int, stride: int, pad: str) -> Tuple[int, int, int]:
    """Output extent and (before, after) padding along one axis.

    same:  out = ceil(size / stride), total pad = max((out - 1) * stride + k - size, 0),
           split floor/ceil with the extra pixel after.
    valid: out = floor((size - k) / stride) + 1, no padding.
    """
    if pad == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + k - size, 0)
        before, after = total // 2, total - total // 2
    elif pad == "valid":
        before = after = 0
        out = (size - k) // stride + 1 if size >= k else 0
    else:
        raise ConfigError(f"Unknown padding '{pad}'. Choose one of {PADDINGS}.")
    if size + before + after < k or out <= 0:
        raise DimensionError(f"kernel extent {k} larger than padded input extent {size + before + after}")
    return out, before, after


def conv_geometry(x_shape: Sequence[int], ksize: Sequence[int], strides: Sequence[int], pad: str) -> ConvGeometry:
    outs, pads = [], []
    for size, k, s in zip(x_shape[:3], ksize, strides):
        if s < 1:
            raise ConfigError(f"stride must be >= 1, got {s}")
        out, before, after = _axis_geometry(int(size), int(k), int(s), pad)
        outs.append(out)
        pads.append((before, after))
    return ConvGeometry(out=tuple(outs), pads=tuple(pads))  # type: ignore[arg-type]


def im2col(x: Tensor, ksize: Sequence[int], strides: Sequence[int], pad: str) -> Tuple[Tensor, ConvGeometry]:
    """Gathers (kt, kh, kw) patches of x (T, H, W, C) into (To, Ho, Wo, kt, kh, kw, C)."""
    if x.ndim != 4:
        raise DimensionError("convolution input must be (T, H, W, C)", x.shape)
    geo = conv_geometry(x.shape, ksize, strides, pad)
    kt, kh, kw = ksize
    st, sh, sw = strides
    to, ho, wo = geo.out
    padded = np.pad(x, (geo.pads[0], geo.pads[1], geo.pads[2], (0, 0)))
    cols = np.empty((to, ho, wo, kt, kh, kw, x.shape[3]), dtype=x.dtype)
    for dt in range(kt):
        for dy in range(kh):
            for dx in range(kw):
                cols[:, :, :, dt, dy, dx, :] = padded[
                    dt:dt + st * (to - 1) + 1:st,
                    dy:dy + sh * (ho - 1) + 1:sh,
                    dx:dx + sw * (wo - 1) + 1:sw,
                    :,
                ]
    return cols, geo


def col2im(cols: Tensor, x_shape: Sequence[int], ksize: Sequence[int], strides: Sequence[int], pad: str) -> Tensor:
    """Adjoint of im2col: scatter-adds patch gradients back onto the input grid."""
    geo = conv_geometry(x_shape, ksize, strides, pad)
    kt, kh, kw = ksize
    st, sh, sw = strides
    to, ho, wo = geo.out
    (t0, t1), (y0, y1), (x0, x1) = geo.pads
    T, H, W, C = x_shape
    padded = np.zeros((T + t0 + t1, H + y0 + y1, W + x0 + x1, C), dtype=cols.dtype)
    for dt in range(kt):
        for dy in range(kh):
            for dx in range(kw):
                padded[
                    dt:dt + st * (to - 1) + 1:st,
                    dy:dy + sh * (ho - 1) + 1:sh,
                    dx:dx + sw * (wo - 1) + 1:sw,
                    :,
                ] += cols[:, :, :, dt, dy, dx, :]
    return padded[t0:t0 + T, y0:y0 + H, x0:x0 + W, :]


def conv3d(x: Tensor, k: Tensor, stride: int = 1, pad: str = "same") -> Tensor:
    """3-D convolution of x (T, H, W, Cin) with k (kt, kh, kw, Cin, Cout).

    `stride` applies to both spatial axes; the temporal stride is 1. Patch
    entries are reduced in (dt, dy, dx, cin) row-major order.
    """
    if k.ndim != 5:
        raise DimensionError("conv3d kernel must be (kt, kh, kw, Cin, Cout)", k.shape)
    if x.ndim != 4 or x.shape[3] != k.shape[3]:
        raise DimensionError("conv3d input channels do not match kernel", x.shape, k.shape)
    cols, geo = im2col(x, k.shape[:3], (1, stride, stride), pad)
    flat = cols.reshape(-1, int(np.prod(k.shape[:4])))
    out = matmul(flat, k.reshape(-1, k.shape[4]))
    return out.reshape(geo.out + (k.shape[4],))


def conv2d(x: Tensor, k: Tensor, stride: int = 1, pad: str = "same") -> Tensor:
    """Per-frame 2-D convolution of x (T, H, W, Cin) with k (kh, kw, Cin, Cout)."""
    if k.ndim != 4:
        raise DimensionError("conv2d kernel must be (kh, kw, Cin, Cout)", k.shape)
    return conv3d(x, k[None], stride=stride, pad=pad)


# --- Resampling ---

def interpolation_matrix(n_in: int, n_out: int, dtype=np.float64) -> Tensor:
    """(n_out, n_in) bilinear weights, align-corners=false.

    Output index i samples src = (i + 0.5) * n_in / n_out - 0.5, clamped to
    [0, n_in - 1]; i0 = floor(src), i1 = min(i0 + 1, n_in - 1), and i1
    receives weight src - i0.
    """
    if n_in <= 0 or n_out <= 0:
        raise DimensionError(f"bilinear resize needs positive extents, got {n_in} -> {n_out}")
    weights = np.zeros((n_out, n_in), dtype=dtype)
    ratio = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * ratio - 0.5, 0.0), float(n_in - 1))
        i0 = int(math.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        weights[i, i0] += 1.0 - frac
        weights[i, i1] += frac
    return weights


def resize_bilinear(x: Tensor, height: int, width: int) -> Tensor:
    """Bilinear resize of x (T, H, W, C) to (T, height, width, C), either direction."""
    if x.ndim != 4:
        raise DimensionError("resize input must be (T, H, W, C)", x.shape)
    if height <= 0 or width <= 0:
        raise DimensionError(f"resize target extent must be positive, got {(height, width)}")
    if (height, width) == x.shape[1:3]:
        return x.copy()
    wy = interpolation_matrix(x.shape[1], height, x.dtype)
    wx = interpolation_matrix(x.shape[2], width, x.dtype)
    rows = np.einsum("iy,tyxc->tixc", wy, x)
    return np.einsum("jx,tixc->tijc", wx, rows)


def resize_bilinear_adjoint(g: Tensor, height: int, width: int) -> Tensor:
    """Transpose of resize_bilinear: maps a (T, H', W', C) gradient back to (T, height, width, C)."""
    if (height, width) == g.shape[1:3]:
        return g.copy()
    wy = interpolation_matrix(height, g.shape[1], g.dtype)
    wx = interpolation_matrix(width, g.shape[2], g.dtype)
    rows = np.einsum("iy,tijc->tyjc", wy, g)
    return np.einsum("jx,tyjc->tyxc", wx, rows)


def bilinear_upsample(x: Tensor, height: int, width: int) -> Tensor:
    """Upsamples x (T, H, W, C) to a target no smaller than the input."""
    if height <= 0 or width <= 0:
        raise DimensionError(f"upsample target extent must be positive, got {(height, width)}")
    if height < x.shape[1] or width < x.shape[2]:
        raise DimensionError("upsample target smaller than input", x.shape[1:3], (height, width))
    return resize_bilinear(x, height, width)


# --- Normalization ---

def _group_view(x: Tensor, groups: int) -> Tensor:
    if x.ndim < 2:
        raise DimensionError("normalization needs a leading sample axis and a channel axis", x.shape)
    channels = x.shape[-1]
    if groups < 1 or channels % groups:
        raise DimensionError(f"{channels} channels not divisible into {groups} groups", x.shape)
    return x.reshape(x.shape[0], -1, groups, channels // groups)


def standardize(x: Tensor, groups: int, eps: float) -> Tensor:
    """Zero-mean, unit-variance per (leading index, group); biased variance.

    Statistics run over every middle axis and the group's channels, so for a
    (T, H, W, C) stack each frame is normalized on its own.
    """
    view = _group_view(x, groups)
    mean = view.mean(axis=(1, 3), keepdims=True)
    centred = view - mean
    var = (centred * centred).mean(axis=(1, 3), keepdims=True)
    return (centred / np.sqrt(var + eps)).reshape(x.shape)


def group_norm(x: Tensor, groups: int, eps: float, gain: Tensor, bias: Tensor) -> Tensor:
    return bias_add(channel_scale(standardize(x, groups, eps), gain), bias)


def layer_norm(x: Tensor, eps: float, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalizes every row over the last (channel) axis."""
    rows = x.reshape(-1, x.shape[-1])
    return group_norm(rows, 1, eps, gain, bias).reshape(x.shape)


# --- Elementwise suite ---

def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op} needs identical shapes", a.shape, b.shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return a + b


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return a - b


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return a * b


def scale(x: Tensor, factor: float) -> Tensor:
    return x * x.dtype.type(factor)


def add_scalar(x: Tensor, value: float) -> Tensor:
    return x + x.dtype.type(value)


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, x.dtype.type(0))


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    if b.shape != (x.shape[-1],):
        raise DimensionError("bias must match the channel axis", x.shape, b.shape)
    return x + b


def channel_scale(x: Tensor, g: Tensor) -> Tensor:
    if g.shape != (x.shape[-1],):
        raise DimensionError("gain must match the channel axis", x.shape, g.shape)
    return x * g


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise DimensionError("concat needs at least one operand")
    axis = _normalize_axis(axis, parts[0].ndim)
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != len(ref) or any(p.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise DimensionError(f"concat extents differ off axis {axis}", ref, p.shape)
    return np.concatenate(parts, axis=axis)


def slice_(x: Tensor, index: Tuple[slice, ...]) -> Tensor:
    return x[index].copy()


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError("reshape must preserve the element count", x.shape, shape)
    return x.reshape(shape).copy()


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose axes {tuple(axes)} are not a permutation", x.shape)
    return np.ascontiguousarray(np.transpose(x, axes))


def mean(x: Tensor, axis: int) -> Tensor:
    axis = _normalize_axis(axis, x.ndim)
    return ordered_sum(x, axis=axis, keepdims=False) / x.dtype.type(x.shape[axis])


def repeat(x: Tensor, times: int, axis: int) -> Tensor:
    """Repeats each element `times` times along `axis` (np.repeat semantics)."""
    if times < 1:
        raise DimensionError(f"repeat count must be >= 1, got {times}")
    return np.repeat(x, times, axis=axis)


def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim
