"""Dynamic convolution: stride (integer and 1/2), dilation, and kernel size
chosen per forward pass while the stored kernel tensor stays untouched.

Kernel size changes resample the stored K0 x K0 kernel bilinearly on the
aligned-corner grid and rescale the output by alpha = K0^2 / K^2.  Stride
1/2 runs as a transposed convolution with step 2 using the stored kernel
flipped about its spatial center with channel axes swapped, output padded
so the resolution exactly doubles.  Padding is always D*(K-1)/2, so the
stride alone governs resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError
from .tensor import Tensor, record_op

STRIDE_OPTIONS = (0.5, 1, 2, 3, 4)
DILATION_OPTIONS = (1, 2, 3, 4, 5)
SIZE_OPTIONS = (1, 3, 5, 7, 9)

FRACTIONAL = 0.5


@dataclass(frozen=True)
class ConvConfig:
    """Active attribute setting of one dynamic layer."""

    stride: float = 1
    dilation: int = 1
    kernel_size: int = 3
    groups: int = 1

    def __post_init__(self):
        if self.stride not in STRIDE_OPTIONS:
            raise ConfigError(f"stride {self.stride} not in {STRIDE_OPTIONS}")
        if self.dilation not in DILATION_OPTIONS:
            raise ConfigError(f"dilation {self.dilation} not in {DILATION_OPTIONS}")
        if self.kernel_size not in SIZE_OPTIONS:
            raise ConfigError(f"kernel size {self.kernel_size} not in {SIZE_OPTIONS}")
        if self.groups < 1:
            raise ConfigError(f"groups must be >= 1, got {self.groups}")

    @property
    def padding(self) -> int:
        return self.dilation * (self.kernel_size - 1) // 2

    @property
    def fractional(self) -> bool:
        return self.stride == FRACTIONAL

    def alpha(self, k0: int) -> float:
        return (k0 * k0) / (self.kernel_size * self.kernel_size)


@dataclass
class ConvWeights:
    """Stored kernel (out, in/groups, K0, K0) plus optional bias."""

    kernel: Tensor
    bias: Tensor | None = None

    @property
    def k0(self) -> int:
        return self.kernel.data.shape[2]


def output_shape(h: int, w: int, cfg: ConvConfig) -> tuple[int, int]:
    """Spatial extents produced by a dynamic layer on an h x w input."""
    if cfg.fractional:
        return 2 * h, 2 * w
    s = int(cfg.stride)
    span = cfg.dilation * (cfg.kernel_size - 1)
    p = cfg.padding
    return ((h + 2 * p - span - 1) // s + 1,
            (w + 2 * p - span - 1) // s + 1)


def resize_matrix(src: int, dst: int, dtype=np.float64) -> np.ndarray:
    """Aligned-corner linear interpolation matrix of shape (dst, src).

    dst == 1 samples the source center; shared by kernel interpolation and
    image resizing.
    """
    m = np.zeros((dst, src), dtype=dtype)
    if dst == 1:
        c = (src - 1) / 2.0
        lo = int(np.floor(c))
        f = c - lo
        m[0, lo] = 1.0 - f
        if f > 0:
            m[0, lo + 1] = f
        return m
    for j in range(dst):
        xj = j * (src - 1) / (dst - 1)
        lo = int(np.floor(xj))
        f = xj - lo
        if lo >= src - 1:
            m[j, src - 1] = 1.0
        else:
            m[j, lo] = 1.0 - f
            m[j, lo + 1] = f
    return m


def interpolate_kernel(kernel: np.ndarray, k: int) -> np.ndarray:
    """Resample each spatial slice of (out, in, K0, K0) to K x K."""
    if k not in SIZE_OPTIONS:
        raise ConfigError(f"kernel size {k} not in {SIZE_OPTIONS}")
    k0 = kernel.shape[2]
    if k == k0:
        return kernel
    m = resize_matrix(k0, k, dtype=kernel.dtype)
    return np.einsum("ap,oipq,bq->oiab", m, kernel, m, optimize=True)


def interpolate_kernel_adjoint(grad: np.ndarray, k0: int) -> np.ndarray:
    """Transpose of the bilinear sampling map: (out, in, K, K) -> K0 x K0."""
    k = grad.shape[2]
    if k == k0:
        return grad
    m = resize_matrix(k0, k, dtype=grad.dtype)
    return np.einsum("ap,oiab,bq->oipq", m, grad, m, optimize=True)


def _flip_swap(w: np.ndarray, groups: int) -> np.ndarray:
    """Conv layout (cout, cin/g, K, K) -> transposed layout (cin, cout/g, K, K),
    spatially flipped about the center."""
    cout, cing, kh, kw = w.shape
    ocg = cout // groups
    w5 = w.reshape(groups, ocg, cing, kh, kw)
    return np.ascontiguousarray(w5.transpose(0, 2, 1, 3, 4)[..., ::-1, ::-1]).reshape(
        groups * cing, ocg, kh, kw)


def _flip_swap_back(gwt: np.ndarray, groups: int) -> np.ndarray:
    cin, ocg, kh, kw = gwt.shape
    cing = cin // groups
    g5 = gwt.reshape(groups, cing, ocg, kh, kw)
    return np.ascontiguousarray(g5.transpose(0, 2, 1, 3, 4)[..., ::-1, ::-1]).reshape(
        groups * ocg, cing, kh, kw)


def _check_channels(x: np.ndarray, kernel: np.ndarray, groups: int):
    cout, cing = kernel.shape[:2]
    if cout % groups != 0:
        raise ShapeError(f"out channels {cout} not divisible by groups {groups}")
    if x.shape[1] != groups * cing:
        raise ShapeError(
            f"input has {x.shape[1]} channels, kernel expects {groups * cing}")


def conv_forward(x: Tensor, w: ConvWeights, cfg: ConvConfig) -> Tensor:
    """Strided/dilated (grouped) convolution with integer stride."""
    if cfg.fractional:
        raise ConfigError("conv_forward requires an integer stride; use fractional_forward")
    _check_channels(x.data, w.kernel.data, cfg.groups)
    k0 = w.k0
    s, p, d, g = int(cfg.stride), cfg.padding, cfg.dilation, cfg.groups
    w_act = interpolate_kernel(w.kernel.data, cfg.kernel_size)
    alpha = cfg.alpha(k0)
    y = kernels.conv2d_fwd(x.data, w_act, s, p, d, g)
    if cfg.kernel_size != k0:
        y *= x.data.dtype.type(alpha)
    if w.bias is not None:
        y += w.bias.data[None, :, None, None]
    out = Tensor(y)
    kh = kw = cfg.kernel_size
    in_h, in_w = x.data.shape[2], x.data.shape[3]

    def backward(gy):
        gy_eff = gy * alpha if cfg.kernel_size != k0 else gy
        gx = kernels.tconv2d_fwd(gy_eff, w_act, s, p, d, in_h, in_w, g)
        gw_act = kernels.conv2d_bwd_w(x.data, gy_eff, s, p, d, g, kh, kw)
        gk = interpolate_kernel_adjoint(gw_act, k0)
        grads = [gx, gk]
        if w.bias is not None:
            grads.append(gy.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, w.kernel) if w.bias is None else (x, w.kernel, w.bias)
    return record_op(inputs, out, backward)


def fractional_forward(x: Tensor, w: ConvWeights, cfg: ConvConfig) -> Tensor:
    """Stride-1/2 layer: transposed convolution with step 2, flipped kernel,
    swapped channel axes; output resolution is exactly doubled."""
    if not cfg.fractional:
        raise ConfigError("fractional_forward requires stride 1/2")
    _check_channels(x.data, w.kernel.data, cfg.groups)
    k0 = w.k0
    p, d, g = cfg.padding, cfg.dilation, cfg.groups
    w_act = interpolate_kernel(w.kernel.data, cfg.kernel_size)
    wt = _flip_swap(w_act, g)
    alpha = cfg.alpha(k0)
    n, _, h, wid = x.data.shape
    out_h, out_w = 2 * h, 2 * wid
    y = kernels.tconv2d_fwd(x.data, wt, 2, p, d, out_h, out_w, g)
    if cfg.kernel_size != k0:
        y *= x.data.dtype.type(alpha)
    if w.bias is not None:
        y += w.bias.data[None, :, None, None]
    out = Tensor(y)
    kh = kw = cfg.kernel_size

    def backward(gy):
        gy_eff = gy * alpha if cfg.kernel_size != k0 else gy
        # adjoint of the scatter is a stride-2 gather with the same table
        gx = kernels.conv2d_fwd(gy_eff, wt, 2, p, d, g)
        gwt = kernels.tconv2d_bwd_w(x.data, gy_eff, 2, p, d, g, kh, kw)
        gk = interpolate_kernel_adjoint(_flip_swap_back(gwt, g), k0)
        grads = [gx, gk]
        if w.bias is not None:
            grads.append(gy.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, w.kernel) if w.bias is None else (x, w.kernel, w.bias)
    return record_op(inputs, out, backward)


def dyn_conv(x: Tensor, w: ConvWeights, cfg: ConvConfig) -> Tensor:
    """Dispatch on the active stride."""
    if cfg.fractional:
        return fractional_forward(x, w, cfg)
    return conv_forward(x, w, cfg)


def count_macs(x_dims, w: ConvWeights | tuple, cfg: ConvConfig) -> int:
    """Multiply-accumulate count of one dynamic layer on an input of
    (..., h, w); the active (possibly interpolated) kernel size counts."""
    if isinstance(w, ConvWeights):
        cout, cing = w.kernel.data.shape[:2]
    else:
        cout, cing = w[0], w[1]
    h, wid = x_dims[-2], x_dims[-1]
    oh, ow = output_shape(h, wid, cfg)
    k = cfg.kernel_size
    return k * k * cing * cout * oh * ow
