"""Forward implementations of every layer kind the networks use.

Covers convolution in all the flavours that appear in the architecture
(dense, grouped, depthwise, dilated depthwise), exact-erf GELU, sub-pixel
shuffling, and per-pixel channel normalization.

All spatial convolutions are stride 1 with "same" zero padding: the pad
per side is (kernel - 1) * dilation // 2, which preserves height/width for
odd kernels. Inner products and moments accumulate in float64 and are
rounded once to the input's storage precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ShapeError
from .tensor import ACCUM_DTYPE, Tensor, _wrap, pad_zero


@dataclass(frozen=True)
class ConvSpec:
    """Static description of one convolution layer."""

    in_channels: int
    out_channels: int
    kernel: int
    dilation: int = 1
    groups: int = 1
    has_bias: bool = True

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ShapeError(f"kernel must be odd and >= 1, got {self.kernel}")
        if self.dilation < 1:
            raise ShapeError(f"dilation must be >= 1, got {self.dilation}")
        if self.groups < 1:
            raise ShapeError(f"groups must be >= 1, got {self.groups}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"groups={self.groups} must divide in_channels={self.in_channels} "
                f"and out_channels={self.out_channels}"
            )

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, self.kernel, self.kernel)

    @property
    def padding(self) -> int:
        # effective kernel is (k - 1) * dilation + 1; same-size padding for odd k
        return (self.kernel - 1) * self.dilation // 2

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels


@dataclass(frozen=True)
class PixelNormParams:
    """Per-channel affine applied after per-pixel standardization."""

    gamma: np.ndarray
    beta: np.ndarray
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ShapeError(f"epsilon must be > 0, got {self.epsilon}")
        if self.gamma.ndim != 1 or self.beta.ndim != 1 or self.gamma.shape != self.beta.shape:
            raise ShapeError("gamma and beta must be 1-D vectors of equal length")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def _check_conv_args(x: Tensor, spec: ConvSpec, weights: Tensor, bias) -> None:
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    if weights.shape != spec.weight_shape:
        raise ShapeError(f"weights shape {weights.shape} != expected {spec.weight_shape}")
    if spec.has_bias:
        if bias is None or np.asarray(bias).shape != (spec.out_channels,):
            raise ShapeError(f"bias must be a vector of length {spec.out_channels}")
    elif bias is not None:
        raise ShapeError("bias supplied but spec.has_bias is false")


def conv2d(x: Tensor, spec: ConvSpec, weights: Tensor, bias: np.ndarray | None = None) -> Tensor:
    """Stride-1 grouped/dilated convolution with same-size zero padding.

    Each output element is the inner product over its group's input
    window, accumulated in float64 and rounded once to the input dtype.
    """
    _check_conv_args(x, spec, weights, bias)
    n, _, h, w = x.shape
    k, d, g = spec.kernel, spec.dilation, spec.groups
    cg_in = spec.in_channels // g
    cg_out = spec.out_channels // g

    pad = spec.padding
    xp = pad_zero(x, pad, pad).data.astype(ACCUM_DTYPE)
    xp = xp.reshape(n, g, cg_in, xp.shape[2], xp.shape[3])
    wg = weights.data.astype(ACCUM_DTYPE).reshape(g, cg_out, cg_in, k, k)

    out = np.zeros((n, g, cg_out, h * w), dtype=ACCUM_DTYPE)
    # One kernel tap at a time: (g, cg_out, cg_in) @ (n, g, cg_in, h*w).
    # Tap order is fixed, so the reduction order (and the result) is
    # deterministic.
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, :, i * d : i * d + h, j * d : j * d + w]
            out += np.matmul(wg[:, :, :, i, j], patch.reshape(n, g, cg_in, h * w))
    out = out.reshape(n, spec.out_channels, h, w)
    if spec.has_bias:
        out += np.asarray(bias, dtype=ACCUM_DTYPE)[None, :, None, None]
    return _wrap(out.astype(x.dtype))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x) with the erf-based standard normal CDF."""
    xd = x.data.astype(ACCUM_DTYPE)
    y = xd * 0.5 * (1.0 + erf(xd / np.sqrt(2.0)))
    return _wrap(y.astype(x.dtype))


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange r*r channel groups into an r-times-larger spatial grid.

    output[n][c][h*r + i][w*r + j] = input[n][c*r*r + i*r + j][h][w]
    """
    if r < 1:
        raise ShapeError(f"upscale factor must be >= 1, got {r}")
    if r == 1:
        return x
    n, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"channels ({c}) not divisible by r^2 ({r * r})")
    co = c // (r * r)
    y = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return _wrap(np.ascontiguousarray(y).reshape(n, co, h * r, w * r))


def pixel_shuffle_inverse(x: Tensor, r: int) -> Tensor:
    """Exact inverse of :func:`pixel_shuffle` (used by the backward pass)."""
    if r == 1:
        return x
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(f"spatial dims ({h}, {w}) not divisible by r ({r})")
    y = x.data.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    return _wrap(np.ascontiguousarray(y).reshape(n, c * r * r, h // r, w // r))


def pixel_norm_moments(x: Tensor) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel channel mean and population variance, in float64."""
    xd = x.data.astype(ACCUM_DTYPE)
    mean = xd.mean(axis=1, keepdims=True)
    var = np.square(xd - mean).mean(axis=1, keepdims=True)
    return mean, var


def pixel_norm(x: Tensor, params: PixelNormParams) -> Tensor:
    """Standardize each pixel's channel vector, then scale/shift per channel.

    Every spatial position is treated independently: its channel vector is
    centred by its own mean and divided by sqrt(variance + epsilon), using
    the population variance (divisor C). gamma and beta then apply a
    channel-wise affine. The shift and scale are therefore spatially
    inhomogeneous.
    """
    if params.channels != x.shape[1]:
        raise ShapeError(f"params cover {params.channels} channels, input has {x.shape[1]}")
    xd = x.data.astype(ACCUM_DTYPE)
    mean, var = pixel_norm_moments(x)
    xhat = (xd - mean) / np.sqrt(var + params.epsilon)
    gamma = params.gamma.astype(ACCUM_DTYPE)[None, :, None, None]
    beta = params.beta.astype(ACCUM_DTYPE)[None, :, None, None]
    return _wrap((xhat * gamma + beta).astype(x.dtype))
