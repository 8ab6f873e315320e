"""Evaluation utilities: Y-channel conversion, PSNR, SSIM, bicubic resize.

Images here are plain float arrays in [0, 1]: a single plane is (h, w)
and an RGB image is (3, h, w). All internal arithmetic is float64.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError

#: BT.601 studio-swing luma weights, the standard plane for SR evaluation.
_Y_WEIGHTS = (65.481, 128.553, 24.966)
_Y_OFFSET = 16.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"expected an RGB image shaped (3, h, w), got {img.shape}")
    return img


def _as_plane(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"expected a single plane shaped (h, w), got {img.shape}")
    return img


def quantize_u8(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half away from zero onto the 8-bit grid."""
    clamped = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(clamped * 255.0 + 0.5).astype(np.uint8)


def rgb_to_y(img: np.ndarray, quantize: bool = False) -> np.ndarray:
    """Luminance plane of an RGB image in [0, 1].

    Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255, which maps black to
    16/255 and white to 235/255. With ``quantize`` the input is first
    rounded to the 8-bit grid, matching evaluation pipelines that work on
    saved images.
    """
    rgb = _as_rgb(img)
    if quantize:
        rgb = quantize_u8(rgb) / 255.0
    wr, wg, wb = _Y_WEIGHTS
    y = (wr * rgb[0] + wg * rgb[1] + wb * rgb[2] + _Y_OFFSET) / 255.0
    return np.clip(y, 0.0, 1.0)


def _crop(a: np.ndarray, border: int) -> np.ndarray:
    if border == 0:
        return a
    h, w = a.shape
    if border < 0 or 2 * border >= min(h, w):
        raise ShapeError(f"border_crop {border} is too large for a {h}x{w} plane")
    return a[border : h - border, border : w - border]


def psnr(a: np.ndarray, b: np.ndarray, border_crop: int = 0) -> float:
    """Peak signal-to-noise ratio in dB on [0, 1] planes.

    Identical inputs return +inf.
    """
    a, b = _as_plane(a), _as_plane(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    a, b = _crop(a, border_crop), _crop(b, border_crop)
    mse = float(np.mean(np.square(a - b)))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a: np.ndarray, b: np.ndarray, border_crop: int = 0) -> float:
    """Mean structural similarity with the reference recipe.

    11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1;
    windows are evaluated wherever they fit entirely inside the cropped
    planes.
    """
    a, b = _as_plane(a), _as_plane(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    a, b = _crop(a, border_crop), _crop(b, border_crop)
    if min(a.shape) < SSIM_WINDOW:
        raise ShapeError(
            f"planes must be at least {SSIM_WINDOW}x{SSIM_WINDOW} after cropping, "
            f"got {a.shape}"
        )
    kernel = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    wa = np.lib.stride_tricks.sliding_window_view(a, (SSIM_WINDOW, SSIM_WINDOW))
    wb = np.lib.stride_tricks.sliding_window_view(b, (SSIM_WINDOW, SSIM_WINDOW))

    mu_a = np.einsum("hwij,ij->hw", wa, kernel)
    mu_b = np.einsum("hwij,ij->hw", wb, kernel)
    ea2 = np.einsum("hwij,ij->hw", wa * wa, kernel)
    eb2 = np.einsum("hwij,ij->hw", wb * wb, kernel)
    eab = np.einsum("hwij,ij->hw", wa * wb, kernel)
    var_a = ea2 - mu_a * mu_a
    var_b = eb2 - mu_b * mu_b
    cov = eab - mu_a * mu_b

    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    return float(score.mean())


# ---------------------------------------------------------------------------
# Bicubic resampling
#
# Keys' cubic convolution kernel with a = -0.5 (support 4). When
# downsampling, the kernel is stretched by the inverse scale so it
# low-pass filters as it interpolates; out-of-range taps clamp to the
# edge pixels. Per-position weights are normalized to sum to one.


def _cubic(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    f = (1.5 * ax3 - 2.5 * ax2 + 1.0) * (ax <= 1.0)
    f = f + (-0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0) * ((ax > 1.0) & (ax <= 2.0))
    return f


def _resize_weights(in_len: int, out_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Tap indices and normalized weights for one resized dimension."""
    scale = out_len / in_len
    if scale < 1.0:
        kernel = lambda x: scale * _cubic(scale * x)
        width = 4.0 / scale
    else:
        kernel = _cubic
        width = 4.0
    # Map output sample i (pixel centres at i + 0.5) into input space.
    u = (np.arange(out_len, dtype=np.float64) + 0.5) / scale - 0.5
    left = np.floor(u - width / 2.0).astype(np.int64) + 1
    taps = int(np.ceil(width)) + 2
    indices = left[:, None] + np.arange(taps)[None, :]
    weights = kernel(u[:, None] - indices)
    weights = weights / weights.sum(axis=1, keepdims=True)
    indices = np.clip(indices, 0, in_len - 1)
    return indices, weights


def _resize_axis(plane: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    indices, weights = _resize_weights(plane.shape[axis], out_len)
    moved = np.moveaxis(plane, axis, 0)
    out = np.einsum("ot,ot...->o...", weights, moved[indices])
    return np.moveaxis(out, 0, axis)


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resize of an (h, w) plane or (3, h, w) image."""
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output dims must be positive, got {out_h}x{out_w}")
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        planes = arr[None]
    elif arr.ndim == 3 and arr.shape[0] == 3:
        planes = arr
    else:
        raise ShapeError(f"expected (h, w) or (3, h, w), got {arr.shape}")
    if planes.shape[1] != out_h:
        planes = _resize_axis(planes, out_h, axis=1)
    if planes.shape[2] != out_w:
        planes = _resize_axis(planes, out_w, axis=2)
    return planes[0] if arr.ndim == 2 else planes
