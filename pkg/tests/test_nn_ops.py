import math

import numpy as np
import pytest

from vapsr.errors import ShapeError
from vapsr.nn_ops import (
    ConvSpec,
    PixelNormParams,
    conv2d,
    gelu,
    pixel_norm,
    pixel_shuffle,
    pixel_shuffle_inverse,
)
from vapsr.tensor import Tensor, from_values

from conftest import rng
from oracles import channel_stats_two_pass, conv2d_direct, gelu_scalar


def t(arr, dtype=np.float32):
    return Tensor(np.asarray(arr, dtype=dtype), copy=False)


# ---------------------------------------------------------------------------
# ConvSpec


def test_spec_weight_shape_and_padding():
    spec = ConvSpec(64, 64, 5, dilation=3, groups=64)
    assert spec.weight_shape == (64, 1, 5, 5)
    assert spec.padding == 6
    assert spec.is_depthwise


def test_spec_invalid():
    with pytest.raises(ShapeError):
        ConvSpec(4, 4, 4)  # even kernel
    with pytest.raises(ShapeError):
        ConvSpec(4, 6, 3, groups=4)  # groups must divide out_channels
    with pytest.raises(ShapeError):
        ConvSpec(4, 4, 3, dilation=0)


# ---------------------------------------------------------------------------
# conv2d


def test_conv_1x1_scale():
    spec = ConvSpec(1, 1, 1, has_bias=False)
    x = from_values((1, 1, 2, 2), [1, 2, 3, 4])
    w = t([[[[2.0]]]])
    out = conv2d(x, spec, w)
    assert out.data.ravel().tolist() == [2.0, 4.0, 6.0, 8.0]


def test_conv_identity_kernel():
    spec = ConvSpec(2, 2, 3, has_bias=False)
    w = np.zeros((2, 2, 3, 3), dtype=np.float32)
    w[0, 0, 1, 1] = 1.0
    w[1, 1, 1, 1] = 1.0
    x = t(rng(0).normal(size=(1, 2, 5, 5)), dtype=np.float32)
    out = conv2d(x, spec, t(w))
    assert np.array_equal(out.data, x.data)


def test_conv_channel_and_weight_validation():
    spec = ConvSpec(2, 2, 3)
    x = t(np.zeros((1, 3, 4, 4)), dtype=np.float32)
    w = t(np.zeros((2, 2, 3, 3)), dtype=np.float32)
    with pytest.raises(ShapeError):
        conv2d(x, spec, w, np.zeros(2))
    with pytest.raises(ShapeError):
        conv2d(t(np.zeros((1, 2, 4, 4))), spec, w)  # missing bias


def test_depthwise_dilated_matches_direct_oracle():
    gen = rng(42)
    spec = ConvSpec(4, 4, 5, dilation=3, groups=4)
    x = gen.normal(size=(1, 4, 6, 6))
    w = gen.normal(size=spec.weight_shape)
    b = gen.normal(size=4)
    out = conv2d(t(x), spec, t(w), b.astype(np.float32))
    ref = conv2d_direct(x, w, b, dilation=3, groups=4)
    assert np.abs(out.data - ref).max() <= 1e-5


@pytest.mark.parametrize("seed,cin,cout,k,d,g", [
    (0, 3, 5, 3, 1, 1),
    (1, 4, 6, 3, 1, 2),
    (2, 6, 6, 5, 1, 6),
    (3, 4, 4, 5, 3, 4),
    (4, 8, 4, 1, 1, 4),
    (5, 5, 5, 7, 2, 1),
])
def test_conv_variants_match_direct_oracle(seed, cin, cout, k, d, g):
    gen = rng(seed)
    spec = ConvSpec(cin, cout, k, dilation=d, groups=g)
    x = gen.normal(size=(2, cin, 6, 7))
    w = gen.normal(size=spec.weight_shape)
    b = gen.normal(size=cout)
    out = conv2d(t(x), spec, t(w), b.astype(np.float32))
    ref = conv2d_direct(x, w, b, dilation=d, groups=g)
    assert np.abs(out.data - ref).max() <= 1e-5


def test_conv_linearity():
    gen = rng(7)
    spec = ConvSpec(3, 4, 3, has_bias=False)
    w = t(gen.normal(size=spec.weight_shape), dtype=np.float64)
    x = gen.normal(size=(1, 3, 6, 6))
    y = gen.normal(size=(1, 3, 6, 6))
    a, b = 1.7, -0.4
    lhs = conv2d(t(a * x + b * y, np.float64), spec, w).data
    rhs = a * conv2d(t(x, np.float64), spec, w).data + b * conv2d(t(y, np.float64), spec, w).data
    assert np.abs(lhs - rhs).max() <= 1e-5


def test_grouped_equals_dense_with_block_diagonal_weights():
    gen = rng(8)
    grouped = ConvSpec(4, 4, 3, groups=2, has_bias=False)
    dense = ConvSpec(4, 4, 3, groups=1, has_bias=False)
    wg = gen.normal(size=grouped.weight_shape)  # (4, 2, 3, 3)
    wd = np.zeros(dense.weight_shape)  # (4, 4, 3, 3)
    for oc in range(4):
        g = oc // 2
        wd[oc, 2 * g : 2 * g + 2] = wg[oc]
    x = t(gen.normal(size=(1, 4, 5, 5)), dtype=np.float64)
    out_g = conv2d(x, grouped, t(wg, np.float64)).data
    out_d = conv2d(x, dense, t(wd, np.float64)).data
    assert np.abs(out_g - out_d).max() <= 1e-12


# ---------------------------------------------------------------------------
# gelu


def test_gelu_known_points():
    x = t(np.array([0.0, 10.0, 1.0]).reshape(1, 1, 1, 3), dtype=np.float64)
    y = gelu(x).data.ravel()
    assert y[0] == 0.0
    assert abs(y[1] - 10.0) <= 1e-6
    assert abs(y[2] - gelu_scalar(1.0)) <= 1e-7


def test_gelu_shape_on_grid():
    # x * Phi(x) is not globally monotone: it dips to about -0.17 near
    # x = -0.75 before rising. Check the true shape on a dense grid.
    grid = np.linspace(-10.0, 10.0, 10_000)
    y = gelu(t(grid.reshape(1, 1, 1, -1), np.float64)).data.ravel()
    pos = grid >= 0.0
    assert np.all(np.diff(y[pos]) >= 0.0)  # monotone on [0, 10]
    assert y.min() >= -0.1701
    assert abs(grid[y.argmin()] - (-0.7518)) <= 2e-3
    assert np.all(y[grid <= -6.0] <= 0.0) and y[0] >= -1e-8  # vanishing left tail


# ---------------------------------------------------------------------------
# pixel shuffle


def test_pixel_shuffle_shape_law():
    x = t(np.zeros((1, 4, 2, 2)))
    assert pixel_shuffle(x, 2).shape == (1, 1, 4, 4)


def test_pixel_shuffle_r1_identity():
    x = t(rng(0).normal(size=(1, 3, 2, 2)), np.float32)
    assert pixel_shuffle(x, 1) is x


def test_pixel_shuffle_index_law():
    # channel k holds constant k on a 1x1 plane; r=2 lays them out row-major
    x = from_values((1, 4, 1, 1), [0, 1, 2, 3])
    out = pixel_shuffle(x, 2)
    assert out.data[0, 0].tolist() == [[0.0, 1.0], [2.0, 3.0]]


def test_pixel_shuffle_is_bijection():
    x = t(rng(1).normal(size=(2, 8, 3, 5)), np.float32)
    out = pixel_shuffle(x, 2)
    assert np.array_equal(np.sort(out.data, axis=None), np.sort(x.data, axis=None))
    back = pixel_shuffle_inverse(out, 2)
    assert np.array_equal(back.data, x.data)


def test_pixel_shuffle_channel_divisibility():
    with pytest.raises(ShapeError):
        pixel_shuffle(t(np.zeros((1, 6, 2, 2))), 2)


# ---------------------------------------------------------------------------
# pixel norm


def _pn(c, gamma=None, beta=None, eps=1e-6):
    gamma = np.ones(c) if gamma is None else np.asarray(gamma, dtype=np.float64)
    beta = np.zeros(c) if beta is None else np.asarray(beta, dtype=np.float64)
    return PixelNormParams(gamma, beta, eps)


def test_pixel_norm_constant_pixel_is_zero():
    x = t(np.full((1, 4, 2, 2), 7.0))
    out = pixel_norm(x, _pn(4))
    assert np.all(out.data == 0.0)


def test_pixel_norm_two_channel_example():
    x = from_values((1, 2, 1, 1), [1.0, 3.0])
    out = pixel_norm(x, _pn(2))
    assert np.abs(out.data.ravel() - np.array([-1.0, 1.0])).max() <= 1e-5


def test_pixel_norm_matches_scalar_two_pass():
    gen = rng(5)
    x = gen.normal(size=(1, 6, 3, 4))
    out = pixel_norm(t(x, np.float64), _pn(6)).data
    for i in range(3):
        for j in range(4):
            mean, var = channel_stats_two_pass(x[0, :, i, j])
            ref = (x[0, :, i, j] - mean) / math.sqrt(var + 1e-6)
            assert np.abs(out[0, :, i, j] - ref).max() <= 1e-12


def test_pixel_norm_output_moments():
    gen = rng(6)
    x = t(gen.normal(size=(2, 16, 6, 6)), np.float32)
    out = pixel_norm(x, _pn(16)).data.astype(np.float64)
    mean = out.mean(axis=1)
    var = out.var(axis=1)
    assert np.abs(mean).max() <= 1e-6
    assert np.abs(var - 1.0).max() <= 1e-4


def test_pixel_norm_shift_invariance():
    gen = rng(7)
    x = gen.normal(size=(1, 8, 4, 4)).astype(np.float32)
    shifted = x + 3.25  # same shift on every channel of every pixel
    a = pixel_norm(t(x), _pn(8)).data
    b = pixel_norm(t(shifted), _pn(8)).data
    assert np.abs(a - b).max() <= 1e-5


def test_pixel_norm_affine_applies_per_channel():
    gen = rng(8)
    x = gen.normal(size=(1, 3, 2, 2))
    gamma = np.array([2.0, 0.5, -1.0])
    beta = np.array([0.1, -0.2, 0.3])
    plain = pixel_norm(t(x, np.float64), _pn(3)).data
    scaled = pixel_norm(t(x, np.float64), _pn(3, gamma, beta)).data
    ref = plain * gamma[None, :, None, None] + beta[None, :, None, None]
    assert np.abs(scaled - ref).max() <= 1e-12


def test_pixel_norm_length_mismatch():
    with pytest.raises(ShapeError):
        pixel_norm(t(np.zeros((1, 4, 2, 2))), _pn(3))
