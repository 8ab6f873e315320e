"""Dense 4-D tensors and the primitive arithmetic the layer modules build on.

Shapes follow the (batch, channels, height, width) convention with the
backing array stored row-major in that order. Storage is float32; the
layer modules accumulate reductions in float64 and round once when
producing their output. float64 tensors are also supported so that
verification work (finite-difference gradient checks) can run entirely in
64-bit.

Tensors are immutable once constructed: the backing array is marked
read-only, so they are safe to share across threads and to alias inside
cached autograd contexts.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError

STORAGE_DTYPE = np.float32
ACCUM_DTYPE = np.float64

_ALLOWED_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense (n, c, h, w) array of real values."""

    __slots__ = ("data",)

    def __init__(self, array: np.ndarray, copy: bool = True):
        arr = np.array(array, copy=copy) if copy else np.asarray(array)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are 4-D (n, c, h, w), got ndim={arr.ndim}")
        if arr.dtype not in _ALLOWED_DTYPES:
            raise ShapeError(f"unsupported dtype {arr.dtype}; use float32 or float64")
        if min(arr.shape) < 1:
            raise ShapeError(f"all dimensions must be >= 1, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def astype(self, dtype) -> "Tensor":
        if self.data.dtype == dtype:
            return self
        return _wrap(self.data.astype(dtype))

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


def _wrap(array: np.ndarray) -> Tensor:
    """Adopt a freshly produced array without copying."""
    return Tensor(array, copy=False)


def _check_shape(shape: Sequence[int]) -> tuple[int, int, int, int]:
    if len(shape) != 4:
        raise ShapeError(f"expected 4 dimensions, got {tuple(shape)}")
    if any(int(s) < 1 for s in shape):
        raise ShapeError(f"all dimensions must be >= 1, got {tuple(shape)}")
    return tuple(int(s) for s in shape)


def zeros(shape: Sequence[int], dtype=STORAGE_DTYPE) -> Tensor:
    return _wrap(np.zeros(_check_shape(shape), dtype=dtype))


def full(shape: Sequence[int], value: float, dtype=STORAGE_DTYPE) -> Tensor:
    return _wrap(np.full(_check_shape(shape), value, dtype=dtype))


def from_values(shape: Sequence[int], values: Iterable[float], dtype=STORAGE_DTYPE) -> Tensor:
    """Build a tensor from a flat row-major (n, c, h, w) value sequence."""
    shape = _check_shape(shape)
    flat = np.asarray(list(values), dtype=dtype)
    n_expected = int(np.prod(shape))
    if flat.size != n_expected:
        raise ShapeError(f"got {flat.size} values for shape {shape} ({n_expected} expected)")
    return _wrap(flat.reshape(shape))


def zeros_like(t: Tensor) -> Tensor:
    return _wrap(np.zeros_like(t.data))


def ones_like(t: Tensor) -> Tensor:
    return _wrap(np.ones_like(t.data))


def pad_zero(t: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Zero-pad the two spatial dimensions by the given amounts per side."""
    if pad_h < 0 or pad_w < 0:
        raise ShapeError(f"pads must be >= 0, got ({pad_h}, {pad_w})")
    if pad_h == 0 and pad_w == 0:
        return t
    return _wrap(np.pad(t.data, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w))))


def crop(t: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Inverse of :func:`pad_zero`: strip a border from the spatial dims."""
    if pad_h == 0 and pad_w == 0:
        return t
    _, _, h, w = t.shape
    if 2 * pad_h >= h or 2 * pad_w >= w:
        raise ShapeError(f"cannot crop ({pad_h}, {pad_w}) from spatial dims ({h}, {w})")
    return _wrap(t.data[:, :, pad_h : h - pad_h, pad_w : w - pad_w].copy())


def _binary(a: Tensor, b: Tensor, op) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return _wrap(op(a.data, b.data))


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.add)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.subtract)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.multiply)
