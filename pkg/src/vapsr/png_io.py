"""PNG image I/O.

Images move through the package as float arrays in [0, 1], shaped
(3, h, w). PNG is the only supported format (8-bit RGB); grayscale and
palette images are promoted to RGB on load, and writing clamps to [0, 1]
before quantizing with round-half-away-from-zero.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageError, ShapeError
from .metrics import quantize_u8


def load_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except FileNotFoundError:
        raise ImageError(f"{path}: file not found") from None
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageError(f"{path}: cannot decode image ({exc})") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"expected an RGB image shaped (3, h, w), got {img.shape}")
    u8 = quantize_u8(img).transpose(1, 2, 0)
    try:
        Image.fromarray(u8, mode="RGB").save(Path(path), format="PNG")
    except OSError as exc:
        raise ImageError(f"{path}: cannot write image ({exc})") from exc
