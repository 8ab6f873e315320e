"""Binary weight archive with an embedded config and a trailing checksum.

Byte layout (all integers little-endian):

    magic            4 bytes, b"VAPW"
    format version   u16 (currently 1)
    flags            u16 (currently 0)
    config length    u32, then that many bytes of UTF-8 config JSON
    tensor count     u32
    per tensor:
        name length  u16, then that many bytes of UTF-8 name
        rank         u8
        dims         u32 * rank
        payload      float32 * prod(dims), row-major
    crc32            u32 over every preceding byte

The embedded config is authoritative: loading with an explicit preset
whose config disagrees is an error, and the archive's tensor set must
match the config's parameter plan exactly (names and shapes).
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import (
    ArchiveCrcError,
    ArchiveLayoutError,
    ArchiveMagicError,
    ArchiveMismatchError,
    ConfigError,
)
from .model import ModelConfig, Network, expected_param_shapes

MAGIC = b"VAPW"
FORMAT_VERSION = 1
_MAX_RANK = 8


class _Reader:
    """Bounds-checked cursor over the archive body."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise ArchiveLayoutError(
                f"truncated archive: needed {n} bytes for {what} at offset {self.pos}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    @property
    def exhausted(self) -> bool:
        return self.pos == len(self.buf)


def to_bytes(network: Network) -> bytes:
    """Serialize a network (config plus parameters, in plan order)."""
    parts = [MAGIC, struct.pack("<HH", FORMAT_VERSION, 0)]
    config_blob = network.config.to_json().encode("utf-8")
    parts.append(struct.pack("<I", len(config_blob)))
    parts.append(config_blob)

    names = list(expected_param_shapes(network.config))
    parts.append(struct.pack("<I", len(names)))
    for name in names:
        arr = np.ascontiguousarray(network.params[name], dtype="<f4")
        blob = name.encode("utf-8")
        parts.append(struct.pack("<H", len(blob)))
        parts.append(blob)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())

    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def from_bytes(data: bytes, preset_config: ModelConfig | None = None) -> Network:
    """Parse and validate an archive, returning a ready network.

    Raises a distinct :class:`~vapsr.errors.ArchiveError` subclass for bad
    magic, checksum failure, malformed layout, and content that disagrees
    with the config (unknown, missing, or mis-shaped tensors, or a preset
    conflict).
    """
    if len(data) < len(MAGIC) + 4:
        raise ArchiveLayoutError(f"archive too short ({len(data)} bytes)")
    if data[: len(MAGIC)] != MAGIC:
        raise ArchiveMagicError(f"bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    declared = struct.unpack("<I", data[-4:])[0]
    actual = zlib.crc32(data[:-4])
    if declared != actual:
        raise ArchiveCrcError(f"checksum mismatch: stored {declared:#010x}, computed {actual:#010x}")

    r = _Reader(data[len(MAGIC) : -4])
    version = r.u16("format version")
    if version != FORMAT_VERSION:
        raise ArchiveLayoutError(f"unsupported format version {version}")
    r.u16("flags")

    config_len = r.u32("config length")
    try:
        config_text = r.take(config_len, "config JSON").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ArchiveLayoutError(f"config JSON is not valid UTF-8: {exc}") from exc
    try:
        config = ModelConfig.from_json(config_text)
    except ConfigError as exc:
        raise ArchiveLayoutError(f"embedded config rejected: {exc}") from exc

    count = r.u32("tensor count")
    tensors: dict[str, np.ndarray] = {}
    for idx in range(count):
        name_len = r.u16(f"tensor {idx} name length")
        try:
            name = r.take(name_len, f"tensor {idx} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ArchiveLayoutError(f"tensor {idx} name is not valid UTF-8: {exc}") from exc
        if name in tensors:
            raise ArchiveLayoutError(f"duplicate tensor name '{name}'")
        rank = r.u8(f"tensor '{name}' rank")
        if rank == 0 or rank > _MAX_RANK:
            raise ArchiveLayoutError(f"tensor '{name}' has unsupported rank {rank}")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"tensor '{name}' dims"))
        if any(d == 0 for d in dims):
            raise ArchiveLayoutError(f"tensor '{name}' declares a zero dimension {dims}")
        n_elem = 1
        for d in dims:
            n_elem *= d
        payload = r.take(4 * n_elem, f"tensor '{name}' payload")
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
        arr.flags.writeable = False
        tensors[name] = arr
    if not r.exhausted:
        raise ArchiveLayoutError(f"{len(r.buf) - r.pos} trailing bytes after the last tensor")

    if preset_config is not None and config != preset_config:
        raise ArchiveMismatchError(
            f"archive config (variant '{config.variant_tag}') does not match the "
            f"requested preset (variant '{preset_config.variant_tag}')"
        )

    expected = expected_param_shapes(config)
    for name in tensors:
        if name not in expected:
            raise ArchiveMismatchError(f"archive contains unknown tensor '{name}'")
    for name, shape in expected.items():
        if name not in tensors:
            raise ArchiveMismatchError(f"archive is missing tensor '{name}'")
        if tuple(tensors[name].shape) != shape:
            raise ArchiveMismatchError(
                f"tensor '{name}' has shape {tensors[name].shape}, expected {shape}"
            )
    return Network(config, tensors)


def save_weights(path: str | Path, network: Network) -> None:
    Path(path).write_bytes(to_bytes(network))


def load_weights(path: str | Path, preset_config: ModelConfig | None = None) -> Network:
    return from_bytes(Path(path).read_bytes(), preset_config)
