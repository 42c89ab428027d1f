"""Versioned binary checkpoint: named float32 parameter blocks.

Block layout after the header: name length (u16 LE), UTF-8 name, element
count (u32 LE), float32 little-endian payload. Round trips are bit-exact.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from ..errors import BundleFormatError, BundleVersionError

MAGIC = b"HCKP"
VERSION = 1


def dump_blocks(blocks: dict[str, np.ndarray]) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<H", VERSION))
    out.write(struct.pack("<I", len(blocks)))
    for name, values in blocks.items():
        encoded = name.encode("utf-8")
        flat = np.ascontiguousarray(values, dtype="<f4").reshape(-1)
        out.write(struct.pack("<H", len(encoded)))
        out.write(encoded)
        out.write(struct.pack("<I", flat.size))
        out.write(flat.tobytes())
    return out.getvalue()


def parse_blocks(payload: bytes) -> dict[str, np.ndarray]:
    view = io.BytesIO(payload)

    def take(n: int) -> bytes:
        chunk = view.read(n)
        if len(chunk) != n:
            raise BundleFormatError("checkpoint truncated")
        return chunk

    if take(4) != MAGIC:
        raise BundleFormatError("not a checkpoint block stream")
    (version,) = struct.unpack("<H", take(2))
    if version != VERSION:
        raise BundleVersionError(
            f"checkpoint version {version} unsupported, expected {VERSION}")
    (count,) = struct.unpack("<I", take(4))
    blocks: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (size,) = struct.unpack("<I", take(4))
        blocks[name] = np.frombuffer(take(size * 4), dtype="<f4").copy()
    return blocks


def save_checkpoint(path, blocks: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_blocks(blocks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return parse_blocks(fh.read())


def model_blocks(params) -> dict[str, np.ndarray]:
    """Named float32 blocks for a list of Parameters."""
    return {p.name: p.value for p in params}


def restore_params(params, blocks: dict[str, np.ndarray]) -> None:
    """Load float32 blocks back into parameters (as float64 values)."""
    for p in params:
        if p.name not in blocks:
            raise BundleFormatError(f"checkpoint missing block {p.name!r}")
        flat = blocks[p.name]
        if flat.size != p.value.size:
            raise BundleFormatError(
                f"block {p.name!r} has {flat.size} values, expected {p.value.size}")
        p.value[...] = flat.astype(np.float64).reshape(p.value.shape)
