"""Reader and writer for the `.bag` embedding container.

Layout, little-endian: ``"MILE" | u32 version | u32 N | u32 D |
N x (u32 x, u32 y) | N*D x f32`` row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

BAG_MAGIC = b"MILE"
BAG_VERSION = 1
_HEADER = struct.Struct("<4sIII")


def encode_bag(coords: np.ndarray, embeddings: np.ndarray) -> bytes:
    coords = np.asarray(coords)
    emb = np.asarray(embeddings, dtype="<f4")
    if emb.ndim != 2 or emb.shape[0] < 1 or emb.shape[1] < 1:
        raise ValueError("embeddings must be a non-empty N x D matrix")
    if coords.shape != (emb.shape[0], 2):
        raise ValueError("coords must be N x 2")
    if coords.min() < 0 or coords.max() > 0xFFFFFFFF:
        raise ValueError("coordinates must fit in u32")
    if not np.isfinite(emb).all():
        raise ValueError("embeddings must be finite")
    n, d = emb.shape
    return (_HEADER.pack(BAG_MAGIC, BAG_VERSION, n, d)
            + coords.astype("<u4").tobytes()
            + np.ascontiguousarray(emb).tobytes())


def decode_bag(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    if len(data) < _HEADER.size:
        raise ValueError("truncated header")
    magic, version, n, d = _HEADER.unpack_from(data)
    if magic != BAG_MAGIC:
        raise ValueError("not a bag file")
    if version != BAG_VERSION:
        raise ValueError(f"unsupported bag version {version}")
    expected = _HEADER.size + 8 * n + 4 * n * d
    if len(data) != expected:
        raise ValueError(f"bag size {len(data)} != expected {expected}")
    coords = np.frombuffer(data, "<u4", 2 * n, _HEADER.size).reshape(n, 2)
    emb = np.frombuffer(data, "<f4", n * d, _HEADER.size + 8 * n).reshape(n, d)
    return coords.copy(), emb.copy()


def write_bag(path: str | Path, coords: np.ndarray, embeddings: np.ndarray) -> None:
    Path(path).write_bytes(encode_bag(coords, embeddings))


def read_bag(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    return decode_bag(Path(path).read_bytes())
