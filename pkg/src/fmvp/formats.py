"""Binary file formats: parameter checkpoints and video datasets.

Both are little-endian and bit-exact.

Checkpoint: ``FMVPCKPT`` | version u32 | count u32 | per entry:
name length u16, UTF-8 name, rank u8, extents u32 each, float32 payload.

Dataset: ``FMVPDATA`` | version u32 | N, C, T, H, W, num_classes as u32 |
N records of label u16 followed by C*T*H*W float32 values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

CKPT_MAGIC = b"FMVPCKPT"
DATA_MAGIC = b"FMVPDATA"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """A file does not match the expected binary layout."""


def _check_magic(blob: bytes, magic: bytes, path) -> None:
    found = blob[: len(magic)]
    if found != magic:
        raise FormatError(f"{path}: bad magic {found!r}, expected {magic!r}")


def encode_checkpoint(params: Mapping[str, np.ndarray]) -> bytes:
    out = bytearray(CKPT_MAGIC)
    out += struct.pack("<II", FORMAT_VERSION, len(params))
    for name, value in params.items():
        arr = np.asarray(value, dtype="<f4")
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes(order="C")
    return bytes(out)


def decode_checkpoint(blob: bytes, path="<bytes>") -> dict[str, np.ndarray]:
    _check_magic(blob, CKPT_MAGIC, path)
    try:
        pos = len(CKPT_MAGIC)
        version, count = struct.unpack_from("<II", blob, pos)
        pos += 8
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            n = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=pos)
            pos += 4 * n
            params[name] = arr.astype(np.float32).reshape(shape)
    except (struct.error, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes in checkpoint")
    return params


def save_checkpoint(path: str | Path, params: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_checkpoint(params))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes(), path)


@dataclass
class Dataset:
    """Videos ``x`` (N, C, T, H, W) in [0, 1] with integer labels ``y``."""

    x: np.ndarray
    y: np.ndarray
    num_classes: int

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.x[idx], self.y[idx], self.num_classes)


def encode_dataset(ds: Dataset) -> bytes:
    x = np.asarray(ds.x, dtype="<f4")
    N, C, T, H, W = x.shape
    out = bytearray(DATA_MAGIC)
    out += struct.pack("<I", FORMAT_VERSION)
    out += struct.pack("<6I", N, C, T, H, W, ds.num_classes)
    labels = np.asarray(ds.y, dtype="<u2")
    per = C * T * H * W
    for i in range(N):
        out += labels[i].tobytes()
        out += x[i].reshape(per).tobytes()
    return bytes(out)


def decode_dataset(blob: bytes, path="<bytes>") -> Dataset:
    _check_magic(blob, DATA_MAGIC, path)
    head = len(DATA_MAGIC) + 4 + 24
    if len(blob) < head:
        raise FormatError(f"{path}: truncated dataset header")
    (version,) = struct.unpack_from("<I", blob, len(DATA_MAGIC))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    N, C, T, H, W, K = struct.unpack_from("<6I", blob, len(DATA_MAGIC) + 4)
    per = C * T * H * W
    rec = 2 + 4 * per
    if len(blob) != head + N * rec:
        raise FormatError(f"{path}: expected {head + N * rec} bytes, found {len(blob)}")
    records = np.frombuffer(blob, dtype=np.uint8, offset=head).reshape(N, rec)
    y = records[:, :2].copy().view("<u2").reshape(N).astype(np.int64)
    x = records[:, 2:].copy().view("<f4").reshape(N, C, T, H, W).astype(np.float32)
    return Dataset(x, y, int(K))


def save_dataset(path: str | Path, ds: Dataset) -> None:
    Path(path).write_bytes(encode_dataset(ds))


def load_dataset(path: str | Path) -> Dataset:
    return decode_dataset(Path(path).read_bytes(), path)
