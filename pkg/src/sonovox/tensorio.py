"""Binary tensor container used by datasets and checkpoints.

Layout, all little-endian:

    magic   4 bytes  b"STN1"
    rank    u32
    shape   rank x u32
    dtype   u8   (0 = float32, 1 = float64, 2 = uint8)
    payload raw row-major array data
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"STN1"

_DTYPE_TAGS: dict[int, np.dtype] = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("u1"),
}
_TAG_FOR_KIND = {"f4": 0, "f8": 1, "u1": 2}


def _tag_for(arr: np.ndarray) -> int:
    key = arr.dtype.str.lstrip("<>|=")
    if key not in _TAG_FOR_KIND:
        raise FormatError(f"unsupported dtype {arr.dtype} (use float32, float64 or uint8)")
    return _TAG_FOR_KIND[key]


def write_tensor(path: str | Path, arr: np.ndarray) -> None:
    """Serialize ``arr`` to ``path`` in the STN1 container format."""
    arr = np.ascontiguousarray(arr)
    tag = _tag_for(arr)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(struct.pack("<B", tag))
        fh.write(arr.astype(_DTYPE_TAGS[tag], copy=False).tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    """Read an STN1 container, validating structure and payload size."""
    with open(path, "rb") as fh:
        data = fh.read()
    return read_tensor_bytes(data)


def read_tensor_bytes(data: bytes) -> np.ndarray:
    buf = io.BytesIO(data)
    magic = buf.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    raw = buf.read(4)
    if len(raw) < 4:
        raise FormatError("truncated header: missing rank", offset=buf.tell())
    (rank,) = struct.unpack("<I", raw)
    if rank == 0 or rank > 32:
        raise FormatError(f"implausible rank {rank}", offset=4)
    raw = buf.read(4 * rank)
    if len(raw) < 4 * rank:
        raise FormatError("truncated header: missing extents", offset=buf.tell())
    shape = struct.unpack(f"<{rank}I", raw)
    if any(s < 1 for s in shape):
        raise FormatError(f"zero extent in shape {shape}", offset=8)
    raw = buf.read(1)
    if len(raw) < 1:
        raise FormatError("truncated header: missing dtype tag", offset=buf.tell())
    tag = raw[0]
    if tag not in _DTYPE_TAGS:
        raise FormatError(f"unknown dtype tag {tag}", offset=buf.tell() - 1)
    dtype = _DTYPE_TAGS[tag]
    expected = int(np.prod(shape)) * dtype.itemsize
    payload = buf.read()
    if len(payload) != expected:
        raise FormatError(
            f"payload size {len(payload)} does not match shape {shape} "
            f"({expected} bytes expected)",
            offset=buf.tell() - len(payload),
        )
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
