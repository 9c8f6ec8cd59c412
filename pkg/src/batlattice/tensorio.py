"""The "BAT1" binary tensor format.

Layout (no padding, everything little-endian):

    magic   4 bytes  0x42 0x41 0x54 0x31 ("BAT1")
    version u32      1
    dtype   u8       0 = f32, 1 = f64, 2 = i64
    ndim    u8       1..4
    dims    ndim * u64
    payload row-major scalars

Round-trips are bit-exact. The i64 code is used for label sequences and
window starts exchanged through the CLI.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import BadDims, BadMagic, TruncatedPayload

MAGIC = b"BAT1"
VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODE_FOR = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}

MAX_NDIM = 4


def encode_tensor(arr: np.ndarray) -> bytes:
    """Serialize an array to BAT1 bytes."""
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _CODE_FOR:
        raise BadDims(f"unsupported dtype {arr.dtype}")
    if not 1 <= arr.ndim <= MAX_NDIM:
        raise BadDims(f"ndim {arr.ndim} outside [1, {MAX_NDIM}]")
    code = _CODE_FOR[arr.dtype]
    header = MAGIC + struct.pack("<IBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.astype(arr.dtype.newbyteorder("<")).tobytes()


def decode_tensor(blob: bytes) -> np.ndarray:
    """Parse BAT1 bytes back into an array.

    Raises:
        BadMagic: wrong magic or version.
        BadDims: bad dtype code or ndim.
        TruncatedPayload: payload length inconsistent with the header.
    """
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise BadMagic("not a BAT1 tensor")
    version, code, ndim = struct.unpack("<IBB", blob[4:10])
    if version != VERSION:
        raise BadMagic(f"unsupported version {version}")
    if code not in _DTYPE_CODES:
        raise BadDims(f"unknown dtype code {code}")
    if not 1 <= ndim <= MAX_NDIM:
        raise BadDims(f"ndim {ndim} outside [1, {MAX_NDIM}]")
    dim_end = 10 + 8 * ndim
    if len(blob) < dim_end:
        raise TruncatedPayload("header ends before dims")
    dims = struct.unpack(f"<{ndim}Q", blob[10:dim_end])
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = blob[dim_end:]
    if len(payload) != expected:
        raise TruncatedPayload(
            f"payload is {len(payload)} bytes, header implies {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def write_tensor(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())
