"""Minimal little-endian float32 array container ("SDT1").

Layout: ``b"SDT1"`` | u32 ndim | u32 dims[ndim] | float32 payload (row-major).
"""
import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError

MAGIC = b"SDT1"
_MAX_NDIM = 8


def encode_array(arr):
    arr = np.asarray(arr, dtype="<f4")
    header = MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return header + arr.tobytes(order="C")


def decode_array(blob, path="<bytes>"):
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise FormatError(path, "bad magic bytes, expected SDT1 header")
    (ndim,) = struct.unpack_from("<I", blob, 4)
    if ndim > _MAX_NDIM:
        raise FormatError(path, f"implausible ndim {ndim}")
    header_len = 8 + 4 * ndim
    if len(blob) < header_len:
        raise FormatError(path, "truncated header")
    dims = struct.unpack_from(f"<{ndim}I", blob, 8)
    expected = 4 * int(np.prod(dims, dtype=np.int64))
    payload = len(blob) - header_len
    if payload != expected:
        raise FormatError(
            path, f"payload is {payload} bytes but dims {tuple(dims)} need {expected}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=header_len)
    return np.reshape(data, tuple(dims)).astype(np.float32)


def write_array(path, arr):
    Path(path).write_bytes(encode_array(arr))


def read_array(path):
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise FormatError(path, "file not found") from None
    return decode_array(blob, path)
