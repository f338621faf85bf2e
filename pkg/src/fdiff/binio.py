"""Little-endian array blocks shared by the volume and checkpoint formats.

A block is ``u8 dtype code, u8 ndim, ndim x u32 dims`` followed by the raw
payload in C order. Dtype codes: 0 = float32, 1 = float64, 2 = uint8.
"""
from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from fdiff.errors import CorruptFile

DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("u1"): 2}
CODE_DTYPES = {code: dt for dt, code in DTYPE_CODES.items()}


def _exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CorruptFile(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def read_struct(fh: BinaryIO, fmt: str) -> tuple:
    fmt = "<" + fmt
    return struct.unpack(fmt, _exact(fh, struct.calcsize(fmt)))


def _file_dtype(arr: np.ndarray) -> np.dtype:
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder in (">", "=") and arr.dtype.itemsize > 1 else arr.dtype
    if dt not in DTYPE_CODES:
        raise TypeError(f"unsupported dtype {arr.dtype}; use float32, float64 or uint8")
    return dt


def block_header(arr: np.ndarray) -> bytes:
    dt = _file_dtype(arr)
    if arr.ndim > 255:
        raise ValueError("too many dimensions")
    return struct.pack(f"<BB{arr.ndim}I", DTYPE_CODES[dt], arr.ndim, *arr.shape)


def write_block(fh: BinaryIO, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    fh.write(block_header(arr))
    dt = _file_dtype(arr)
    fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def read_block(fh: BinaryIO) -> np.ndarray:
    code, ndim = read_struct(fh, "BB")
    if code not in CODE_DTYPES:
        raise CorruptFile(f"unknown dtype code {code}")
    dims = read_struct(fh, f"{ndim}I") if ndim else ()
    dt = CODE_DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64))
    payload = _exact(fh, count * dt.itemsize)
    return np.frombuffer(payload, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))


def expect_end(fh: BinaryIO) -> None:
    if fh.read(1):
        raise CorruptFile("unexpected trailing bytes")
