"""Single-tensor binary file format.

Layout: a fixed 32-byte header followed by the raw array bytes in C order,
little-endian. Header fields (all little-endian uint32 unless noted):

    bytes  0-3   magic b"WST1"
    bytes  4-7   format version
    bytes  8-11  dtype code
    bytes 12-15  rank (0..4)
    bytes 16-31  dims, four uint32 (unused trailing dims are 0)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"WST1"
VERSION = 1
MAX_RANK = 4

_DTYPE_CODES = {
    np.dtype("float32"): 0,
    np.dtype("int32"): 1,
    np.dtype("uint8"): 2,
    np.dtype("int64"): 3,
    np.dtype("float64"): 4,
}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}


class TensorFormatError(ValueError):
    """Raised when a tensor file is malformed or unsupported."""


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    """Write a single array to `path` in the 32-byte-header binary format."""
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _DTYPE_CODES:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > MAX_RANK:
        raise TensorFormatError(f"rank {arr.ndim} exceeds maximum {MAX_RANK}")
    dims = list(arr.shape) + [0] * (MAX_RANK - arr.ndim)
    header = struct.pack(
        "<4s7I", MAGIC, VERSION, _DTYPE_CODES[arr.dtype], arr.ndim, *dims
    )
    assert len(header) == 32
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    """Read an array previously written by `write_tensor`."""
    with open(path, "rb") as fh:
        header = fh.read(32)
        if len(header) != 32:
            raise TensorFormatError(f"{path}: truncated header")
        magic, version, dtype_code, rank, *dims = struct.unpack("<4s7I", header)
        if magic != MAGIC:
            raise TensorFormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise TensorFormatError(f"{path}: unsupported version {version}")
        if dtype_code not in _CODE_DTYPES:
            raise TensorFormatError(f"{path}: unknown dtype code {dtype_code}")
        if rank > MAX_RANK:
            raise TensorFormatError(f"{path}: bad rank {rank}")
        shape = tuple(dims[:rank])
        dtype = _CODE_DTYPES[dtype_code]
        count = int(np.prod(shape)) if rank else 1
        data = fh.read(count * dtype.itemsize)
        if len(data) != count * dtype.itemsize:
            raise TensorFormatError(f"{path}: truncated payload")
    return np.frombuffer(data, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
