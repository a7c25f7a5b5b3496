"""Minimal binary tensor format for golden tests.

Layout: little-endian u32 dtype tag, u32 ndim, u64 per dimension, then the
elements in C order, little-endian.
"""

from __future__ import annotations

import struct

import numpy as np

DTYPE_TAGS = {
    np.dtype("<f4"): 0,
    np.dtype("<i8"): 1,
    np.dtype("<f8"): 2,
    np.dtype("<i4"): 3,
}
TAG_DTYPES = {v: k for k, v in DTYPE_TAGS.items()}


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, order="C")  # ascontiguousarray would promote 0-d to 1-d
    dt = arr.dtype.newbyteorder("<")
    if np.dtype(dt) not in DTYPE_TAGS:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    head = struct.pack("<II", DTYPE_TAGS[np.dtype(dt)], arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    return head + dims + arr.astype(dt, copy=False).tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        raise ValueError("truncated tensor header")
    tag, ndim = struct.unpack_from("<II", buf, 0)
    if tag not in TAG_DTYPES:
        raise ValueError(f"unknown dtype tag {tag}")
    dims = struct.unpack_from(f"<{ndim}Q", buf, 8) if ndim else ()
    dtype = TAG_DTYPES[tag]
    off = 8 + 8 * ndim
    count = 1
    for d in dims:
        count *= d
    expect = off + count * dtype.itemsize
    if len(buf) != expect:
        raise ValueError(f"payload size mismatch: have {len(buf)}, expected {expect}")
    return np.frombuffer(buf[off:], dtype=dtype).reshape(dims).copy()


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return tensor_from_bytes(f.read())
