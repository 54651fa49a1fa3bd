"""Dataset ingestion: IDX, raw u8, and delimited text.

IDX is the big-endian format the classic digit datasets ship in: magic
0x0000's third byte is the element type (0x08 = u8), the fourth the
number of dimensions, followed by one big-endian u32 per dimension and
the row-major payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

IDX_DTYPE = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4",
             0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 or data[0] != 0 or data[1] != 0:
        raise FormatError(f"{path}: not an IDX file")
    dtype_code, ndim = data[2], data[3]
    if dtype_code not in IDX_DTYPE:
        raise FormatError(f"{path}: unknown IDX element type {dtype_code:#x}")
    if len(data) < 4 + 4 * ndim:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    arr = np.frombuffer(data[4 + 4 * ndim:], dtype=IDX_DTYPE[dtype_code])
    expected = int(np.prod(dims)) if dims else 0
    if arr.size != expected:
        raise FormatError(f"{path}: payload size {arr.size} != {expected}")
    return arr.reshape(dims)


def write_idx(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        if arr.min() < 0 or arr.max() > 255:
            raise FormatError("IDX writer only handles u8-range data")
        arr = arr.astype(np.uint8)
    with open(path, "wb") as f:
        f.write(bytes([0, 0, 0x08, arr.ndim]))
        f.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


@dataclass
class IngestSpec:
    fmt: str                      # "idx" | "raw" | "text"
    path: str
    shape: tuple | None = None    # raw: full array shape (N implied by -1)
    cardinality: int | None = None
    binarize_threshold: int | None = None


def load_dataset(spec: IngestSpec) -> tuple[np.ndarray, np.ndarray]:
    """Returns (data (N, D) int64, per-variable cardinalities)."""
    if spec.fmt == "idx":
        arr = read_idx(spec.path)
        if arr.ndim < 2:
            raise FormatError("IDX dataset needs at least 2 dimensions")
        data = arr.reshape(arr.shape[0], -1).astype(np.int64)
    elif spec.fmt == "raw":
        if spec.shape is None:
            raise FormatError("raw ingestion needs an explicit shape")
        flat = np.fromfile(spec.path, dtype=np.uint8)
        shape = tuple(spec.shape)
        d = int(np.prod(shape))
        if flat.size % d:
            raise FormatError(
                f"raw payload of {flat.size} bytes is not a multiple of {d}")
        data = flat.reshape(-1, d).astype(np.int64)
    elif spec.fmt == "text":
        data = np.loadtxt(spec.path, delimiter=",", dtype=np.int64, ndmin=2)
    else:
        raise FormatError(f"unknown dataset format {spec.fmt!r}")

    if data.size and data.min() < 0:
        raise FormatError("negative category indices")

    if spec.binarize_threshold is not None:
        data = (data >= spec.binarize_threshold).astype(np.int64)
        k = 2
    elif spec.cardinality is not None:
        k = spec.cardinality
        if data.size and data.max() >= k:
            raise FormatError(
                f"data value {int(data.max())} exceeds cardinality {k}")
    else:
        k = max(2, int(data.max()) + 1 if data.size else 2)
    cards = np.full(data.shape[1], k, dtype=np.int64)
    return data, cards
