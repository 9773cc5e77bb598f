"""Binary tensor records.

Each record is::

    b"MMFFTNSR" | u8 dtype code | u8 ndim | ndim x u64 dims | payload

with little-endian integers and a row-major little-endian payload.
Dtype codes: 1 = float32, 2 = float64, 3 = complex64 (interleaved re/im).
A file may hold any number of consecutive records.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"MMFFTNSR"
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<c8")}
CODE_FOR = {dt: code for code, dt in DTYPE_CODES.items()}
DTYPE_NAMES = {1: "float32", 2: "float64", 3: "complex64"}


class TensorFormatError(ValueError):
    pass


def write_record(fh, array, code=None):
    a = np.asarray(array)
    if code is None:
        code = CODE_FOR.get(a.dtype.newbyteorder("<"))
        if code is None:
            raise TensorFormatError(f"unsupported dtype {a.dtype}")
    if a.ndim > 255:
        raise TensorFormatError("too many dimensions")
    a = np.asarray(a, dtype=DTYPE_CODES[code], order="C")  # ascontiguousarray would make 0-d arrays 1-d
    fh.write(MAGIC)
    fh.write(struct.pack("<BB", code, a.ndim))
    fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
    fh.write(a.tobytes(order="C"))


def read_header(fh):
    """Return ``(code, shape)`` of the next record, or ``None`` at end of file."""
    magic = fh.read(len(MAGIC))
    if not magic:
        return None
    if magic != MAGIC:
        raise TensorFormatError("bad magic")
    head = fh.read(2)
    if len(head) != 2:
        raise TensorFormatError("truncated header")
    code, ndim = struct.unpack("<BB", head)
    if code not in DTYPE_CODES:
        raise TensorFormatError(f"unknown dtype code {code}")
    raw = fh.read(8 * ndim)
    if len(raw) != 8 * ndim:
        raise TensorFormatError("truncated dims")
    return code, tuple(struct.unpack(f"<{ndim}Q", raw))


def read_record(fh):
    head = read_header(fh)
    if head is None:
        return None
    code, shape = head
    dt = DTYPE_CODES[code]
    n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    buf = fh.read(n)
    if len(buf) != n:
        raise TensorFormatError("truncated payload")
    return np.frombuffer(buf, dtype=dt).reshape(shape).copy()


def write_records(path, arrays, code=None):
    with open(path, "wb") as fh:
        for a in arrays:
            write_record(fh, a, code)


def read_records(path):
    out = []
    with open(path, "rb") as fh:
        while (a := read_record(fh)) is not None:
            out.append(a)
    return out


def scan_headers(path):
    """List ``(code, shape)`` of every record without loading payloads."""
    heads = []
    with open(path, "rb") as fh:
        while (h := read_header(fh)) is not None:
            code, shape = h
            heads.append(h)
            fh.seek(int(np.prod(shape, dtype=np.int64)) * DTYPE_CODES[code].itemsize, 1)
    return heads
