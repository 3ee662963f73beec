"""CSV and binary streams of first-passage records.

Binary layout, all little-endian:

    magic    4 bytes  b"RLAB"
    version  u16      1
    count    u64      number of rows
    rows     count x (u8 ruined, then seven f8 in record-field order)
"""

from __future__ import annotations

import csv
import io
import struct
from typing import BinaryIO, TextIO

import numpy as np

from .path_sim import RECORD_FIELDS, FirstPassageBatch

__all__ = ["MAGIC", "VERSION", "ROW_DTYPE", "write_records_csv", "read_records_csv",
           "write_records_binary", "read_records_binary", "to_bytes", "from_bytes"]

MAGIC = b"RLAB"
VERSION = 1
_HEADER = struct.Struct("<HQ")
ROW_DTYPE = np.dtype([("ruined", "u1")] + [(k, "<f8") for k in RECORD_FIELDS[1:]])


def write_records_csv(batch: FirstPassageBatch, handle: TextIO, header_lines: tuple[str, ...] = ()) -> None:
    """One row per record, columns in record-field order; floats written with repr."""
    for line in header_lines:
        handle.write(f"# {line}\n")
    w = csv.writer(handle, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    cols = [getattr(batch, k) for k in RECORD_FIELDS]
    for i in range(len(batch)):
        w.writerow([int(cols[0][i])] + [repr(float(c[i])) for c in cols[1:]])


def read_records_csv(handle: TextIO) -> FirstPassageBatch:
    lines = (ln for ln in handle if not ln.startswith("#"))
    r = csv.reader(lines)
    head = next(r)
    if tuple(head) != tuple(RECORD_FIELDS):
        raise ValueError(f"unexpected columns {head}")
    rows = list(r)
    n = len(rows)
    b = FirstPassageBatch.empty(n)
    if n:
        arr = np.array([[float(x) for x in row] for row in rows])
        b.ruined = arr[:, 0] != 0
        for j, k in enumerate(RECORD_FIELDS[1:], start=1):
            setattr(b, k, arr[:, j].copy())
    return b


def write_records_binary(batch: FirstPassageBatch, handle: BinaryIO) -> None:
    rows = np.empty(len(batch), dtype=ROW_DTYPE)
    rows["ruined"] = batch.ruined.astype(np.uint8)
    for k in RECORD_FIELDS[1:]:
        rows[k] = getattr(batch, k)
    handle.write(MAGIC)
    handle.write(_HEADER.pack(VERSION, len(batch)))
    handle.write(rows.tobytes())


def read_records_binary(handle: BinaryIO) -> FirstPassageBatch:
    if handle.read(4) != MAGIC:
        raise ValueError("not an RLAB stream")
    version, count = _HEADER.unpack(handle.read(_HEADER.size))
    if version != VERSION:
        raise ValueError(f"unsupported RLAB version {version}")
    data = handle.read(count * ROW_DTYPE.itemsize)
    if len(data) != count * ROW_DTYPE.itemsize:
        raise ValueError("truncated RLAB stream")
    rows = np.frombuffer(data, dtype=ROW_DTYPE, count=count)
    b = FirstPassageBatch.empty(count)
    b.ruined = rows["ruined"].astype(bool)
    for k in RECORD_FIELDS[1:]:
        setattr(b, k, rows[k].astype(float))
    return b


def to_bytes(batch: FirstPassageBatch) -> bytes:
    buf = io.BytesIO()
    write_records_binary(batch, buf)
    return buf.getvalue()


def from_bytes(data: bytes) -> FirstPassageBatch:
    return read_records_binary(io.BytesIO(data))
