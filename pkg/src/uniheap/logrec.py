"""Fixed 40-byte durable log records and their bulk codec.

Wire layout (little-endian), offset:size
    0:1  kind        1=UPDATE 2=ALLOC 3=COMMIT 4=CHECKPOINT_HDR
                     5=CHECKPOINT_VAL 6=ATOMIC_UPDATE
    1:1  type_tag    UniType for kinds 1/5/6, else 0
    2:2  reserved
    4:4  crc         CRC-32C over the record with this field zeroed
    8:8  tx_id       0 for kinds 4/5/6
   16:8  object_id   0 in a kind-4 record marks a root-table checkpoint
   24:4  field_index ALLOC: plass id; CHECKPOINT_HDR: field count (array
                     length for arrays) or root slot index when object_id=0
   28:4  reserved2
   32:8  value       widened field value; ALLOC: array length; COMMIT: entry
                     count; CHECKPOINT_HDR: pre-GC object id / new root addr

UPDATE and ALLOC take effect only when a COMMIT with the same tx_id follows
in the log; kinds 4/5/6 are self-committing (a valid crc alone decides).
"""
from __future__ import annotations

import struct
from typing import NamedTuple

import numpy as np

from .crc import crc32c, crc32c_rows

ENTRY_SIZE = 40

KIND_UPDATE = 1
KIND_ALLOC = 2
KIND_COMMIT = 3
KIND_CHECKPOINT_HDR = 4
KIND_CHECKPOINT_VAL = 5
KIND_ATOMIC_UPDATE = 6

_STRUCT = struct.Struct("<BBHIQQIIQ")
assert _STRUCT.size == ENTRY_SIZE

ENTRY_DTYPE = np.dtype([
    ("kind", "u1"),
    ("type_tag", "u1"),
    ("reserved", "<u2"),
    ("crc", "<u4"),
    ("tx_id", "<u8"),
    ("object_id", "<u8"),
    ("field_index", "<u4"),
    ("reserved2", "<u4"),
    ("value", "<u8"),
])
assert ENTRY_DTYPE.itemsize == ENTRY_SIZE


class LogEntry(NamedTuple):
    kind: int
    type_tag: int
    tx_id: int
    object_id: int
    field_index: int
    value: int


def encode_entry(kind: int, type_tag: int, tx_id: int, object_id: int,
                 field_index: int, value: int) -> bytes:
    raw = bytearray(_STRUCT.pack(kind, type_tag, 0, 0, tx_id, object_id,
                                 field_index, 0, value))
    struct.pack_into("<I", raw, 4, crc32c(raw))
    return bytes(raw)


def encode_entries(rows: list[tuple[int, int, int, int, int, int]]) -> bytes:
    """Bulk-encode (kind, type_tag, tx_id, object_id, field_index, value)
    tuples; one vectorized crc pass instead of a per-record byte loop."""
    n = len(rows)
    if n == 0:
        return b""
    if n < 32:
        return b"".join(encode_entry(*r) for r in rows)
    arr = np.zeros(n, dtype=ENTRY_DTYPE)
    cols = np.asarray(rows, dtype=np.uint64)
    arr["kind"] = cols[:, 0]
    arr["type_tag"] = cols[:, 1]
    arr["tx_id"] = cols[:, 2]
    arr["object_id"] = cols[:, 3]
    arr["field_index"] = cols[:, 4]
    arr["value"] = cols[:, 5]
    arr["crc"] = crc32c_rows(arr.view(np.uint8).reshape(n, ENTRY_SIZE))
    return arr.tobytes()


def decode_entry(raw: bytes | memoryview) -> tuple[LogEntry, bool]:
    """Decode one record; the bool reports crc + kind validity."""
    kind, tag, _res, crc, tx_id, object_id, field_index, _res2, value = _STRUCT.unpack(bytes(raw))
    body = bytearray(raw)
    struct.pack_into("<I", body, 4, 0)
    ok = 1 <= kind <= 6 and crc32c(body) == crc
    return LogEntry(kind, tag, tx_id, object_id, field_index, value), ok


def scan_segment(buf: bytes | memoryview) -> tuple[np.ndarray, np.ndarray]:
    """Parse a whole log segment into a structured array plus a validity mask.

    The caller decides where the usable prefix ends (first invalid record)
    and whether valid records beyond that point indicate corruption.
    """
    usable = (len(buf) // ENTRY_SIZE) * ENTRY_SIZE
    arr = np.frombuffer(bytes(buf[:usable]), dtype=ENTRY_DTYPE).copy()
    if len(arr) == 0:
        return arr, np.zeros(0, dtype=bool)
    rows = arr.view(np.uint8).reshape(len(arr), ENTRY_SIZE).copy()
    stored = arr["crc"].copy()
    rows[:, 4:8] = 0
    computed = crc32c_rows(rows)
    valid = (computed == stored) & (arr["kind"] >= 1) & (arr["kind"] <= 6)
    return arr, valid


def valid_prefix_len(valid: np.ndarray) -> int:
    """Number of leading valid records (the durable log tail in records)."""
    if len(valid) == 0 or bool(valid[0]) is False:
        return 0
    bad = np.flatnonzero(~valid)
    return int(bad[0]) if len(bad) else len(valid)
