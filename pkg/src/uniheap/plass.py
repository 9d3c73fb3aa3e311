"""Persistent class descriptors (plasses) and their append-only region.

A plass freezes an object layout: a name plus an ordered field list. Records
are immutable once fenced; ids are 1-based append order and survive GC (the
plass region is never compacted). Arrays use one synthetic plass per element
type, named "[<type>", holding a single "elem" field; the per-object length
lives in the ALLOC log record.

On media each record is
    [name_len u16][name][field_count u16]{[name_len u16][name][type u8]}*
padded with zeros to 8 bytes. Decoding stops at the first byte sequence that
does not parse as a record, which is how a torn append (crash between the
record write and its fence) heals: the region was zeroed at creation, a
record prefix of zero lines fails the name_len > 0 check, and the next
append simply overwrites the garbage.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .errors import SchemaMismatch, TypeMismatch
from .types import UniType

ARRAY_NAME_PREFIX = "["

_VALID_TAGS = {t.value for t in UniType}


@dataclass(frozen=True)
class Plass:
    plass_id: int
    name: str
    fields: tuple[tuple[str, UniType], ...]
    record_offset: int = 0   # region-relative, for introspection tools
    index: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {fname: i for i, (fname, _) in enumerate(self.fields)})

    @property
    def field_count(self) -> int:
        return len(self.fields)

    @property
    def is_array(self) -> bool:
        return self.name.startswith(ARRAY_NAME_PREFIX)

    @property
    def element_type(self) -> UniType:
        return self.fields[0][1]

    def field_type(self, idx: int) -> UniType:
        return self.fields[0][1] if self.is_array else self.fields[idx][1]


def array_plass_name(element_type: UniType) -> str:
    return ARRAY_NAME_PREFIX + element_type.name.lower()


def validate_fields(fields: list[tuple[str, UniType]]) -> tuple[tuple[str, UniType], ...]:
    if not fields:
        raise TypeMismatch("a plass needs at least one field")
    if len(fields) > 0xFFFF:
        raise TypeMismatch(f"{len(fields)} fields exceed the 16-bit field count")
    seen = set()
    out = []
    for fname, ftype in fields:
        if not fname or "\0" in fname:
            raise TypeMismatch(f"bad field name {fname!r}")
        if fname in seen:
            raise SchemaMismatch(f"duplicate field name {fname!r}")
        seen.add(fname)
        out.append((fname, UniType(ftype)))
    return tuple(out)


def encode_plass(name: str, fields: tuple[tuple[str, UniType], ...]) -> bytes:
    raw_name = name.encode("utf-8")
    parts = [struct.pack("<H", len(raw_name)), raw_name, struct.pack("<H", len(fields))]
    for fname, ftype in fields:
        raw_f = fname.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_f)))
        parts.append(raw_f)
        parts.append(struct.pack("<B", ftype.value))
    blob = b"".join(parts)
    pad = (-len(blob)) % 8
    return blob + b"\0" * pad


def decode_plass_at(buf: bytes | memoryview, offset: int, plass_id: int) -> tuple[Plass, int] | None:
    """Decode one record at offset; None when the bytes do not form a valid
    record (zeroed space, torn append, or trailing garbage)."""
    view = memoryview(buf)
    n = len(view)
    pos = offset
    if pos + 2 > n:
        return None
    (name_len,) = struct.unpack_from("<H", view, pos)
    pos += 2
    if name_len == 0 or pos + name_len + 2 > n:
        return None
    raw_name = bytes(view[pos:pos + name_len])
    if b"\0" in raw_name:
        return None
    try:
        name = raw_name.decode("utf-8")
    except UnicodeDecodeError:
        return None
    pos += name_len
    (field_count,) = struct.unpack_from("<H", view, pos)
    pos += 2
    if field_count == 0:
        return None
    fields = []
    for _ in range(field_count):
        if pos + 2 > n:
            return None
        (flen,) = struct.unpack_from("<H", view, pos)
        pos += 2
        if flen == 0 or pos + flen + 1 > n:
            return None
        raw_f = bytes(view[pos:pos + flen])
        if b"\0" in raw_f:
            return None
        try:
            fname = raw_f.decode("utf-8")
        except UnicodeDecodeError:
            return None
        pos += flen
        tag = view[pos]
        pos += 1
        if tag not in _VALID_TAGS:
            return None
        fields.append((fname, UniType(tag)))
    if len({f for f, _ in fields}) != field_count:
        return None
    end = pos + ((-pos) % 8)
    if end > n or any(view[pos:end]):
        return None
    return Plass(plass_id, name, tuple(fields), record_offset=offset), end


def decode_plass_region(buf: bytes | memoryview) -> tuple[list[Plass], int]:
    """Decode records from the start until the first invalid one; returns the
    plass list and the validated append offset."""
    plasses: list[Plass] = []
    pos = 0
    while True:
        decoded = decode_plass_at(buf, pos, len(plasses) + 1)
        if decoded is None:
            return plasses, pos
        plass, pos = decoded
        plasses.append(plass)
