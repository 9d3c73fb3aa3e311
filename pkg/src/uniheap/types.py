"""Language-neutral value types and the cross-runtime type mapping.

Seven built-in types cover every field slot: six numeral widths plus a
reference that holds another object's id. Container types are deliberately
absent; arrays are ordinary objects with one slot per element. All field
values travel through the log widened to 8 bytes; narrowing on read is
bit-exact for the declared type (two's complement for integers, IEEE-754 bit
patterns for floats).
"""
from __future__ import annotations

import struct
from enum import IntEnum

from .errors import TypeMismatch, UnmappedType


class UniType(IntEnum):
    CHAR = 1        # 8-bit signed
    SHORT = 2       # 16-bit signed
    INT = 3         # 32-bit signed
    LONG = 4        # 64-bit signed
    FLOAT = 5       # IEEE-754 binary32
    DOUBLE = 6      # IEEE-754 binary64
    REFERENCE = 7   # 64-bit object id, 0 = null


_INT_BITS = {UniType.CHAR: 8, UniType.SHORT: 16, UniType.INT: 32, UniType.LONG: 64}

_F32 = struct.Struct("<f")
_F64 = struct.Struct("<d")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")

U64_MASK = 0xFFFFFFFFFFFFFFFF


def is_reference(t: UniType) -> bool:
    return t == UniType.REFERENCE


def zero_value(t: UniType):
    return 0.0 if t in (UniType.FLOAT, UniType.DOUBLE) else 0


def encode_value(t: UniType, value) -> int:
    """Widen a typed Python value to the 8-byte log representation."""
    if t in _INT_BITS:
        if isinstance(value, float) or not isinstance(value, int):
            raise TypeMismatch(f"{t.name} field requires an int, got {type(value).__name__}")
        bits = _INT_BITS[t]
        lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
        if not lo <= value <= hi:
            raise TypeMismatch(f"{value} out of range for {t.name}")
        return value & U64_MASK
    if t == UniType.FLOAT:
        if not isinstance(value, (float, int)) or isinstance(value, bool):
            raise TypeMismatch(f"FLOAT field requires a float, got {type(value).__name__}")
        return _U32.unpack(_F32.pack(float(value)))[0]
    if t == UniType.DOUBLE:
        if not isinstance(value, (float, int)) or isinstance(value, bool):
            raise TypeMismatch(f"DOUBLE field requires a float, got {type(value).__name__}")
        return _U64.unpack(_F64.pack(float(value)))[0]
    if t == UniType.REFERENCE:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeMismatch(f"REFERENCE field requires an object id, got {type(value).__name__}")
        if not 0 <= value <= U64_MASK:
            raise TypeMismatch(f"object id {value} out of range")
        return value
    raise TypeMismatch(f"unknown type {t!r}")


def decode_value(t: UniType, raw: int):
    """Narrow an 8-byte log value back to the declared type."""
    if t in _INT_BITS:
        bits = _INT_BITS[t]
        v = raw & ((1 << bits) - 1)
        if v >= 1 << (bits - 1):
            v -= 1 << bits
        return v
    if t == UniType.FLOAT:
        return _F32.unpack(_U32.pack(raw & 0xFFFFFFFF))[0]
    if t == UniType.DOUBLE:
        return _F64.unpack(_U64.pack(raw))[0]
    if t == UniType.REFERENCE:
        return raw
    raise TypeMismatch(f"unknown type {t!r}")


# Cross-language mapping. Each cell lists the uniheap types a foreign type
# may occupy, in table-column order; a missing key is an unmapped cell.
# JavaScript's number is representable in any numeric column, so writes
# coerce to the declared field type and reads default to DOUBLE.
LANGUAGE_TYPE_TABLE: dict[str, dict[str, tuple[UniType, ...]]] = {
    "java": {
        "boolean": (UniType.CHAR,),
        "byte": (UniType.CHAR,),
        "char": (UniType.SHORT,),
        "int": (UniType.INT,),
        "long": (UniType.LONG,),
        "float": (UniType.FLOAT,),
        "double": (UniType.DOUBLE,),
        "reference": (UniType.REFERENCE,),
        "array": (UniType.REFERENCE,),
    },
    "python": {
        "int": (UniType.INT,),
        "long": (UniType.LONG,),
        "float": (UniType.FLOAT,),
        "list": (UniType.REFERENCE,),
        "dict": (UniType.REFERENCE,),
        "tuple": (UniType.REFERENCE,),
    },
    "javascript": {
        "boolean": (UniType.CHAR,),
        "num": (UniType.INT, UniType.LONG, UniType.FLOAT, UniType.DOUBLE),
        "array": (UniType.REFERENCE,),
    },
}

_DEFAULTS = {("javascript", "num"): UniType.DOUBLE}


def map_foreign_type(language: str, foreign_type: str) -> UniType:
    """Resolve a foreign language type to its uniheap type.

    Raises UnmappedType for absent table cells (e.g. python "double").
    """
    try:
        cells = LANGUAGE_TYPE_TABLE[language][foreign_type]
    except KeyError:
        raise UnmappedType(f"{language}:{foreign_type} has no mapping") from None
    return _DEFAULTS.get((language, foreign_type), cells[0])


def allowed_unitypes(language: str, foreign_type: str) -> tuple[UniType, ...]:
    try:
        return LANGUAGE_TYPE_TABLE[language][foreign_type]
    except KeyError:
        raise UnmappedType(f"{language}:{foreign_type} has no mapping") from None
