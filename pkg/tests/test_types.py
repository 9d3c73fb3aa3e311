"""Value codec exactness and the cross-language type table."""
import math
import struct

import pytest
from hypothesis import given, strategies as st

from uniheap import UniType, allowed_unitypes, decode_value, encode_value, map_foreign_type
from uniheap.errors import TypeMismatch, UnmappedType
from uniheap.types import LANGUAGE_TYPE_TABLE


@given(st.integers(-128, 127))
def test_char_round_trip(v):
    assert decode_value(UniType.CHAR, encode_value(UniType.CHAR, v)) == v


@given(st.integers(-(1 << 15), (1 << 15) - 1))
def test_short_round_trip(v):
    assert decode_value(UniType.SHORT, encode_value(UniType.SHORT, v)) == v


@given(st.integers(-(1 << 31), (1 << 31) - 1))
def test_int_round_trip(v):
    assert decode_value(UniType.INT, encode_value(UniType.INT, v)) == v


@given(st.integers(-(1 << 63), (1 << 63) - 1))
def test_long_round_trip_full_range(v):
    assert decode_value(UniType.LONG, encode_value(UniType.LONG, v)) == v


@given(st.floats(allow_nan=True, allow_infinity=True))
def test_double_round_trip_bit_exact(v):
    raw = encode_value(UniType.DOUBLE, v)
    back = decode_value(UniType.DOUBLE, raw)
    assert struct.pack("<d", back) == struct.pack("<d", v)


@given(st.integers(0, (1 << 32) - 1))
def test_float_round_trip_bit_exact_over_bit_patterns(bits):
    """Every float32 bit pattern that survives the Python float boundary
    round-trips exactly, quiet-NaN payloads included."""
    v = struct.unpack("<f", struct.pack("<I", bits))[0]
    canonical = struct.unpack("<I", struct.pack("<f", v))[0]
    raw = encode_value(UniType.FLOAT, v)
    assert raw == canonical
    back = decode_value(UniType.FLOAT, raw)
    assert struct.pack("<f", back) == struct.pack("<I", canonical)


def test_double_nan_payload_preserved():
    bits = 0x7FF8DEADBEEF0001  # quiet NaN with a payload
    v = struct.unpack("<d", struct.pack("<Q", bits))[0]
    assert math.isnan(v)
    assert encode_value(UniType.DOUBLE, v) == bits
    assert struct.pack("<d", decode_value(UniType.DOUBLE, bits)) == struct.pack("<Q", bits)


def test_float_quiet_nan_payload_preserved():
    bits = 0x7FC00F0F
    v = struct.unpack("<f", struct.pack("<I", bits))[0]
    assert math.isnan(v)
    assert encode_value(UniType.FLOAT, v) == bits


@given(st.integers(0, (1 << 64) - 1))
def test_reference_round_trip(v):
    assert decode_value(UniType.REFERENCE, encode_value(UniType.REFERENCE, v)) == v


def test_range_violations_rejected():
    with pytest.raises(TypeMismatch):
        encode_value(UniType.CHAR, 128)
    with pytest.raises(TypeMismatch):
        encode_value(UniType.SHORT, -40000)
    with pytest.raises(TypeMismatch):
        encode_value(UniType.INT, 1 << 31)
    with pytest.raises(TypeMismatch):
        encode_value(UniType.LONG, 1 << 63)


def test_wrong_python_type_rejected():
    with pytest.raises(TypeMismatch):
        encode_value(UniType.LONG, 3.5)          # float into an integer slot
    with pytest.raises(TypeMismatch):
        encode_value(UniType.DOUBLE, "x")
    with pytest.raises(TypeMismatch):
        encode_value(UniType.REFERENCE, 1.0)


def test_booleans_store_as_zero_one():
    assert encode_value(UniType.CHAR, True) == 1
    assert encode_value(UniType.CHAR, False) == 0


# -- the language mapping table, cell for cell ----------------------------------------

JAVA_ROW = {
    "boolean": UniType.CHAR, "byte": UniType.CHAR, "char": UniType.SHORT,
    "int": UniType.INT, "long": UniType.LONG, "float": UniType.FLOAT,
    "double": UniType.DOUBLE, "reference": UniType.REFERENCE, "array": UniType.REFERENCE,
}
PYTHON_ROW = {
    "int": UniType.INT, "long": UniType.LONG, "float": UniType.FLOAT,
    "list": UniType.REFERENCE, "dict": UniType.REFERENCE, "tuple": UniType.REFERENCE,
}


@pytest.mark.parametrize("foreign,expected", sorted(JAVA_ROW.items()))
def test_java_cells(foreign, expected):
    assert map_foreign_type("java", foreign) == expected


@pytest.mark.parametrize("foreign,expected", sorted(PYTHON_ROW.items()))
def test_python_cells(foreign, expected):
    assert map_foreign_type("python", foreign) == expected


def test_javascript_cells():
    assert map_foreign_type("javascript", "boolean") == UniType.CHAR
    assert map_foreign_type("javascript", "array") == UniType.REFERENCE
    # number is representable in any numeric column; double is the default
    assert map_foreign_type("javascript", "num") == UniType.DOUBLE
    assert allowed_unitypes("javascript", "num") == (
        UniType.INT, UniType.LONG, UniType.FLOAT, UniType.DOUBLE)


@pytest.mark.parametrize("language,foreign", [
    ("python", "double"),   # empty cell in the table
    ("python", "char"),
    ("python", "short"),
    ("python", "str"),      # strings are deliberately unmapped
    ("java", "num"),
    ("javascript", "char"),
    ("javascript", "string"),
    ("rust", "i64"),        # unknown language
])
def test_absent_cells_raise(language, foreign):
    with pytest.raises(UnmappedType):
        map_foreign_type(language, foreign)


def test_table_is_exactly_the_documented_rows():
    assert set(LANGUAGE_TYPE_TABLE) == {"java", "python", "javascript"}
    assert {k: v[0] for k, v in LANGUAGE_TYPE_TABLE["java"].items()} == JAVA_ROW
    assert {k: v[0] for k, v in LANGUAGE_TYPE_TABLE["python"].items()} == PYTHON_ROW
    assert set(LANGUAGE_TYPE_TABLE["javascript"]) == {"boolean", "num", "array"}
