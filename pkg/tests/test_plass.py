"""Plass descriptors: encoding, idempotent registration, crash behavior."""
import pytest
from hypothesis import given, strategies as st

from uniheap import Heap, UniType
from uniheap.errors import PlassRegionFull, SchemaMismatch
from uniheap.plass import decode_plass_region, encode_plass, validate_fields

from conftest import make_heap, reopen_after_crash


def test_first_plass_gets_id_one(heap):
    pid = heap.init_plass("Point", [("x", UniType.LONG), ("y", UniType.LONG)])
    assert pid == 1


def test_init_plass_idempotent(heap):
    fields = [("x", UniType.LONG), ("y", UniType.LONG)]
    assert heap.init_plass("Point", fields) == heap.init_plass("Point", fields)


def test_same_name_different_layout_rejected(heap):
    heap.init_plass("Point", [("x", UniType.LONG), ("y", UniType.LONG)])
    with pytest.raises(SchemaMismatch):
        heap.init_plass("Point", [("x", UniType.DOUBLE)])


def test_exists_plass(heap):
    assert heap.exists_plass("nope") is None
    pid = heap.init_plass("Point", [("x", UniType.LONG), ("y", UniType.LONG)])
    assert heap.exists_plass("Point") == pid


def test_exists_plass_costs_no_fences(heap):
    heap.init_plass("Point", [("x", UniType.LONG)])
    before = heap.dev.fence_count
    for _ in range(10):
        heap.exists_plass("Point")
        heap.exists_plass("absent")
    assert heap.dev.fence_count == before


def test_init_plass_exactly_one_fence(heap):
    before = heap.dev.fence_count
    heap.init_plass("One", [("a", UniType.INT)])
    assert heap.dev.fence_count == before + 1
    # idempotent re-registration fences nothing
    heap.init_plass("One", [("a", UniType.INT)])
    assert heap.dev.fence_count == before + 1


def test_field_index_by_declaration_order(heap):
    pid = heap.init_plass("Wide", [(f"f{i}", UniType.INT) for i in range(100)])
    plass = heap.get_plass(pid)
    assert plass.index["f0"] == 0
    assert plass.index["f99"] == 99
    assert plass.index.get("missing") is None


def test_plass_survives_crash_and_reopen(point_heap):
    pid = point_heap.exists_plass("Point")
    heap2 = reopen_after_crash(point_heap, keep="all")
    assert heap2.exists_plass("Point") == pid
    assert heap2.get_plass(pid).fields == point_heap.get_plass(pid).fields


def test_crash_before_plass_fence_loses_descriptor():
    heap = make_heap()
    target = heap.dev.fence_count + 1
    heap.dev.schedule_crash(at_fence=target)
    from uniheap.errors import SimulatedCrash
    with pytest.raises(SimulatedCrash):
        heap.init_plass("Doomed", [("a", UniType.INT)])
    heap2 = Heap.open(heap.dev.crash(keep="none"))
    assert heap2.exists_plass("Doomed") is None
    # the region self-heals: the same name registers cleanly afterwards
    pid = heap2.init_plass("Doomed", [("a", UniType.INT)])
    assert pid == 1


def test_crash_keeping_offset_but_not_record_heals():
    """The nasty interleaving: the bumped append-offset line persists but the
    record's lines do not. Decode validation must ignore the phantom."""
    heap = make_heap()
    heap.dev.schedule_crash(at_fence=heap.dev.fence_count + 1)
    from uniheap.errors import SimulatedCrash
    with pytest.raises(SimulatedCrash):
        heap.init_plass("Ghost", [("a", UniType.INT)])
    # keep only the header line (offset bump), drop the record bytes
    header_lines = {line for line in heap.dev.flushed_pending if line < 4096 // 64}
    heap2 = Heap.open(heap.dev.crash(keep=header_lines))
    assert heap2.exists_plass("Ghost") is None
    pid = heap2.init_plass("Later", [("b", UniType.LONG)])
    assert pid == 1
    heap3 = reopen_after_crash(heap2, keep="all")
    assert heap3.exists_plass("Later") == 1


def test_plass_region_full():
    heap = make_heap()
    with pytest.raises(PlassRegionFull):
        for i in range(10000):
            heap.init_plass(f"P{i}", [("a", UniType.INT)])


@given(st.lists(
    st.tuples(st.text(st.characters(min_codepoint=33, max_codepoint=0x2FFF), min_size=1, max_size=12),
              st.sampled_from(list(UniType))),
    min_size=1, max_size=20, unique_by=lambda f: f[0]))
def test_encode_decode_round_trip(fields):
    fields = validate_fields(fields)
    blob = encode_plass("Thing", fields) + bytes(64)
    plasses, end = decode_plass_region(blob)
    assert len(plasses) == 1
    assert plasses[0].name == "Thing"
    assert plasses[0].fields == fields
    assert end == len(encode_plass("Thing", fields))


def test_decode_stops_at_garbage():
    good = encode_plass("A", validate_fields([("x", UniType.INT)]))
    blob = good + b"\xff" * 16 + bytes(32)
    plasses, end = decode_plass_region(blob)
    assert [p.name for p in plasses] == ["A"]
    assert end == len(good)
