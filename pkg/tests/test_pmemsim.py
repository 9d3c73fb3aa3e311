"""Simulated device: flush/fence semantics, crash model, counters."""
import itertools
import struct

import pytest
from hypothesis import given, strategies as st

from uniheap import LINE_SIZE, SimulatedNvm
from uniheap.errors import InvalidCapacity, Misaligned, OutOfBounds, SimulatedCrash


def test_fresh_device_zeroed(tmp_path):
    dev = SimulatedNvm.create(str(tmp_path / "d.img"), 1 << 20)
    assert dev.read(0, 4096) == bytes(4096)
    assert dev.fence_count == 0
    assert dev.flush_count == 0


def test_capacity_must_be_line_multiple():
    with pytest.raises(InvalidCapacity):
        SimulatedNvm.create(None, 100)
    with pytest.raises(InvalidCapacity):
        SimulatedNvm.create(None, 0)


def test_create_then_reopen_round_trips(tmp_path):
    path = str(tmp_path / "d.img")
    dev = SimulatedNvm.create(path, 4096)
    pattern = bytes(range(256)) * 4
    dev.write(128, pattern)
    dev.flush_range(128, len(pattern))
    dev.fence()
    persisted = dev.read_persisted(0, 4096)
    dev.close()
    dev2 = SimulatedNvm.open(path)
    assert dev2.read(0, 4096) == persisted
    assert dev2.read(128, len(pattern)) == pattern


def test_write_visible_volatile_only():
    dev = SimulatedNvm.create(None, 4096)
    dev.write(0, b"12345678")
    assert dev.read(0, 8) == b"12345678"
    assert dev.read_persisted(0, 8) == bytes(8)


def test_unflushed_write_dropped_by_crash():
    dev = SimulatedNvm.create(None, 4096)
    dev.write(0, b"12345678")
    dev2 = dev.crash(keep="all")  # dirty lines die regardless of the keep policy
    assert dev2.read(0, 8) == bytes(8)


def test_write_spanning_two_lines_marks_two_dirty():
    dev = SimulatedNvm.create(None, 4096)
    dev.write(60, bytes(8))  # 60..68 touches lines 0 and 1
    assert dev.dirty_lines == {0, 1}


def test_flush_clean_range_is_noop():
    dev = SimulatedNvm.create(None, 4096)
    dev.write(0, b"x")
    dev.flush_range(0, 1)
    count = dev.flush_count
    dev.flush_range(1024, 512)  # clean lines
    assert dev.flush_count == count
    assert dev.flushed_pending == {0}


def test_flush_128_bytes_pends_two_lines():
    dev = SimulatedNvm.create(None, 4096)
    dev.write(0, bytes([1] * 128))
    dev.flush_range(0, 128)
    assert dev.flushed_pending == {0, 1}
    assert dev.flush_count == 2


def test_flushed_but_unfenced_may_or_may_not_survive():
    outcomes = set()
    for keep in ("all", "none"):
        dev = SimulatedNvm.create(None, 4096)
        dev.write(0, b"AAAAAAA")
        dev.flush_range(0, 8)
        dev2 = dev.crash(keep=keep)
        outcomes.add(dev2.read(0, 7))
    assert outcomes == {b"AAAAAAA", bytes(7)}


def test_fence_persists_and_counts():
    dev = SimulatedNvm.create(None, 4096)
    dev.fence()
    assert dev.fence_count == 1  # empty fence still counts
    for i in range(3):
        dev.write(i * 64, b"z")
        dev.flush_range(i * 64, 1)
        dev.fence()
    assert dev.fence_count == 4
    dev2 = dev.crash(keep="none")
    assert dev2.read(64, 1) == b"z"


def test_reads_never_touch_fence_count():
    dev = SimulatedNvm.create(None, 4096)
    dev.write(0, b"abc")
    dev.flush_range(0, 3)
    dev.fence()
    before = dev.fence_count
    for _ in range(100):
        dev.read(0, 64)
        dev.read_persisted(0, 64)
    assert dev.fence_count == before


def test_atomic_write_u64_round_trip():
    dev = SimulatedNvm.create(None, 4096)
    dev.atomic_write_u64(64, 0x1122334455667788)
    assert dev.read_u64(64) == 0x1122334455667788
    with pytest.raises(Misaligned):
        dev.atomic_write_u64(63, 1)


def test_atomic_write_never_torn_under_crash():
    old = struct.pack("<Q", 0xAAAAAAAAAAAAAAAA)
    new_val = 0x5555555555555555
    for keep in ("all", "none"):
        dev = SimulatedNvm.create(None, 4096)
        dev.write(64, old)
        dev.flush_range(64, 8)
        dev.fence()
        dev.atomic_write_u64(64, new_val)
        dev.flush_range(64, 8)
        dev2 = dev.crash(keep=keep)
        got = dev2.read_u64(64)
        assert got in (0xAAAAAAAAAAAAAAAA, new_val)


def test_crash_with_no_dirty_state_is_identity():
    dev = SimulatedNvm.create(None, 4096)
    dev.write(0, b"hello")
    dev.flush_range(0, 5)
    dev.fence()
    image = dev.read_persisted(0, 4096)
    dev2 = dev.crash()
    assert dev2.read(0, 4096) == image
    assert dev2.read_persisted(0, 4096) == image


def test_crash_subset_lattice_exhaustive():
    """Three flushed-pending lines: all 8 keep-subsets are reachable and
    behave independently."""
    seen = set()
    for subset in itertools.chain.from_iterable(
            itertools.combinations(range(3), k) for k in range(4)):
        dev = SimulatedNvm.create(None, 4096)
        for line in range(3):
            dev.write(line * 64, bytes([line + 1]))
        dev.flush_range(0, 3 * 64)
        dev2 = dev.crash(keep=set(subset))
        state = tuple(dev2.read(line * 64, 1)[0] for line in range(3))
        seen.add(state)
        for line in range(3):
            assert state[line] == (line + 1 if line in subset else 0)
    assert len(seen) == 8


def test_out_of_bounds_rejected():
    dev = SimulatedNvm.create(None, 4096)
    with pytest.raises(OutOfBounds):
        dev.write(4090, bytes(8))
    with pytest.raises(OutOfBounds):
        dev.flush_range(4096, 1)


def test_scheduled_crash_fires_at_fence():
    dev = SimulatedNvm.create(None, 4096)
    dev.write(0, b"a")
    dev.flush_range(0, 1)
    dev.fence()
    dev.schedule_crash(at_fence=2)
    dev.write(64, b"b")
    dev.flush_range(64, 1)
    with pytest.raises(SimulatedCrash):
        dev.fence()
    # the fence did not take effect
    assert dev.flushed_pending == {1}
    assert dev.fence_count == 1


def test_persisted_view_changes_only_at_fence():
    dev = SimulatedNvm.create(None, 4096)
    snapshots = [dev.read_persisted(0, 4096)]
    dev.write(0, b"abc")
    snapshots.append(dev.read_persisted(0, 4096))
    dev.flush_range(0, 3)
    snapshots.append(dev.read_persisted(0, 4096))
    assert snapshots[0] == snapshots[1] == snapshots[2]
    dev.fence()
    assert dev.read_persisted(0, 3) == b"abc"


@given(st.integers(0, 4095), st.integers(1, 300))
def test_line_arithmetic_matches_definition(offset, length):
    dev = SimulatedNvm.create(None, 4096)
    length = min(length, 4096 - offset)
    if length == 0:
        return
    dev.write(offset, bytes([1]) * length)
    expected = set(range(offset // LINE_SIZE, (offset + length - 1) // LINE_SIZE + 1))
    assert dev.dirty_lines == expected


def test_crash_drop_invariant_random_programs():
    """Any write not followed by flush+fence before the crash is absent from
    the reopened device; fenced writes are always present."""
    import random
    rng = random.Random(42)
    for _ in range(50):
        dev = SimulatedNvm.create(None, 4096)
        fenced: dict[int, bytes] = {}
        pending: dict[int, bytes] = {}
        for _ in range(rng.randrange(1, 16)):
            line = rng.randrange(16)
            data = bytes([rng.randrange(1, 256)]) * 8
            dev.write(line * 64, data)
            pending[line] = data
            if rng.random() < 0.5:
                dev.flush_range(line * 64, 8)
            if rng.random() < 0.4:
                dev.fence()
                for l, d in list(pending.items()):
                    if l in dev.dirty_lines or l in dev.flushed_pending:
                        continue
                    fenced[l] = d
                    del pending[l]
        dev2 = dev.crash(keep="none")
        for line, data in fenced.items():
            assert dev2.read(line * 64, 8) == data
        for line, data in pending.items():
            if line not in fenced:
                assert dev2.read(line * 64, 8) != data or data == bytes(8)
