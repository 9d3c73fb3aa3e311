"""Coordinated stop-the-world mark-and-compact collection.

The collector runs in four phases, each preceded by a fenced gc_phase write
so recovery can tell how far a crashed collection got:

  marking     transitive closure over reference fields from the root table
              plus the vroots reported by registered runtimes; volatile only,
              so re-running it is free.
  relocation  sliding assignment of new ids 1..live in ascending old-id
              order; pure computation.
  compaction  live headers rewritten into the inactive object space, each
              object's newest field values coalesced into the inactive log
              segment as one checkpoint header plus one value record per
              ever-written field (zero values elided), references rewritten
              through the forwarding map, the inactive bitmap filled, the
              post-GC root table recorded as root-checkpoint records, then
              one flush+fence. The active spaces are never touched, so a
              crashed compaction simply reruns.
  cleanup     the active_epoch flip is the commit point: before it, recovery
              redoes the whole collection against the untouched old epoch;
              after it, recovery finishes by replaying the root checkpoints.
              Root slots are rewritten only after the flip for exactly that
              reason - a partially rewritten root table before the flip
              could not be told apart from an unrewritten one.

Update coalescing is what shrinks the log: an object with a hundred
committed updates to one field leaves GC with a single value record.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Iterable

import numpy as np

from .errors import CorruptHeap, GcAlreadyRunning, InvalidVroot, LogFull, ReadOnlySession
from .heap import ObjInfo
from .layout import (
    GC_CLEANUP,
    GC_COMPACTION,
    GC_IDLE,
    GC_MARKING,
    GC_RELOCATION,
    OFF_ACTIVE_EPOCH,
    OFF_GC_PHASE,
    OFF_GC_TARGET_EPOCH,
    OFF_LOG_TAIL,
    OFF_NEXT_HEADER_INDEX,
    ROOT_NAME_SIZE,
    ROOT_SLOT_SIZE,
)
from .logrec import ENTRY_SIZE, KIND_CHECKPOINT_HDR, KIND_CHECKPOINT_VAL, encode_entries
from .types import is_reference

if TYPE_CHECKING:
    from .heap import Heap

_runtime_ids = itertools.count(1)


@dataclass
class GcReport:
    live: int
    reclaimed: int
    log_bytes_before: int
    log_bytes_after: int


@dataclass
class GcStats:
    marked: int = 0
    relocated: int = 0
    bytes_coalesced: int = 0


class RuntimeHandle:
    """A registered runtime: answers vroot enumeration at the safepoint and,
    optionally, learns the forwarding map so it can remap held ids."""

    def __init__(self, heap: "Heap", vroot_provider: Callable[[], Iterable[int]],
                 on_forward: Callable[[dict[int, int]], None] | None = None):
        self.runtime_id = next(_runtime_ids)
        self.vroot_provider = vroot_provider
        self.on_forward = on_forward
        self.parked = False
        self._heap = heap

    def unregister(self) -> None:
        if self._heap is not None and self in self._heap.runtimes:
            self._heap.runtimes.remove(self)
        self._heap = None


def register_runtime(heap: "Heap", vroot_provider, on_forward=None) -> RuntimeHandle:
    handle = RuntimeHandle(heap, vroot_provider, on_forward)
    heap.runtimes.append(handle)
    return handle


def request_gc(heap: "Heap") -> GcReport:
    if heap.read_only:
        raise ReadOnlySession("request_gc needs a writer session")
    with heap._gc_mu:
        if heap.gc_running:
            raise GcAlreadyRunning("a collection is already in progress")
        heap.gc_running = True
    try:
        heap.gate.acquire_exclusive()
        try:
            for rt in heap.runtimes:
                rt.parked = True
            vroots: set[int] = set()
            for rt in heap.runtimes:
                vroots.update(int(v) for v in rt.vroot_provider())
            report = run_collection(heap, vroots)
            fwd = heap.last_forwarding
            for rt in heap.runtimes:
                if rt.on_forward is not None:
                    rt.on_forward(fwd)
            return report
        finally:
            for rt in heap.runtimes:
                rt.parked = False
            heap.gate.release_exclusive()
    finally:
        with heap._gc_mu:
            heap.gc_running = False


# -- phases (exclusive access assumed) -------------------------------------------


def mark_phase(heap: "Heap", roots: Iterable[int]) -> set[int]:
    """Transitive closure over reference fields; no device mutation, so the
    phase is idempotent by construction."""
    marked: set[int] = set()
    stack = [r for r in roots if r]
    while stack:
        oid = stack.pop()
        if oid in marked:
            continue
        info = heap.objects.get(oid)
        if info is None or oid not in heap.live:
            raise CorruptHeap(f"marking reached non-live object {oid}")
        marked.add(oid)
        stack.extend(t for t in heap.reference_fields(info) if t not in marked)
    return marked


def relocate_phase(marked: set[int]) -> dict[int, int]:
    """Sliding compaction: new ids 1..live in ascending old-id order."""
    return {old: new for new, old in enumerate(sorted(marked), start=1)}


def _plan_checkpoint(heap: "Heap", forwarding: dict[int, int]):
    """Rows for the inactive log plus each live object's new field table."""
    rows: list[tuple[int, int, int, int, int, int]] = []
    tables: dict[int, list[tuple[int, int]]] = {}
    for old in sorted(forwarding):
        new = forwarding[old]
        info = heap.objects[old]
        hdr_count = info.array_length if info.array_length is not None else info.plass.field_count
        rows.append((KIND_CHECKPOINT_HDR, 0, 0, new, hdr_count, old))
        slots: list[tuple[int, int]] = []
        written = np.flatnonzero(info.offsets)
        for fidx in written.tolist():
            ftype = info.field_type(fidx)
            _, _, raw = heap.entry_at(int(info.offsets[fidx]))
            if is_reference(ftype) and raw:
                raw = forwarding[raw]  # targets of live objects are live
            if raw == 0:
                continue  # reads of unwritten slots already return zero
            slots.append((fidx, len(rows)))
            rows.append((KIND_CHECKPOINT_VAL, ftype.value, 0, new, fidx, raw))
        tables[new] = slots
    for name, slot in sorted(heap.root_slot_by_name.items()):
        rows.append((KIND_CHECKPOINT_HDR, 0, 0, 0, slot, forwarding[heap.roots[name]]))
    return rows, tables


def compact_phase(heap: "Heap", forwarding: dict[int, int],
                  rows, tables) -> None:
    """Write headers, coalesced values, bitmap and root checkpoints into the
    inactive spaces; one fence. Never touches the active epoch's data."""
    obj_r = heap.inactive_region("obj")
    log_r = heap.inactive_region("log")
    bm_r = heap.inactive_region("bitmap")
    dev = heap.dev
    dev.write(obj_r.offset, bytes(obj_r.length))
    dev.write(log_r.offset, bytes(log_r.length))
    dev.write(bm_r.offset, bytes(bm_r.length))
    for old, new in forwarding.items():
        info = heap.objects[old]
        plass_id, lock_word, flags = heap.read_chunk(old)
        heap.write_chunk(new, plass_id, lock_word & 0x7FFFFFFF, flags, region=obj_r)
    dev.write(log_r.offset, encode_entries(rows))
    live = len(forwarding)
    if live:
        bits = np.packbits(np.ones(live, dtype=np.uint8), bitorder="little")
        dev.write(bm_r.offset, bits.tobytes())
    dev.flush_range(obj_r.offset, obj_r.length)
    dev.flush_range(log_r.offset, log_r.length)
    dev.flush_range(bm_r.offset, bm_r.length)
    dev.fence(tag="gc-compact")


def cleanup_phase(heap: "Heap", forwarding: dict[int, int], new_tail: int) -> None:
    dev = heap.dev
    _set_phase(heap, GC_CLEANUP)
    # commit point: after this fence the collection is redone forward, not back
    dev.atomic_write_u64(OFF_ACTIVE_EPOCH, heap.active_epoch + 1)
    dev.flush_range(OFF_ACTIVE_EPOCH, 8)
    dev.fence(tag="gc-flip")
    roots_r = heap.region("roots")
    if heap.root_slot_by_name:
        for name, slot in heap.root_slot_by_name.items():
            dev.atomic_write_u64(roots_r.offset + slot * ROOT_SLOT_SIZE + ROOT_NAME_SIZE,
                                 forwarding[heap.roots[name]])
        dev.flush_range(roots_r.offset, roots_r.length)
        dev.fence(tag="gc-roots")
    heap.set_header_u64(OFF_GC_PHASE, GC_IDLE)
    heap.set_header_u64(OFF_NEXT_HEADER_INDEX, len(forwarding))
    heap.set_header_u64(OFF_LOG_TAIL, new_tail)
    heap.persist_header_words([OFF_GC_PHASE, OFF_NEXT_HEADER_INDEX, OFF_LOG_TAIL], "gc")


def _set_phase(heap: "Heap", phase: int) -> None:
    heap.set_header_u64(OFF_GC_PHASE, phase)
    heap.persist_header_words([OFF_GC_PHASE], "gc")
    heap.gc_phase = phase


def run_collection(heap: "Heap", vroots: Iterable[int]) -> GcReport:
    """The full four-phase collection; caller holds exclusive access."""
    vroots = set(vroots)
    for v in vroots:
        if v not in heap.live:
            raise InvalidVroot(f"vroot {v} is not a live object")
    log_before = heap.log_tail
    pre_live = len(heap.live)

    heap.set_header_u64(OFF_GC_PHASE, GC_MARKING)
    heap.set_header_u64(OFF_GC_TARGET_EPOCH, heap.active_epoch + 1)
    heap.persist_header_words([OFF_GC_PHASE, OFF_GC_TARGET_EPOCH], "gc")
    heap.gc_phase = GC_MARKING
    marked = mark_phase(heap, set(heap.roots.values()) | vroots)

    _set_phase(heap, GC_RELOCATION)
    forwarding = relocate_phase(marked)
    rows, tables = _plan_checkpoint(heap, forwarding)
    new_tail = len(rows) * ENTRY_SIZE
    if new_tail > heap.inactive_region("log").length:
        _set_phase(heap, GC_IDLE)  # abort safely; old epoch still active
        raise LogFull("coalesced live data exceeds the inactive log segment")

    _set_phase(heap, GC_COMPACTION)
    compact_phase(heap, forwarding, rows, tables)
    cleanup_phase(heap, forwarding, new_tail)

    # durable state switched; now swap the volatile mirrors
    log_base = heap.inactive_region("log").offset  # still pre-swap epoch
    new_objects: dict[int, ObjInfo] = {}
    for old, new in forwarding.items():
        info = heap.objects[old]
        slots = info.array_length if info.array_length is not None else info.plass.field_count
        offsets = np.zeros(slots, dtype=np.int64)
        for fidx, row_idx in tables[new]:
            offsets[fidx] = log_base + row_idx * ENTRY_SIZE
        new_objects[new] = ObjInfo(info.plass, offsets, info.array_length)
    heap.active_epoch += 1
    heap.gc_phase = GC_IDLE
    heap.objects = new_objects
    heap.live = set(forwarding.values())
    heap.next_header_index = len(forwarding)
    heap.free_ids = []
    heap.log_tail = new_tail
    heap.roots = {name: forwarding[addr] for name, addr in heap.roots.items()}
    heap.last_forwarding = dict(forwarding)
    return GcReport(live=len(marked), reclaimed=pre_live - len(marked),
                    log_bytes_before=log_before, log_bytes_after=new_tail)


def finish_cleanup(heap: "Heap", root_checkpoints: list[tuple[int, int]]) -> None:
    """Recovery path for a crash after the epoch flip: replay the durable
    root checkpoints (absolute values, so this is idempotent) and go idle."""
    dev = heap.dev
    roots_r = heap.region("roots")
    latest: dict[int, int] = {}
    for slot, addr in root_checkpoints:
        latest[slot] = addr
    if latest:
        for slot, addr in latest.items():
            dev.atomic_write_u64(roots_r.offset + slot * ROOT_SLOT_SIZE + ROOT_NAME_SIZE, addr)
        dev.flush_range(roots_r.offset, roots_r.length)
        dev.fence(tag="gc-roots")
    heap.set_header_u64(OFF_GC_PHASE, GC_IDLE)
    heap.set_header_u64(OFF_NEXT_HEADER_INDEX, heap.next_header_index)
    heap.set_header_u64(OFF_LOG_TAIL, heap.log_tail)
    heap.persist_header_words([OFF_GC_PHASE, OFF_NEXT_HEADER_INDEX, OFF_LOG_TAIL], "gc")
    heap.gc_phase = GC_IDLE
    heap.load_roots()
