"""Crash recovery: log replay, GC redo, lock-word hygiene.

Recovery trusts only fenced media. It rebuilds every volatile structure from
the persisted image:

  1. decode the plass region (a torn append fails validation and is simply
     ignored; the durable append-offset hint is repaired to the validated
     end when the session is a writer);
  2. scan the active log segment from its base, stopping at the first record
     whose crc or kind fails - appends are strictly ordered, so nothing
     committed can live beyond a torn record;
  3. apply ALLOC/UPDATE records only for tx_ids with a durable COMMIT in the
     scanned prefix, and checkpoint/atomic records unconditionally, rebuilding
     the field index tables, the valid bitmap, the bump pointer, the free
     list and the transaction-id watermark;
  4. clear every lock word's lock bit (a commit may have flushed a chunk
     while its object was STM-locked);
  5. if a collection was interrupted: before the epoch flip, rerun the whole
     GC from marking (the old epoch is untouched); after the flip, replay
     the root-checkpoint records and go idle.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import CorruptHeap, NeedsRecovery
from .heap import FLAG_ARRAY, ObjInfo
from .layout import GC_IDLE, OFF_NEXT_PLASS_OFFSET
from .logrec import (
    ENTRY_SIZE,
    KIND_ALLOC,
    KIND_ATOMIC_UPDATE,
    KIND_CHECKPOINT_HDR,
    KIND_CHECKPOINT_VAL,
    KIND_COMMIT,
    KIND_UPDATE,
    scan_segment,
    valid_prefix_len,
)

if TYPE_CHECKING:
    from .heap import Heap


@dataclass
class RecoveryReport:
    replayed_txs: int
    discarded_entries: int
    gc_redone: bool


def recover(heap: "Heap") -> RecoveryReport:
    heap.load_plasses()
    _repair_plass_hint(heap)
    replayed, discarded, root_checkpoints = scan_active_log(heap)
    _clear_lock_bits(heap)
    heap.load_roots()

    gc_redone = False
    if heap.gc_phase != GC_IDLE:
        if heap.read_only:
            raise NeedsRecovery("heap crashed mid-GC; open read_write once to recover")
        from . import gc as gc_mod
        if heap.active_epoch == heap.gc_target_epoch:
            gc_mod.finish_cleanup(heap, root_checkpoints)
        else:
            gc_mod.run_collection(heap, vroots=())
        gc_redone = True
    return RecoveryReport(replayed, discarded, gc_redone)


def _repair_plass_hint(heap: "Heap") -> None:
    durable = heap.dev.read_u64(OFF_NEXT_PLASS_OFFSET)
    if durable != heap.plass_append_offset and not heap.read_only:
        heap.set_header_u64(OFF_NEXT_PLASS_OFFSET, heap.plass_append_offset)
        heap.persist_header_words([OFF_NEXT_PLASS_OFFSET], "recovery")


def scan_active_log(heap: "Heap") -> tuple[int, int, list[tuple[int, int]]]:
    """Replay the active segment into the heap's volatile state. Returns
    (committed tx count, discarded entry count, root checkpoints)."""
    region = heap.active_region("log")
    arr, valid = scan_segment(heap.dev.view(region.offset, region.length))
    n = valid_prefix_len(valid)

    kinds = arr["kind"][:n].tolist()
    tags = arr["type_tag"][:n].tolist()
    tx_ids = arr["tx_id"][:n].tolist()
    oids = arr["object_id"][:n].tolist()
    fidxs = arr["field_index"][:n].tolist()
    values = arr["value"][:n].tolist()

    committed = {tx_ids[i] for i in range(n) if kinds[i] == KIND_COMMIT}

    heap.objects = {}
    heap.live = set()
    root_checkpoints: list[tuple[int, int]] = []
    replayed = 0
    discarded = 0
    max_oid = 0
    max_tx = 0

    for i in range(n):
        kind = kinds[i]
        oid = oids[i]
        fidx = fidxs[i]
        max_tx = max(max_tx, tx_ids[i])
        if kind == KIND_COMMIT:
            replayed += 1
        elif kind == KIND_ALLOC:
            if tx_ids[i] not in committed:
                discarded += 1
                continue
            plass = heap.get_plass(fidx) if 1 <= fidx <= len(heap.plasses) else None
            if plass is None:
                raise CorruptHeap(f"committed ALLOC at record {i} references unknown plass {fidx}")
            if oid in heap.objects:
                raise CorruptHeap(f"duplicate committed ALLOC for object {oid}")
            alen = values[i] if plass.is_array else None
            slots = alen if alen is not None else plass.field_count
            heap.objects[oid] = ObjInfo(plass, np.zeros(slots, dtype=np.int64), alen)
            heap.live.add(oid)
            max_oid = max(max_oid, oid)
        elif kind == KIND_UPDATE:
            if tx_ids[i] not in committed:
                discarded += 1
                continue
            _apply_value(heap, i, oid, fidx, region.offset)
        elif kind == KIND_ATOMIC_UPDATE:
            _apply_value(heap, i, oid, fidx, region.offset)
        elif kind == KIND_CHECKPOINT_HDR:
            if oid == 0:
                root_checkpoints.append((fidx, values[i]))
                continue
            plass_id, _, flags = heap.read_chunk(oid)
            plass = heap.get_plass(plass_id) if 1 <= plass_id <= len(heap.plasses) else None
            if plass is None:
                raise CorruptHeap(f"checkpoint header for object {oid} has bad chunk plass {plass_id}")
            alen = fidx if flags & FLAG_ARRAY else None
            slots = alen if alen is not None else plass.field_count
            heap.objects[oid] = ObjInfo(plass, np.zeros(slots, dtype=np.int64), alen)
            heap.live.add(oid)
            max_oid = max(max_oid, oid)
        elif kind == KIND_CHECKPOINT_VAL:
            _apply_value(heap, i, oid, fidx, region.offset)

    heap.log_tail = n * ENTRY_SIZE
    heap.next_header_index = max_oid
    heap.free_ids = [i for i in range(1, max_oid + 1) if i not in heap.live]
    heap.next_tx_id = max_tx + 1
    return replayed, discarded, root_checkpoints


def _apply_value(heap: "Heap", record_idx: int, oid: int, fidx: int, log_base: int) -> None:
    info = heap.objects.get(oid)
    if info is None:
        raise CorruptHeap(f"value record {record_idx} targets unknown object {oid}")
    if not 0 <= fidx < info.slot_count:
        raise CorruptHeap(f"value record {record_idx} field {fidx} out of range for object {oid}")
    info.offsets[fidx] = log_base + record_idx * ENTRY_SIZE


def _clear_lock_bits(heap: "Heap") -> None:
    for oid in heap.live:
        word = heap.lock_word(oid)
        if word & 0x80000000:
            heap._set_lock_word(oid, word & 0x7FFFFFFF)
