"""Durable transactions with versioned-lock STM and fence-minimal commit.

Writes buffer in the transaction context; nothing touches the device until
atomic_end. Commit runs in two phases:

  STM:  lock every written/allocated object in ascending id order (try-lock;
        any held lock aborts to conflict_retry), then validate that no object
        in the read set changed version or is locked by someone else.
  DTx:  append all ALLOC and UPDATE records, flush them together with the
        freshly written header chunks, fence; append the COMMIT record,
        flush, fence. Exactly two fences regardless of write-set size.

Only after the COMMIT record is durable do the field index tables, the valid
bitmap and the object versions change, so readers and recovery can never
observe a half-committed transaction. The whole DTx phase runs under one
commit mutex: interleaving another transaction's unfenced records between a
transaction's records and its COMMIT would let a torn neighbour truncate the
recovery scan in front of a fenced COMMIT.

Single-field updates outside a transaction take the object lock briefly and
append one self-committing record: exactly one fence.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

from .errors import (
    DanglingReference,
    IndexOutOfRange,
    LogFull,
    NestedTransaction,
    ReadOnlySession,
    TxNotActive,
    TypeMismatch,
    UnknownPlass,
)
from .heap import FLAG_ARRAY, ObjInfo
from .logrec import (
    ENTRY_SIZE,
    KIND_ALLOC,
    KIND_ATOMIC_UPDATE,
    KIND_CHECKPOINT_VAL,
    KIND_COMMIT,
    KIND_UPDATE,
    encode_entries,
    encode_entry,
)
from .types import UniType, decode_value, encode_value, is_reference, zero_value

if TYPE_CHECKING:
    from .heap import Heap


class CommitResult(Enum):
    COMMITTED = "committed"
    CONFLICT_RETRY = "conflict_retry"


@dataclass
class TransactionContext:
    tx_id: int
    state: str = "active"
    read_versions: dict[int, int] = field(default_factory=dict)
    write_set: dict[tuple[int, int], tuple[int, int]] = field(default_factory=dict)
    alloc_list: list[tuple[int, int, int]] = field(default_factory=list)
    private_objects: dict[int, ObjInfo] = field(default_factory=dict)
    pending_roots: dict[str, int] = field(default_factory=dict)


def atomic_begin(heap: "Heap") -> TransactionContext:
    if heap.read_only:
        raise ReadOnlySession("transactions need a writer session")
    if heap.current_tx() is not None:
        raise NestedTransaction("this thread already has an active transaction")
    heap.gate.acquire_shared()
    tx = TransactionContext(heap.next_transaction_id())
    heap.set_current_tx(tx)
    return tx


def _require_active(heap: "Heap", tx: TransactionContext) -> None:
    if tx is None or tx.state != "active" or heap.current_tx() is not tx:
        raise TxNotActive("transaction is not active on this thread")


def _field_type(info: ObjInfo, idx: int) -> UniType:
    if not 0 <= idx < info.slot_count:
        raise IndexOutOfRange(f"field {idx} out of range 0..{info.slot_count - 1}")
    return info.field_type(idx)


def read_field(heap: "Heap", ref: int, field_index: int):
    tx = heap.current_tx()
    if tx is not None and tx.state == "active":
        hit = tx.write_set.get((ref, field_index))
        if hit is not None:
            tag, raw = hit
            return decode_value(UniType(tag), raw)
        return _read_committed(heap, tx, ref, field_index)
    with heap.gate.shared():
        return _read_committed(heap, None, ref, field_index)


def _read_committed(heap: "Heap", tx: TransactionContext | None, ref: int, field_index: int):
    info = _resolve(heap, tx, ref)
    ftype = _field_type(info, field_index)
    if tx is not None and ref not in tx.private_objects and ref not in tx.read_versions:
        # version sampled before the value read, per the validation protocol
        tx.read_versions[ref] = heap.object_version(ref)
    off = heap.translate(info, field_index)
    if off == 0:
        return zero_value(ftype)
    _, _, raw = heap.entry_at(off)
    return decode_value(ftype, raw)


def _resolve(heap: "Heap", tx: TransactionContext | None, ref: int) -> ObjInfo:
    if tx is not None:
        info = tx.private_objects.get(ref)
        if info is not None:
            return info
    info = heap.objects.get(ref)
    if info is None or ref not in heap.live:
        raise DanglingReference(f"object {ref} is not live")
    return info


def write_field(heap: "Heap", tx: TransactionContext, ref: int, field_index: int, value) -> None:
    _require_active(heap, tx)
    info = _resolve(heap, tx, ref)
    ftype = _field_type(info, field_index)
    raw = encode_value(ftype, value)
    if is_reference(ftype) and raw:
        _resolve(heap, tx, raw)  # dangling targets are rejected at write time
    tx.write_set[(ref, field_index)] = (ftype.value, raw)


def alloc_obj(heap: "Heap", tx: TransactionContext, plass_id: int,
              array_length: int | None = None) -> int:
    _require_active(heap, tx)
    plass = heap.get_plass(plass_id)
    if plass.is_array:
        if array_length is None or array_length < 0:
            raise TypeMismatch("array plass allocation needs a non-negative array_length")
        slots = array_length
    else:
        if array_length is not None:
            raise TypeMismatch(f"plass {plass.name!r} is not an array plass")
        slots = plass.field_count
    oid = heap.alloc_header()
    flags = FLAG_ARRAY if plass.is_array else 0
    heap.write_chunk(oid, plass_id, 0, flags)
    tx.private_objects[oid] = ObjInfo(plass, np.zeros(slots, dtype=np.int64), array_length)
    tx.alloc_list.append((oid, plass_id, array_length or 0))
    return oid


def abort(heap: "Heap", tx: TransactionContext) -> None:
    _require_active(heap, tx)
    _discard(heap, tx, "aborted")


def _discard(heap: "Heap", tx: TransactionContext, state: str) -> None:
    for oid, _, _ in tx.alloc_list:
        heap.free_header(oid)
    tx.state = state
    heap.set_current_tx(None)
    heap.gate.release_shared()


def atomic_end(heap: "Heap", tx: TransactionContext) -> CommitResult:
    _require_active(heap, tx)
    try:
        result = _commit(heap, tx)
    except Exception:
        _discard(heap, tx, "aborted")
        raise
    if result is CommitResult.COMMITTED:
        tx.state = "committed"
        heap.set_current_tx(None)
        heap.gate.release_shared()
        _maybe_auto_gc(heap)
    else:
        _discard(heap, tx, "conflict")
    return result


def _release(heap: "Heap", acquired: list[int]) -> None:
    for oid in acquired:
        heap.unlock(oid, bump_version=False)


def _reads_valid(heap: "Heap", tx: TransactionContext, held: set[int]) -> bool:
    for oid, seen in tx.read_versions.items():
        if oid in tx.private_objects:
            continue
        word = heap.lock_word(oid)
        if oid not in held and word & 0x80000000:
            return False
        if word & 0x7FFFFFFF != seen:
            return False
    return True


def _commit(heap: "Heap", tx: TransactionContext) -> CommitResult:
    lock_ids = sorted({oid for oid, _ in tx.write_set} | {oid for oid, _, _ in tx.alloc_list})
    acquired: list[int] = []
    for oid in lock_ids:
        if heap.try_lock(oid):
            acquired.append(oid)
        else:
            _release(heap, acquired)
            return CommitResult.CONFLICT_RETRY

    if not _reads_valid(heap, tx, set(acquired)):
        _release(heap, acquired)
        return CommitResult.CONFLICT_RETRY

    n_entries = len(tx.alloc_list) + len(tx.write_set)
    if n_entries == 0:
        _release(heap, acquired)
        _apply_pending_roots(heap, tx)
        return CommitResult.COMMITTED

    region = heap.active_region("log")
    need = (n_entries + 1) * ENTRY_SIZE
    rows = [(KIND_ALLOC, 0, tx.tx_id, oid, plass_id, alen)
            for oid, plass_id, alen in tx.alloc_list]
    rows += [(KIND_UPDATE, tag, tx.tx_id, oid, fidx, raw)
             for (oid, fidx), (tag, raw) in tx.write_set.items()]
    try:
        with heap._commit_mu:
            if heap.log_tail + need > region.length:
                raise LogFull("active log segment full; request_gc() and retry")
            base = heap.log_tail
            buf = encode_entries(rows)
            heap.dev.write(region.offset + base, buf)
            heap.dev.flush_range(region.offset + base, len(buf))
            for oid, _, _ in tx.alloc_list:
                heap.dev.flush_range(heap.chunk_offset(oid), 16)
            heap.dev.fence(tag="commit-data")
            commit_rec = encode_entry(KIND_COMMIT, 0, tx.tx_id, 0, 0, n_entries)
            heap.dev.write(region.offset + base + len(buf), commit_rec)
            heap.dev.flush_range(region.offset + base + len(buf), ENTRY_SIZE)
            heap.dev.fence(tag="commit-record")
            heap.log_tail = base + need
    except Exception:
        _release(heap, acquired)
        raise

    # durable; now publish to the volatile side while still holding locks
    for oid, _, _ in tx.alloc_list:
        heap.objects[oid] = tx.private_objects[oid]
        heap.live.add(oid)
    n_allocs = len(tx.alloc_list)
    for j, ((oid, fidx), _) in enumerate(tx.write_set.items()):
        info = heap.objects[oid]
        info.offsets[fidx] = region.offset + base + (n_allocs + j) * ENTRY_SIZE
    for oid in acquired:
        heap.unlock(oid, bump_version=True)
    _apply_pending_roots(heap, tx)
    return CommitResult.COMMITTED


def _apply_pending_roots(heap: "Heap", tx: TransactionContext) -> None:
    for name, ref in tx.pending_roots.items():
        heap.set_root_committed(name, ref)


def _maybe_auto_gc(heap: "Heap") -> None:
    if not heap.auto_gc or heap.read_only:
        return
    region = heap.active_region("log")
    if heap.log_tail < heap.auto_gc_threshold * region.length:
        return
    from .errors import GcAlreadyRunning
    try:
        heap.request_gc()
    except GcAlreadyRunning:
        pass


def write_field_atomic(heap: "Heap", ref: int, field_index: int, value) -> None:
    """Self-committing single-field update: one log record, one fence."""
    if heap.read_only:
        raise ReadOnlySession("write_field_atomic needs a writer session")
    if heap.current_tx() is not None:
        raise NestedTransaction("write_field inside a transaction instead")
    with heap.gate.shared():
        info = _resolve(heap, None, ref)
        ftype = _field_type(info, field_index)
        raw = encode_value(ftype, value)
        if is_reference(ftype) and raw and (raw not in heap.live):
            raise DanglingReference(f"reference target {raw} is not live")
        while not heap.try_lock(ref):
            time.sleep(0.00005)
        try:
            region = heap.active_region("log")
            with heap._commit_mu:
                if heap.log_tail + ENTRY_SIZE > region.length:
                    raise LogFull("active log segment full; request_gc() and retry")
                base = heap.log_tail
                rec = encode_entry(KIND_ATOMIC_UPDATE, ftype.value, 0, ref, field_index, raw)
                heap.dev.write(region.offset + base, rec)
                heap.dev.flush_range(region.offset + base, ENTRY_SIZE)
                heap.dev.fence(tag="atomic-update")
                heap.log_tail = base + ENTRY_SIZE
            info.offsets[field_index] = region.offset + base
        finally:
            heap.unlock(ref, bump_version=True)


def write_field_eager(heap: "Heap", ref: int, field_index: int, value) -> None:
    """Eager per-store persistence for the bench baseline: an undo image of
    the old value is persisted first, then the new value, two fences per
    store. This models frameworks that fence every field write instead of
    batching a transaction into two fences."""
    if heap.read_only:
        raise ReadOnlySession("write_field_eager needs a writer session")
    with heap.gate.shared():
        info = _resolve(heap, None, ref)
        ftype = _field_type(info, field_index)
        raw = encode_value(ftype, value)
        old_off = int(info.offsets[field_index])
        old_raw = heap.entry_at(old_off)[2] if old_off else 0
        while not heap.try_lock(ref):
            time.sleep(0.00005)
        try:
            region = heap.active_region("log")
            with heap._commit_mu:
                if heap.log_tail + 2 * ENTRY_SIZE > region.length:
                    raise LogFull("active log segment full; request_gc() and retry")
                base = heap.log_tail
                undo = encode_entry(KIND_CHECKPOINT_VAL, ftype.value, 0, ref, field_index, old_raw)
                heap.dev.write(region.offset + base, undo)
                heap.dev.flush_range(region.offset + base, ENTRY_SIZE)
                heap.dev.fence(tag="baseline-undo")
                rec = encode_entry(KIND_ATOMIC_UPDATE, ftype.value, 0, ref, field_index, raw)
                heap.dev.write(region.offset + base + ENTRY_SIZE, rec)
                heap.dev.flush_range(region.offset + base + ENTRY_SIZE, ENTRY_SIZE)
                heap.dev.fence(tag="baseline-write")
                heap.log_tail = base + 2 * ENTRY_SIZE
            info.offsets[field_index] = region.offset + base + ENTRY_SIZE
        finally:
            heap.unlock(ref, bump_version=True)
