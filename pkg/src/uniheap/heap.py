"""Heap runtime: creation/opening, header allocation, roots, field tables.

A Heap owns the volatile mirror of one on-media heap: decoded plasses, the
per-object field index tables (the DRAM-side O(1) address translation), the
valid bitmap, the allocation bump pointer and free list, and the log tail.
All of that is reconstructed from the device by recovery; nothing volatile
is authoritative across a crash.

Object ids are 1-based chunk indexes into the active object space and are
stable between collections; GC forwards them. Id 0 is the null reference.
"""
from __future__ import annotations

import struct
import threading
from dataclasses import dataclass

import numpy as np

from . import layout
from .errors import (
    AlreadyFormatted,
    CorruptHeap,
    DanglingReference,
    IndexOutOfRange,
    NameTooLong,
    ObjectSpaceFull,
    PlassRegionFull,
    ReadOnlySession,
    RootTableFull,
    SchemaMismatch,
    UnknownPlass,
)
from .layout import (
    CHUNK_SIZE,
    GC_IDLE,
    HEADER_RESERVED,
    MAGIC_U64,
    OFF_ACTIVE_EPOCH,
    OFF_GC_PHASE,
    OFF_GC_TARGET_EPOCH,
    OFF_LOG_TAIL,
    OFF_MAGIC,
    OFF_NEXT_HEADER_INDEX,
    OFF_NEXT_PLASS_OFFSET,
    ROOT_NAME_SIZE,
    ROOT_SLOT_SIZE,
    Geometry,
    HeaderView,
    Region,
)
from .pmemsim import SimulatedNvm
from .plass import Plass, array_plass_name, decode_plass_region, encode_plass, validate_fields
from .types import UniType, decode_value, is_reference

LOCK_BIT = 0x80000000
VERSION_MASK = 0x7FFFFFFF
FLAG_ARRAY = 0x1

_CHUNK_STRUCT = struct.Struct("<IIII")  # plass_id, lock_word, flags, reserved


class SafepointGate:
    """Reader-writer gate: mutators hold it shared for the life of a
    transaction, GC takes it exclusive. A waiting GC blocks new shared
    acquisitions so the safepoint is reached promptly."""

    def __init__(self):
        self._cond = threading.Condition()
        self._shared = 0
        self._exclusive = False
        self._waiting_exclusive = 0

    def acquire_shared(self) -> None:
        with self._cond:
            while self._exclusive or self._waiting_exclusive:
                self._cond.wait()
            self._shared += 1

    def release_shared(self) -> None:
        with self._cond:
            self._shared -= 1
            self._cond.notify_all()

    def acquire_exclusive(self) -> None:
        with self._cond:
            self._waiting_exclusive += 1
            while self._exclusive or self._shared:
                self._cond.wait()
            self._waiting_exclusive -= 1
            self._exclusive = True

    def release_exclusive(self) -> None:
        with self._cond:
            self._exclusive = False
            self._cond.notify_all()

    def shared(self):
        return _GateCtx(self.acquire_shared, self.release_shared)

    def exclusive(self):
        return _GateCtx(self.acquire_exclusive, self.release_exclusive)


class _GateCtx:
    def __init__(self, enter, leave):
        self._enter, self._leave = enter, leave

    def __enter__(self):
        self._enter()

    def __exit__(self, *exc):
        self._leave()
        return False


@dataclass
class ObjInfo:
    """Volatile per-object state: the plass and the field index table."""
    plass: Plass
    offsets: np.ndarray          # int64, absolute device offset of the latest
                                 # committed value record; 0 = never written
    array_length: int | None = None

    @property
    def slot_count(self) -> int:
        return self.array_length if self.array_length is not None else self.plass.field_count

    def field_type(self, idx: int) -> UniType:
        return self.plass.element_type if self.array_length is not None else self.plass.fields[idx][1]


class Heap:
    def __init__(self, dev: SimulatedNvm, header: HeaderView, read_only: bool = False):
        self.dev = dev
        self.name = header.name
        self.regions = header.regions
        self.read_only = read_only
        self.auto_gc = True
        self.auto_gc_threshold = 0.75

        # volatile mirrors, rebuilt by recovery
        self.active_epoch = header.active_epoch
        self.gc_phase = header.gc_phase
        self.plasses: list[Plass] = []
        self.plass_by_name: dict[str, Plass] = {}
        self.plass_append_offset = 0
        self.objects: dict[int, ObjInfo] = {}
        self.live: set[int] = set()
        self.next_header_index = 0
        self.free_ids: list[int] = []
        self.log_tail = 0
        self.roots: dict[str, int] = {}
        self.root_slot_by_name: dict[str, int] = {}
        self.translate_lookups = 0
        self.next_tx_id = 1
        self.runtimes: list = []
        self.last_recovery = None
        self.last_forwarding: dict[int, int] = {}
        self.gc_target_epoch = header.gc_target_epoch

        self._mutex = threading.RLock()
        self._commit_mu = threading.Lock()
        self._lockword_mu = threading.Lock()
        self.gate = SafepointGate()
        self._gc_mu = threading.Lock()
        self.gc_running = False
        self._tls = threading.local()

    # -- lifecycle -------------------------------------------------------------

    @classmethod
    def create(cls, dev: SimulatedNvm, name: str, geometry: Geometry | None = None,
               force: bool = False) -> "Heap":
        if dev.read_u64(OFF_MAGIC) == MAGIC_U64 and not force:
            raise AlreadyFormatted("device already holds a heap (use force to re-create)")
        regions = (geometry or Geometry()).resolve(dev.capacity)
        image = np.frombuffer(dev.view(0, dev.capacity), dtype=np.uint8)
        if image.any():
            dev.write(0, bytes(dev.capacity))
        layout.write_header(dev, name, regions)
        dev.flush_range(0, dev.capacity)
        dev.fence(tag="create")
        # magic last: a crash before this fence leaves a non-heap image
        dev.atomic_write_u64(OFF_MAGIC, MAGIC_U64)
        dev.flush_range(OFF_MAGIC, 8)
        dev.fence(tag="create")
        header = layout.read_header(dev)
        return cls(dev, header)

    @classmethod
    def open(cls, dev: SimulatedNvm, read_only: bool = False) -> "Heap":
        header = layout.read_header(dev)
        heap = cls(dev, header, read_only=read_only)
        from .recovery import recover
        heap.last_recovery = recover(heap)
        return heap

    # -- regions ---------------------------------------------------------------

    def region(self, name: str) -> Region:
        return self.regions[name]

    def active_region(self, kind: str) -> Region:
        return self.regions[f"{kind}_{layout.active_suffix(self.active_epoch)}"]

    def inactive_region(self, kind: str) -> Region:
        return self.regions[f"{kind}_{layout.inactive_suffix(self.active_epoch)}"]

    @property
    def chunk_capacity(self) -> int:
        return self.active_region("obj").length // CHUNK_SIZE

    def chunk_offset(self, oid: int, region: Region | None = None) -> int:
        base = (region or self.active_region("obj")).offset
        return base + (oid - 1) * CHUNK_SIZE

    # -- header words -------------------------------------------------------------

    def set_header_u64(self, offset: int, value: int) -> None:
        self.dev.atomic_write_u64(offset, value)

    def persist_header_words(self, offsets: list[int], tag: str) -> None:
        for off in offsets:
            self.dev.flush_range(off, 8)
        self.dev.fence(tag=tag)

    def persist_hints(self, tag: str = "close") -> None:
        """Write the recomputable header hints; recovery never trusts them
        but tools reading a cleanly closed image do."""
        self.set_header_u64(OFF_NEXT_HEADER_INDEX, self.next_header_index)
        self.set_header_u64(OFF_NEXT_PLASS_OFFSET, self.plass_append_offset)
        self.set_header_u64(OFF_LOG_TAIL, self.log_tail)
        self.persist_header_words([OFF_NEXT_HEADER_INDEX, OFF_NEXT_PLASS_OFFSET, OFF_LOG_TAIL], tag)

    # -- chunk headers ---------------------------------------------------------------

    def write_chunk(self, oid: int, plass_id: int, lock_word: int, flags: int,
                    region: Region | None = None) -> None:
        self.dev.write(self.chunk_offset(oid, region), _CHUNK_STRUCT.pack(plass_id, lock_word, flags, 0))

    def read_chunk(self, oid: int, region: Region | None = None) -> tuple[int, int, int]:
        raw = self.dev.read(self.chunk_offset(oid, region), CHUNK_SIZE)
        plass_id, lock_word, flags, _ = _CHUNK_STRUCT.unpack(raw)
        return plass_id, lock_word, flags

    def lock_word(self, oid: int) -> int:
        return struct.unpack_from("<I", self.dev.view(self.chunk_offset(oid) + 4, 4))[0]

    def _set_lock_word(self, oid: int, word: int) -> None:
        self.dev.write(self.chunk_offset(oid) + 4, struct.pack("<I", word))

    def try_lock(self, oid: int) -> bool:
        with self._lockword_mu:
            word = self.lock_word(oid)
            if word & LOCK_BIT:
                return False
            self._set_lock_word(oid, word | LOCK_BIT)
            return True

    def unlock(self, oid: int, bump_version: bool) -> None:
        with self._lockword_mu:
            word = self.lock_word(oid)
            version = word & VERSION_MASK
            if bump_version:
                version = (version + 1) & VERSION_MASK
            self._set_lock_word(oid, version)

    def object_version(self, oid: int) -> int:
        return self.lock_word(oid) & VERSION_MASK

    # -- allocation ---------------------------------------------------------------

    def alloc_header(self) -> int:
        """Reserve a zeroed 16-byte chunk; durability comes from the ALLOC
        record of the enclosing transaction, never from a header fence."""
        with self._mutex:
            if self.free_ids:
                oid = self.free_ids.pop()
            else:
                if self.next_header_index >= self.chunk_capacity:
                    raise ObjectSpaceFull(f"object space holds {self.chunk_capacity} chunks")
                self.next_header_index += 1
                oid = self.next_header_index
            self.dev.write(self.chunk_offset(oid), bytes(CHUNK_SIZE))
            return oid

    def free_header(self, oid: int) -> None:
        with self._mutex:
            self.free_ids.append(oid)

    # -- plasses ---------------------------------------------------------------------

    def init_plass(self, name: str, fields) -> int:
        if self.read_only:
            raise ReadOnlySession("init_plass requires a writer session")
        fields = validate_fields(list(fields))
        if not name or "\0" in name:
            raise SchemaMismatch(f"bad plass name {name!r}")
        with self._mutex:
            existing = self.plass_by_name.get(name)
            if existing is not None:
                if existing.fields != fields:
                    raise SchemaMismatch(f"plass {name!r} already defined with a different layout")
                return existing.plass_id
            record = encode_plass(name, fields)
            region = self.region("plass")
            off = self.plass_append_offset
            if off + len(record) > region.length:
                raise PlassRegionFull(f"plass region of {region.length} bytes is full")
            self.dev.write(region.offset + off, record)
            self.dev.flush_range(region.offset + off, len(record))
            # one fence covers both the record and the offset bump; recovery
            # revalidates by decoding, so a torn append cannot be mistaken
            # for a descriptor
            self.set_header_u64(OFF_NEXT_PLASS_OFFSET, off + len(record))
            self.dev.flush_range(OFF_NEXT_PLASS_OFFSET, 8)
            self.dev.fence(tag="plass")
            plass = Plass(len(self.plasses) + 1, name, fields, record_offset=off)
            self.plasses.append(plass)
            self.plass_by_name[name] = plass
            self.plass_append_offset = off + len(record)
            return plass.plass_id

    def exists_plass(self, name: str) -> int | None:
        plass = self.plass_by_name.get(name)
        return plass.plass_id if plass else None

    def get_plass(self, plass_id: int) -> Plass:
        if not 1 <= plass_id <= len(self.plasses):
            raise UnknownPlass(f"no plass with id {plass_id}")
        return self.plasses[plass_id - 1]

    def array_plass(self, element_type: UniType) -> int:
        return self.init_plass(array_plass_name(element_type), [("elem", element_type)])

    def load_plasses(self) -> None:
        region = self.region("plass")
        plasses, end = decode_plass_region(self.dev.view(region.offset, region.length))
        self.plasses = plasses
        self.plass_by_name = {p.name: p for p in plasses}
        self.plass_append_offset = end

    # -- objects and field tables ------------------------------------------------------

    def resolve(self, oid: int) -> ObjInfo:
        tx = self.current_tx()
        if tx is not None:
            info = tx.private_objects.get(oid)
            if info is not None:
                return info
        info = self.objects.get(oid)
        if info is None or oid not in self.live:
            raise DanglingReference(f"object {oid} is not live")
        return info

    def translate(self, info: ObjInfo, field_index: int) -> int:
        """Field index table lookup: one array access, counted so tests can
        hold the O(1) claim to account."""
        if not 0 <= field_index < info.slot_count:
            raise IndexOutOfRange(f"field {field_index} out of range 0..{info.slot_count - 1}")
        self.translate_lookups += 1
        return int(info.offsets[field_index])

    def entry_at(self, abs_offset: int) -> tuple[int, int, int]:
        """(kind, type_tag, value) of a log record we previously indexed; the
        crc was checked when the record entered the index."""
        buf = self.dev.view(abs_offset, 40)
        kind = buf[0]
        tag = buf[1]
        value = struct.unpack_from("<Q", buf, 32)[0]
        return kind, tag, value

    def stored_field(self, info: ObjInfo, field_index: int):
        """Latest committed value of a field, typed; ignores any transaction."""
        off = self.translate(info, field_index)
        ftype = info.field_type(field_index)
        if off == 0:
            return 0.0 if ftype in (UniType.FLOAT, UniType.DOUBLE) else 0
        _, _, raw = self.entry_at(off)
        return decode_value(ftype, raw)

    def reference_fields(self, info: ObjInfo) -> list[int]:
        """Nonzero reference targets of an object, via the field table."""
        out = []
        if info.array_length is not None:
            if not is_reference(info.plass.element_type):
                return out
            indexes = range(info.array_length)
        else:
            indexes = [i for i, (_, t) in enumerate(info.plass.fields) if is_reference(t)]
        for i in indexes:
            off = int(info.offsets[i])
            if off:
                _, _, raw = self.entry_at(off)
                if raw:
                    out.append(raw)
        return out

    # -- roots ---------------------------------------------------------------------------

    def root_slot_count(self) -> int:
        return self.region("roots").length // ROOT_SLOT_SIZE

    def _slot_offset(self, slot: int) -> int:
        return self.region("roots").offset + slot * ROOT_SLOT_SIZE

    def set_root(self, name: str, ref: int) -> None:
        if self.read_only:
            raise ReadOnlySession("set_root requires a writer session")
        tx = self.current_tx()
        if tx is not None:
            layout.encode_name(name, ROOT_NAME_SIZE)  # validate early
            tx.pending_roots[name] = ref
            return
        with self.gate.shared():
            self.set_root_committed(name, ref)

    def set_root_committed(self, name: str, ref: int) -> None:
        """Slot write + fence; caller already holds the gate (or is GC)."""
        raw_name = layout.encode_name(name, ROOT_NAME_SIZE)
        with self._mutex:
            if ref:
                self.persist_closure(ref)
            slot = self.root_slot_by_name.get(name)
            if slot is None:
                if ref == 0:
                    return
                used = set(self.root_slot_by_name.values())
                slot = next((s for s in range(self.root_slot_count()) if s not in used), None)
                if slot is None:
                    raise RootTableFull(f"all {self.root_slot_count()} root slots in use")
            off = self._slot_offset(slot)
            # name and addr share one cache line (32-byte slot), so the pair
            # persists or vanishes atomically under the crash model
            self.dev.write(off, raw_name)
            self.dev.atomic_write_u64(off + ROOT_NAME_SIZE, ref)
            self.dev.flush_range(off, ROOT_SLOT_SIZE)
            self.dev.fence(tag="root")
            if ref == 0:
                self.roots.pop(name, None)
                self.root_slot_by_name.pop(name, None)
            else:
                self.roots[name] = ref
                self.root_slot_by_name[name] = slot

    def persist_closure(self, ref: int) -> None:
        """Automatic object persistence for a new durable root: every object
        reachable from ref must already be committed (commits are durable by
        construction, so this walk validates rather than re-logs)."""
        seen = set()
        stack = [ref]
        while stack:
            oid = stack.pop()
            if oid in seen:
                continue
            seen.add(oid)
            info = self.objects.get(oid)
            if info is None or oid not in self.live:
                raise DanglingReference(f"object {oid} reachable from the new root is not committed")
            stack.extend(t for t in self.reference_fields(info) if t not in seen)

    def get_root(self, name: str) -> int | None:
        with self.gate.shared():
            return self.roots.get(name)

    def list_roots(self) -> dict[str, int]:
        with self.gate.shared():
            return dict(self.roots)

    def load_roots(self) -> None:
        region = self.region("roots")
        raw = self.dev.read(region.offset, region.length)
        self.roots.clear()
        self.root_slot_by_name.clear()
        for slot in range(region.length // ROOT_SLOT_SIZE):
            base = slot * ROOT_SLOT_SIZE
            addr = struct.unpack_from("<Q", raw, base + ROOT_NAME_SIZE)[0]
            if addr:
                name = layout.decode_name(raw[base:base + ROOT_NAME_SIZE])
                self.roots[name] = addr
                self.root_slot_by_name[name] = slot

    # -- transactions (thread-local handle) ------------------------------------------------

    def current_tx(self):
        return getattr(self._tls, "tx", None)

    def set_current_tx(self, tx) -> None:
        self._tls.tx = tx

    def next_transaction_id(self) -> int:
        with self._mutex:
            tx_id = self.next_tx_id
            self.next_tx_id += 1
            return tx_id

    # -- public mutator facade (implemented in tx.py / gc.py) ---------------------------------

    def atomic_begin(self):
        from . import tx
        return tx.atomic_begin(self)

    def atomic_end(self, context):
        from . import tx
        return tx.atomic_end(self, context)

    def abort(self, context) -> None:
        from . import tx
        tx.abort(self, context)

    def alloc_obj(self, context, plass_id: int, array_length: int | None = None) -> int:
        from . import tx
        return tx.alloc_obj(self, context, plass_id, array_length)

    def read_field(self, ref: int, field_index: int):
        from . import tx
        return tx.read_field(self, ref, field_index)

    def write_field(self, context, ref: int, field_index: int, value) -> None:
        from . import tx
        tx.write_field(self, context, ref, field_index, value)

    def write_field_atomic(self, ref: int, field_index: int, value) -> None:
        from . import tx
        tx.write_field_atomic(self, ref, field_index, value)

    def request_gc(self):
        from . import gc
        return gc.request_gc(self)

    def register_runtime(self, vroot_provider, on_forward=None):
        from . import gc
        return gc.register_runtime(self, vroot_provider, on_forward)

    # -- stats -----------------------------------------------------------------------------------

    def heap_stats(self) -> dict:
        return {
            "object_count": self.next_header_index,
            "live_count": len(self.live),
            "plass_count": len(self.plasses),
            "log_bytes_used": self.log_tail,
            "fence_count": self.dev.fence_count,
            "active_epoch": self.active_epoch,
            "heap_size": self.dev.capacity,
            "name": self.name,
        }

    def fence_count(self) -> int:
        return self.dev.fence_count
