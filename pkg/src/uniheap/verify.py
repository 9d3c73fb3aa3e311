"""Structural verification of a heap image (fsck).

Derives the committed state the same way recovery does, but side-effect
free and lenient: every broken invariant becomes a report entry instead of
an exception. A torn log tail or a torn plass append is normal crash
residue, not a violation; a record that fails its crc *followed by* valid
records is flagged, because appends are ordered and nothing valid can sit
beyond a genuine tail.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptHeader
from .heap import FLAG_ARRAY
from .layout import (
    GC_IDLE,
    ROOT_NAME_SIZE,
    ROOT_SLOT_SIZE,
    active_suffix,
    read_header,
)
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
from .pmemsim import SimulatedNvm
from .plass import decode_plass_region
from .types import UniType, is_reference


@dataclass
class Violation:
    code: str
    location: str
    detail: str


@dataclass
class VerifyReport:
    violations: list[Violation] = field(default_factory=list)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def clean(self) -> bool:
        return not self.violations

    def add(self, code: str, location: str, detail: str) -> None:
        self.violations.append(Violation(code, location, detail))

    def bump(self, what: str, n: int = 1) -> None:
        self.checked[what] = self.checked.get(what, 0) + n

    def to_dict(self) -> dict:
        return {
            "clean": self.clean,
            "violations": [vars(v) for v in self.violations],
            "checked": dict(self.checked),
        }


def verify_device(dev: SimulatedNvm) -> VerifyReport:
    report = VerifyReport()
    try:
        header = read_header(dev)  # raises NotAHeap / VersionMismatch upward
    except CorruptHeader as exc:
        report.add("HEADER", "header", str(exc))
        return report
    report.bump("header_checks", 3)

    plass_region = header.regions["plass"]
    plasses, _ = decode_plass_region(dev.view(plass_region.offset, plass_region.length))
    report.bump("plasses", len(plasses))

    suffix = active_suffix(header.active_epoch)
    log_region = header.regions[f"log_{suffix}"]
    arr, valid = scan_segment(dev.view(log_region.offset, log_region.length))
    n = valid_prefix_len(valid)
    if n < len(valid) and bool(valid[n:].any()):
        report.add("CRC", f"log+{n * ENTRY_SIZE}",
                   f"record {n} fails its crc but valid records follow it")
    report.bump("log_records", n)

    committed = set(arr["tx_id"][:n][arr["kind"][:n] == KIND_COMMIT].tolist())
    objects: dict[int, tuple[int, int | None, np.ndarray]] = {}  # oid -> (plass_id, array_len, offsets)
    root_checkpoints: dict[int, int] = {}

    kinds = arr["kind"][:n].tolist()
    tags = arr["type_tag"][:n].tolist()
    tx_ids = arr["tx_id"][:n].tolist()
    oids = arr["object_id"][:n].tolist()
    fidxs = arr["field_index"][:n].tolist()
    values = arr["value"][:n].tolist()

    def plass_of(pid: int):
        return plasses[pid - 1] if 1 <= pid <= len(plasses) else None

    def slot_count(oid: int) -> int:
        pid, alen, _ = objects[oid]
        return alen if alen is not None else plass_of(pid).field_count

    def declared_type(oid: int, fidx: int) -> UniType | None:
        pid, alen, _ = objects[oid]
        plass = plass_of(pid)
        if alen is not None:
            return plass.element_type
        return plass.fields[fidx][1]

    for i in range(n):
        kind = kinds[i]
        oid = oids[i]
        fidx = fidxs[i]
        loc = f"log+{i * ENTRY_SIZE}"
        if kind == KIND_ALLOC:
            if tx_ids[i] not in committed:
                continue
            plass = plass_of(fidx)
            if plass is None:
                report.add("PLASS_REF", loc, f"ALLOC references unknown plass {fidx}")
                continue
            alen = values[i] if plass.is_array else None
            slots = alen if alen is not None else plass.field_count
            objects[oid] = (fidx, alen, np.zeros(slots, dtype=np.int64))
        elif kind == KIND_CHECKPOINT_HDR:
            if oid == 0:
                root_checkpoints[fidx] = values[i]
                continue
            obj_region = header.regions[f"obj_{suffix}"]
            chunk = dev.read(obj_region.offset + (oid - 1) * 16, 16)
            pid = int.from_bytes(chunk[0:4], "little")
            flags = int.from_bytes(chunk[8:12], "little")
            plass = plass_of(pid)
            if plass is None:
                report.add("PLASS_REF", loc, f"checkpoint object {oid} chunk names unknown plass {pid}")
                continue
            alen = fidx if flags & FLAG_ARRAY else None
            slots = alen if alen is not None else plass.field_count
            objects[oid] = (pid, alen, np.zeros(slots, dtype=np.int64))
        elif kind in (KIND_UPDATE, KIND_ATOMIC_UPDATE, KIND_CHECKPOINT_VAL):
            if kind == KIND_UPDATE and tx_ids[i] not in committed:
                continue
            if oid not in objects:
                report.add("ORPHAN_RECORD", loc, f"value record for unknown object {oid}")
                continue
            if not 0 <= fidx < slot_count(oid):
                report.add("FIELD_RANGE", loc, f"field {fidx} out of range for object {oid}")
                continue
            decl = declared_type(oid, fidx)
            if decl is not None and tags[i] != decl.value:
                report.add("TYPE_TAG", loc,
                           f"record tag {tags[i]} != declared {decl.name} for object {oid}.{fidx}")
                continue
            objects[oid][2][fidx] = 1 + i  # 1-based record index of the latest value

    # reference integrity over the latest committed values
    live = set(objects)
    for oid, (pid, alen, offsets) in objects.items():
        plass = plass_of(pid)
        idxs = range(len(offsets)) if alen is not None else [
            k for k, (_, t) in enumerate(plass.fields) if is_reference(t)]
        for k in idxs:
            if alen is not None and not is_reference(plass.element_type):
                break
            rec = int(offsets[k])
            if rec == 0:
                continue
            target = values[rec - 1]
            report.bump("references")
            if target and target not in live:
                report.add("DANGLING_REF", f"object {oid}.{k}",
                           f"latest committed value references missing object {target}")

    # roots: straight from the table, except mid-cleanup where the durable
    # root checkpoints are the source of truth
    roots_region = header.regions["roots"]
    raw_roots = dev.read(roots_region.offset, roots_region.length)
    mid_cleanup = header.gc_phase != GC_IDLE and header.active_epoch == header.gc_target_epoch
    for slot in range(roots_region.length // ROOT_SLOT_SIZE):
        addr = int.from_bytes(
            raw_roots[slot * ROOT_SLOT_SIZE + ROOT_NAME_SIZE:slot * ROOT_SLOT_SIZE + ROOT_NAME_SIZE + 8],
            "little")
        if mid_cleanup and slot in root_checkpoints:
            addr = root_checkpoints[slot]
        if addr == 0:
            continue
        report.bump("roots")
        if addr not in live:
            report.add("DANGLING_ROOT", f"root_slot {slot}", f"root_addr {addr} is not a live object")

    # persisted bitmap: set bits must correspond to committed objects
    bm_region = header.regions[f"bitmap_{suffix}"]
    bits = np.unpackbits(
        np.frombuffer(dev.read(bm_region.offset, bm_region.length), dtype=np.uint8),
        bitorder="little")
    for chunk_idx in np.flatnonzero(bits).tolist():
        report.bump("bitmap_bits")
        if chunk_idx + 1 not in live:
            report.add("BITMAP", f"chunk {chunk_idx}",
                       "persisted valid bit set without a committed ALLOC/checkpoint")

    report.bump("objects", len(objects))
    return report
