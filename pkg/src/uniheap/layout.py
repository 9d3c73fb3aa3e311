"""On-media heap layout: header encoding, region table, geometry defaults.

Everything is little-endian. The header lives at offset 0; the eight data
regions follow from offset 4096. Field offsets within the header:

      0:8   magic "UNIHEAP\\0" (written last during create)
      8:4   version (currently 1)
     12:4   reserved
     16:32  heap name, NUL-padded
     48:8   heap size in bytes
     56:128 region table, 8 x {offset u64, length u64} in REGION_NAMES order
    184:8   active_epoch (even = A spaces active, odd = B)
    192:8   gc_phase (0 idle, 1 marking, 2 relocation, 3 compaction, 4 cleanup)
    200:8   next_header_index (hint; recovery recomputes from the log)
    208:8   next_plass_offset (hint; recovery revalidates by decoding)
    216:8   log_tail (hint, relative to the active segment base)
    224:8   gc_target_epoch (epoch a running GC is switching to; lets
            recovery tell a pre-flip crash from a post-flip one)

The three hint fields are persisted at clean close and at GC cleanup only;
allocation and log appends never fence the header, which is what keeps the
per-transaction fence count flat.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import CorruptHeader, GeometryTooLarge, NameTooLong, NotAHeap, VersionMismatch
from .pmemsim import LINE_SIZE, SimulatedNvm

MAGIC = b"UNIHEAP\0"
MAGIC_U64 = struct.unpack("<Q", MAGIC)[0]
VERSION = 1

HEADER_RESERVED = 4096
CHUNK_SIZE = 16
ROOT_SLOT_SIZE = 32
ROOT_NAME_SIZE = 24

REGION_NAMES = ("plass", "roots", "obj_a", "obj_b", "log_a", "log_b", "bitmap_a", "bitmap_b")

OFF_MAGIC = 0
OFF_VERSION = 8
OFF_NAME = 16
OFF_SIZE = 48
OFF_REGIONS = 56
OFF_ACTIVE_EPOCH = 184
OFF_GC_PHASE = 192
OFF_NEXT_HEADER_INDEX = 200
OFF_NEXT_PLASS_OFFSET = 208
OFF_LOG_TAIL = 216
OFF_GC_TARGET_EPOCH = 224
HEADER_SIZE = 232

GC_IDLE = 0
GC_MARKING = 1
GC_RELOCATION = 2
GC_COMPACTION = 3
GC_CLEANUP = 4


@dataclass(frozen=True)
class Region:
    offset: int
    length: int

    @property
    def end(self) -> int:
        return self.offset + self.length


@dataclass
class Geometry:
    """Region sizes; None picks the defaults for the device capacity."""
    plass_len: int = 256 * 1024
    root_len: int = 4096
    obj_space_len: int | None = None
    log_seg_len: int | None = None

    def resolve(self, capacity: int) -> dict[str, Region]:
        def align_up(v: int, a: int = LINE_SIZE) -> int:
            return (v + a - 1) // a * a

        if self.plass_len % LINE_SIZE or self.root_len % LINE_SIZE:
            raise GeometryTooLarge("plass/root region lengths must be multiples of 64")
        # 8 region boundaries may each pad up to a line for alignment
        remaining = capacity - HEADER_RESERVED - self.plass_len - self.root_len - 8 * LINE_SIZE
        if remaining <= 0:
            raise GeometryTooLarge(f"capacity {capacity} cannot hold the fixed regions")

        if self.obj_space_len is not None:
            obj_len = self.obj_space_len
            if obj_len % CHUNK_SIZE:
                raise GeometryTooLarge("object space length must be a multiple of 16")
        else:
            obj_len = (remaining // 8) // CHUNK_SIZE * CHUNK_SIZE
        chunks = obj_len // CHUNK_SIZE
        bitmap_len = align_up((chunks + 7) // 8, 8)

        if self.log_seg_len is not None:
            log_len = self.log_seg_len
        else:
            log_len = (remaining - 2 * obj_len - 2 * bitmap_len) // 2 // 8 * 8
        if log_len % 8:
            raise GeometryTooLarge("log segment length must be a multiple of 8")

        if obj_len < CHUNK_SIZE or log_len < 2 * 40:
            raise GeometryTooLarge("object space or log segment too small to be usable")

        regions: dict[str, Region] = {}
        cursor = HEADER_RESERVED
        for name, length in (
            ("plass", self.plass_len),
            ("roots", self.root_len),
            ("obj_a", obj_len),
            ("obj_b", obj_len),
            ("log_a", log_len),
            ("log_b", log_len),
            ("bitmap_a", bitmap_len),
            ("bitmap_b", bitmap_len),
        ):
            cursor = align_up(cursor)
            regions[name] = Region(cursor, length)
            cursor += length
        if cursor > capacity:
            raise GeometryTooLarge(f"regions need {cursor} bytes, device has {capacity}")
        return regions


def encode_name(name: str, size: int) -> bytes:
    raw = name.encode("utf-8")
    if not raw or len(raw) > size - 1:
        raise NameTooLong(f"name must be 1..{size - 1} bytes UTF-8, got {len(raw)}")
    if b"\0" in raw:
        raise NameTooLong("name may not contain NUL")
    return raw.ljust(size, b"\0")


def decode_name(raw: bytes) -> str:
    return raw.split(b"\0", 1)[0].decode("utf-8")


def write_header(dev: SimulatedNvm, name: str, regions: dict[str, Region]) -> None:
    """Write every header field except the magic (the caller writes that
    last, after a fence, so a half-created heap never looks valid)."""
    buf = bytearray(HEADER_SIZE)
    struct.pack_into("<I", buf, OFF_VERSION, VERSION)
    buf[OFF_NAME:OFF_NAME + 32] = encode_name(name, 32)
    struct.pack_into("<Q", buf, OFF_SIZE, dev.capacity)
    for i, rname in enumerate(REGION_NAMES):
        r = regions[rname]
        struct.pack_into("<QQ", buf, OFF_REGIONS + 16 * i, r.offset, r.length)
    dev.write(8, bytes(buf[8:]))  # leave the magic bytes zero


@dataclass
class HeaderView:
    name: str
    heap_size: int
    regions: dict[str, Region]
    active_epoch: int
    gc_phase: int
    next_header_index: int
    next_plass_offset: int
    log_tail: int
    gc_target_epoch: int


def read_header(dev: SimulatedNvm) -> HeaderView:
    raw = dev.read(0, HEADER_SIZE)
    if raw[0:8] != MAGIC:
        raise NotAHeap("magic bytes missing")
    version = struct.unpack_from("<I", raw, OFF_VERSION)[0]
    if version != VERSION:
        raise VersionMismatch(f"format version {version}, library supports {VERSION}")
    size = struct.unpack_from("<Q", raw, OFF_SIZE)[0]
    if size != dev.capacity:
        raise CorruptHeader(f"header size {size} != device capacity {dev.capacity}")
    regions = {}
    for i, rname in enumerate(REGION_NAMES):
        off, length = struct.unpack_from("<QQ", raw, OFF_REGIONS + 16 * i)
        regions[rname] = Region(off, length)
    _check_regions(regions, size)
    epoch, phase = struct.unpack_from("<QQ", raw, OFF_ACTIVE_EPOCH)
    nhi, npo, tail, target = struct.unpack_from("<QQQQ", raw, OFF_NEXT_HEADER_INDEX)
    return HeaderView(decode_name(raw[OFF_NAME:OFF_NAME + 32]), size, regions,
                      epoch, phase, nhi, npo, tail, target)


def _check_regions(regions: dict[str, Region], size: int) -> None:
    spans = []
    for name, r in regions.items():
        if r.offset < HEADER_RESERVED or r.end > size or r.length <= 0:
            raise CorruptHeader(f"region {name} [{r.offset},{r.end}) out of bounds")
        spans.append((r.offset, r.end, name))
    spans.sort()
    for (_, end_a, name_a), (start_b, _, name_b) in zip(spans, spans[1:]):
        if start_b < end_a:
            raise CorruptHeader(f"regions {name_a} and {name_b} overlap")


def active_suffix(epoch: int) -> str:
    return "a" if epoch % 2 == 0 else "b"


def inactive_suffix(epoch: int) -> str:
    return "b" if epoch % 2 == 0 else "a"
