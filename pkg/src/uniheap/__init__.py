"""uniheap: a persistent-object heap on simulated non-volatile memory.

Language-neutral objects live in a single heap file: class descriptors
(plasses), 16-byte object headers, a durable root table and a log-structured
update region. Field updates are out-of-place log appends made visible by
durable transactions (two fences per commit, any write-set size) combined
with versioned-lock STM; a coordinated stop-the-world mark-compact collector
coalesces each live object's newest values into the other log segment. The
whole on-media format is little-endian and documented in docs/FORMAT.md so
other runtimes can share the same heap file.
"""
from . import errors
from .gc import GcReport, RuntimeHandle, register_runtime, request_gc
from .heap import Heap, ObjInfo
from .layout import Geometry
from .pmemsim import LINE_SIZE, SimulatedNvm
from .plass import Plass, array_plass_name
from .recovery import RecoveryReport, recover
from .session import (
    READ_ONLY,
    READ_WRITE,
    HeapSession,
    create_heap,
    open_heap,
)
from .tx import CommitResult, TransactionContext
from .types import (
    UniType,
    allowed_unitypes,
    decode_value,
    encode_value,
    map_foreign_type,
)
from .verify import VerifyReport, verify_device

__all__ = [
    "CommitResult",
    "GcReport",
    "Geometry",
    "Heap",
    "HeapSession",
    "LINE_SIZE",
    "ObjInfo",
    "Plass",
    "READ_ONLY",
    "READ_WRITE",
    "RecoveryReport",
    "RuntimeHandle",
    "SimulatedNvm",
    "TransactionContext",
    "UniType",
    "VerifyReport",
    "allowed_unitypes",
    "array_plass_name",
    "create_heap",
    "decode_value",
    "encode_value",
    "errors",
    "map_foreign_type",
    "open_heap",
    "recover",
    "register_runtime",
    "request_gc",
    "verify_device",
]

__version__ = "0.1.0"
