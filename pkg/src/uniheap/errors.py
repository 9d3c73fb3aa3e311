"""Exception taxonomy for the uniheap package.

Every error raised by the library derives from UniheapError so callers can
catch the whole family. I/O problems from the OS (unwritable paths and the
like) surface as plain OSError.
"""


class UniheapError(Exception):
    """Base class for all uniheap errors."""


# --- simulated device ---------------------------------------------------

class InvalidCapacity(UniheapError):
    """Device capacity is zero, negative, or not a multiple of the line size."""


class OutOfBounds(UniheapError):
    """Read/write/flush range falls outside the device."""


class Misaligned(UniheapError):
    """atomic_write_u64 offset is not 8-byte aligned."""


class SimulatedCrash(UniheapError):
    """Raised at a scheduled crash injection point; the test harness catches
    this and calls crash() on the device to materialize an outcome."""


class DeviceClosed(UniheapError):
    """Operation on a device that was closed or superseded by crash()."""


# --- heap structure ------------------------------------------------------

class NotAHeap(UniheapError):
    """File/device does not carry a valid heap magic."""


class VersionMismatch(UniheapError):
    """Heap format version is not supported by this library."""


class CorruptHeader(UniheapError):
    """Header fields violate structural invariants (region overlap, bounds)."""


class CorruptHeap(UniheapError):
    """Structural violation beyond a torn log tail, e.g. a committed record
    referencing a plass that does not exist."""


class NameTooLong(UniheapError):
    """Heap name > 31 bytes or root name > 23 bytes (UTF-8)."""


class GeometryTooLarge(UniheapError):
    """Requested region sizes do not fit the device."""


class AlreadyFormatted(UniheapError):
    """create_heap on a device that already carries a heap (no force flag)."""


class ObjectSpaceFull(UniheapError):
    """No free 16-byte header chunk left in the active object space."""


class RootTableFull(UniheapError):
    """All root slots are in use."""


# --- object model ---------------------------------------------------------

class SchemaMismatch(UniheapError):
    """init_plass with an existing name but a different field layout."""


class PlassRegionFull(UniheapError):
    """No space left to append a plass descriptor."""


class UnmappedType(UniheapError):
    """Foreign language type has no cell in the type-mapping table."""


class FieldNotFound(UniheapError):
    """field_index lookup for a name the plass does not declare."""


class IndexOutOfRange(UniheapError):
    """Field index >= field count (or >= array length)."""


class TypeMismatch(UniheapError):
    """Value does not match the declared field type or its value range."""


class UnknownPlass(UniheapError):
    """alloc_obj against a plass id that does not exist."""


class DanglingReference(UniheapError):
    """Object id whose valid-bitmap bit is clear."""


# --- transactions ----------------------------------------------------------

class TxNotActive(UniheapError):
    """Operation on a transaction that is not in the active state."""


class NestedTransaction(UniheapError):
    """atomic_begin while the calling thread already has an active context,
    or a single-field atomic write issued from inside a transaction."""


class LogFull(UniheapError):
    """Active log segment cannot hold the entries; caller should request GC."""


class ConflictRetry(UniheapError):
    """Commit validation failed; rerun the failure-atomic region."""


# --- GC ---------------------------------------------------------------------

class GcAlreadyRunning(UniheapError):
    """request_gc while a collection is in progress."""


class InvalidVroot(UniheapError):
    """A runtime reported a vroot id that is not a live object."""


# --- sessions ----------------------------------------------------------------

class LockHeld(UniheapError):
    """Another writer process holds the advisory lock file."""


class ReadOnlySession(UniheapError):
    """Fence-bearing operation attempted through a read-only session."""


class NeedsRecovery(UniheapError):
    """Read-only open of a heap that crashed mid-GC; open it read-write once
    so recovery can redo the collection."""
